"""Command line entry point ``lcmdiv``.

Exit status: 0 success, 1 usage error, 2 data or model error, 3 optimization
failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as lio
from .asymptotics import asymptotics_report, birch_diagnostics
from .model import ModelError, ParameterVector, eta_shift_direction, validate_spec
from .optimizer import MultistartConfig, multistart_fit
from .simulation import run_study

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_OPTIM = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _family(text):
    try:
        lio.parse_family(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcmdiv", description="Minimum power-divergence estimation "
                     "for constrained latent class models with binary items.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="multistart fit plus asymptotic standard errors")
    fit.add_argument("--model", required=True)
    fit.add_argument("--data", required=True)
    fit.add_argument("--a", required=True, type=_family,
                     help="power index; rational literals such as 2/3 are accepted")
    fit.add_argument("--starts", type=int, default=500)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--bounds", type=float, nargs=2, metavar=("LO", "HI"), default=(-10.0, 10.0))
    fit.add_argument("--jobs", type=int, default=1)
    fit.add_argument("--out", required=True)

    se = sub.add_parser("se", help="asymptotic covariance at given parameters")
    se.add_argument("--model", required=True)
    se.add_argument("--theta", required=True)
    se.add_argument("--n", type=int, required=True)
    se.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", help="run a simulation plan and write the CSV summary")
    sim.add_argument("--plan", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--jobs", type=int, default=None, help="overrides the plan's n_jobs")

    val = sub.add_parser("validate", help="check a model and its Birch conditions")
    val.add_argument("--model", required=True)
    val.add_argument("--theta")
    val.add_argument("--seed", type=int, default=0)
    return parser


def _read(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"{path}: cannot read: {exc.strerror}") from None


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _load_model(path):
    text = _read(path)
    return lio.parse_model_spec(text, os.fspath(path)), text


def cmd_fit(args) -> int:
    spec, model_text = _load_model(args.model)
    data_text = _read(args.data)
    counts = lio.parse_counts(data_text, spec.k, os.fspath(args.data))
    lo, hi = args.bounds
    if not lo < hi:
        raise UsageError("lcmdiv fit: error: --bounds needs LO < HI")
    if args.starts < 1:
        raise UsageError("lcmdiv fit: error: --starts must be at least 1")
    config = MultistartConfig.for_spec(spec, lo, hi, n_initial=args.starts, seed=args.seed,
                                       n_jobs=args.jobs)
    fit = multistart_fit(spec, counts, args.a, config)
    n = int(counts.sum())
    report = asymptotics_report(spec, fit.theta_hat, n) if fit.success else None
    doc = lio.result_document(
        fit, report, family_literal=args.a,
        model_input=lio.input_record(args.model, model_text),
        data_input=lio.input_record(args.data, data_text),
        n=n, seed=args.seed, bounds=(lo, hi), n_starts=args.starts,
    )
    _write(args.out, lio.dump_result(doc))
    if not fit.success:
        print(f"lcmdiv fit: optimization failed: {fit.message}", file=sys.stderr)
        return EXIT_OPTIM
    return EXIT_OK


def cmd_se(args) -> int:
    spec, model_text = _load_model(args.model)
    theta_text = _read(args.theta)
    theta = lio.parse_theta(theta_text, spec, os.fspath(args.theta))
    if args.n < 1:
        raise UsageError("lcmdiv se: error: --n must be at least 1")
    report = asymptotics_report(spec, theta, args.n)
    doc = {
        "inputs": {"model": lio.input_record(args.model, model_text),
                   "theta": lio.input_record(args.theta, theta_text)},
        "theta": lio.theta_to_dict(theta),
        "asymptotics": lio.asymptotics_to_dict(report, spec.t),
    }
    _write(args.out, lio.dump_result(doc))
    if report.error:
        print(f"lcmdiv se: {report.error}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_simulate(args) -> int:
    text = _read(args.plan)
    plan, config, n_jobs = lio.parse_plan(text, Path(args.plan).parent, os.fspath(args.plan))
    if args.jobs is not None:
        n_jobs = args.jobs
    summary = run_study(plan, config, n_jobs=n_jobs)
    _write(args.out, summary.to_csv())
    if any(e.n_success == 0 for e in summary.entries):
        print("lcmdiv simulate: some (N, a) cells have no successful replicate", file=sys.stderr)
        return EXIT_OPTIM
    return EXIT_OK


def cmd_validate(args) -> int:
    spec, _ = _load_model(args.model)
    if args.theta:
        theta = lio.parse_theta(_read(args.theta), spec, os.fspath(args.theta))
    else:
        rng = np.random.default_rng(args.seed)
        theta = ParameterVector(rng.uniform(-3, 3, spec.t), rng.uniform(-3, 3, spec.u))
    birch = birch_diagnostics(spec, theta)
    shift = eta_shift_direction(spec)
    out = {
        "valid": validate_spec(spec).ok,
        "m": spec.m, "k": spec.k, "t": spec.t, "u": spec.u,
        "theta": lio.theta_to_dict(theta),
        "birch": birch.as_dict(),
        # rank lost only to the softmax-invariant eta direction
        "identified_up_to_eta_shift": birch.rank == spec.n_params - (shift is not None),
    }
    print(lio.dump_result(out), end="")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "se": cmd_se, "simulate": cmd_simulate, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, ValueError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"lcmdiv: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:
        # --help exits 0 through argparse
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
