"""File formats: model specs, pattern counts, parameter files, result documents
and simulation plans.

Model specs and results are UTF-8 JSON; counts are ``pattern,count`` CSV lines
with item 1 as the leftmost character.  Parse errors carry the source name and
the offending key or line.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from datetime import datetime, timezone
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ModelError, ModelSpec, ParameterVector, validate_spec

MODEL_KEYS = ("m", "k", "t", "u", "Q", "C", "V", "d")
BUNDLED_PREFIX = "bundled:"


class ParseError(ModelError):
    """Malformed input document; ``where`` names the source and key or line."""

    def __init__(self, message, source=None, key=None, line=None):
        self.source, self.key, self.line = source, key, line
        where = source or "<input>"
        if line is not None:
            where = f"{where}:{line}"
        if key is not None:
            where = f"{where}: key {key!r}"
        super().__init__(f"{where}: {message}")


def bundled_path(name: str) -> Path:
    """Path of a fixture shipped in ``lcmdiv/data``."""
    path = Path(str(resources.files("lcmdiv") / "data" / name))
    if not path.exists():
        raise FileNotFoundError(f"no bundled file named {name!r}")
    return path


def resolve_path(ref: str, base_dir=None) -> Path:
    if ref.startswith(BUNDLED_PREFIX):
        return bundled_path(ref[len(BUNDLED_PREFIX):])
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return path


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_json(text, source):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, source, line=exc.lineno) from None


def _matrix(value, shape, source, key):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError("not a numeric array", source, key) from None
    if arr.shape != shape:
        raise ParseError(f"expected shape {shape}, got {arr.shape}", source, key)
    if not np.all(np.isfinite(arr)):
        raise ParseError("entries must be finite", source, key)
    return arr


def _int(doc, key, source):
    v = doc.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError("must be an integer", source, key)
    if v < (1 if key in ("m", "k") else 0):
        raise ParseError("out of range", source, key)
    return v


def model_from_dict(doc, source=None) -> ModelSpec:
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object", source)
    unknown = sorted(set(doc) - set(MODEL_KEYS))
    if unknown:
        raise ParseError("unknown key", source, unknown[0])
    missing = [key for key in MODEL_KEYS if key not in doc]
    if missing:
        raise ParseError("missing key", source, missing[0])
    m, k, t, u = (_int(doc, key, source) for key in ("m", "k", "t", "u"))
    Q = doc["Q"]
    if not isinstance(Q, list) or len(Q) != t:
        raise ParseError(f"expected a list of t={t} matrices", source, "Q")
    Qs = [_matrix(q, (m, k), source, f"Q[{r}]") for r, q in enumerate(Q)]
    spec = ModelSpec(
        m=m, k=k,
        Q=np.stack(Qs) if Qs else np.zeros((0, m, k)),
        C=_matrix(doc["C"], (m, k), source, "C"),
        V=_matrix(doc["V"], (m, u), source, "V") if u else np.zeros((m, 0)),
        d=_matrix(doc["d"], (m,), source, "d"),
    )
    report = validate_spec(spec)
    if not report.ok:
        raise ParseError("; ".join(report.errors), source)
    return spec


def parse_model_spec(text: str, source: Optional[str] = None) -> ModelSpec:
    """Parse a model document; unknown keys and shape mismatches are errors."""
    return model_from_dict(_load_json(text, source), source)


def model_to_dict(spec: ModelSpec) -> dict:
    return {
        "m": spec.m, "k": spec.k, "t": spec.t, "u": spec.u,
        "Q": spec.Q.tolist(), "C": spec.C.tolist(), "V": spec.V.tolist(), "d": spec.d.tolist(),
    }


def serialize_model_spec(spec: ModelSpec) -> str:
    return json.dumps(model_to_dict(spec)) + "\n"


def parse_counts(text: str, k: int, source: Optional[str] = None) -> np.ndarray:
    """Counts in pattern order from ``pattern,count`` lines.

    Blank lines are ignored, patterns may appear in any order, and missing
    patterns count zero.
    """
    counts = np.zeros(2 ** k, dtype=np.int64)
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ParseError("expected 'pattern,count'", source, line=lineno)
        pattern, value = parts
        if len(pattern) != k or set(pattern) - {"0", "1"}:
            raise ParseError(f"pattern must be {k} characters of 0/1, got {pattern!r}",
                             source, line=lineno)
        if pattern in seen:
            raise ParseError(f"duplicate pattern {pattern} (first on line {seen[pattern]})",
                             source, line=lineno)
        try:
            c = int(value)
        except ValueError:
            raise ParseError(f"count must be an integer, got {value!r}", source, line=lineno) from None
        if c < 0:
            raise ParseError("negative count", source, line=lineno)
        seen[pattern] = lineno
        counts[int(pattern, 2)] = c
    if counts.sum() < 1:
        raise ParseError("total count must be at least 1", source)
    return counts


def serialize_counts(counts, k: int) -> str:
    counts = np.asarray(counts)
    if counts.shape != (2 ** k,):
        raise ValueError(f"expected {2 ** k} counts")
    return "".join(f"{nu:0{k}b},{int(c)}\n" for nu, c in enumerate(counts))


def theta_to_dict(theta: ParameterVector) -> dict:
    return {"lambda": theta.lam.tolist(), "eta": theta.eta.tolist()}


def theta_from_dict(doc, spec: ModelSpec, source=None) -> ParameterVector:
    if isinstance(doc, dict) and "theta" in doc and "lambda" not in doc:
        doc = doc["theta"]
    if not isinstance(doc, dict):
        raise ParseError("parameter document must be an object with 'lambda' and 'eta'", source)
    unknown = sorted(set(doc) - {"lambda", "eta"})
    if unknown:
        raise ParseError("unknown key", source, unknown[0])
    lam = _matrix(doc.get("lambda", []), (spec.t,), source, "lambda")
    eta = _matrix(doc.get("eta", []), (spec.u,), source, "eta")
    return ParameterVector(lam, eta)


def parse_theta(text: str, spec: ModelSpec, source: Optional[str] = None) -> ParameterVector:
    """Parameters from ``{"lambda": [...], "eta": [...]}`` or a result document."""
    return theta_from_dict(_load_json(text, source), spec, source)


def parse_family(literal) -> tuple:
    """``(a, literal)`` for a power index given as ``"2/3"``, ``"0.6667"`` or a number."""
    text = str(literal).strip()
    try:
        a = float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a real or rational literal: {literal!r}") from None
    if not math.isfinite(a):
        raise ValueError(f"family index must be finite: {literal!r}")
    return a, text


def _finite_or_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _clean(obj):
    # json cannot carry inf/nan; numpy scalars need unwrapping
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return _finite_or_none(float(obj))
    return obj


def trace_summary(fit) -> dict:
    starts = fit.starts
    best = None if fit.best_start is None else starts[fit.best_start]
    return {
        "n_starts": len(starts),
        "n_forwarded": fit.n_forwarded,
        "n_failed_starts": sum(bool(s.failed) for s in starts),
        "max_rough_evals": max((s.rough_evals for s in starts), default=0),
        "best_start": fit.best_start,
        "best_rough_value": None if best is None else best.rough_value,
        "best_fine_value": None if best is None else best.fine_value,
        "best_refined_value": None if best is None else best.refined_value,
        "best_refine_accepted": None if best is None else best.refine_accepted,
        "best_bounds_active": None if best is None else best.bounds_active,
        "n_objective_evals": fit.n_objective_evals,
        "n_gradient_evals": fit.n_gradient_evals,
    }


def _se_split(se, t):
    return {"lambda": se[:t], "eta": se[t:]}


def asymptotics_to_dict(report, t: int) -> dict:
    """Standard errors, covariance and Birch diagnostics of an asymptotics report."""
    return _clean({
        "n": report.n,
        "gauge_fixed": report.gauge_fixed,
        "birch": report.birch.as_dict(),
        "error": report.error,
        "se": None if report.se is None else _se_split(report.se, t),
        "covariance": report.param_cov,
        "manifest_covariance_diagonal": (
            None if report.manifest_cov is None else np.diag(report.manifest_cov)
        ),
    })


def input_record(path, text) -> dict:
    return {"path": None if path is None else os.fspath(path), "sha256": sha256_text(text)}


def result_document(fit, report, *, family_literal: str, model_input: dict,
                    data_input: dict, n: int, seed: int, bounds, n_starts: int,
                    timestamp: Optional[str] = None) -> dict:
    """Assemble the result document of a fit; see :func:`dump_result`."""
    from . import __version__

    spec = fit.spec
    theta = fit.theta_hat
    asym = None if report is None else asymptotics_to_dict(report, spec.t)
    doc = {
        "tool": {"name": "lcmdiv", "version": __version__},
        "created": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "inputs": {"model": model_input, "data": data_input, "N": int(n)},
        "family": {"a": fit.phi.a, "literal": family_literal, "phi": fit.phi.name},
        "optimizer": {"starts": int(n_starts), "seed": int(seed), "bounds": list(bounds)},
        "success": fit.success,
        "message": fit.message,
        "theta": None if theta is None else theta_to_dict(theta),
        "p": None if theta is None else fit.item_probabilities.p,
        "w": None if theta is None else fit.class_weights.w,
        "objective": fit.objective_value,
        "gradient_norm": fit.gradient_norm,
        "projected_gradient_norm": fit.projected_gradient_norm,
        "converged": fit.converged,
        "trace": trace_summary(fit),
        "asymptotics": asym,
    }
    return _clean(doc)


def dump_result(doc: dict) -> str:
    """Deterministic JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def load_result(text: str, source: Optional[str] = None) -> dict:
    doc = _load_json(text, source)
    if not isinstance(doc, dict) or "theta" not in doc:
        raise ParseError("not a result document", source)
    return doc


def strip_timestamp(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k != "created"}


PLAN_KEYS = {"model", "theta0", "sample_sizes", "a", "replicates", "seed",
             "contamination", "optimizer", "n_jobs"}
OPTIMIZER_KEYS = {"starts", "bounds", "keep_top"}


def _model_ref(ref, base_dir, source, key):
    if isinstance(ref, dict):
        return model_from_dict(ref, f"{source}[{key}]")
    if not isinstance(ref, str):
        raise ParseError("must be a path or an inline model", source, key)
    path = resolve_path(ref, base_dir)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}", source, key) from None
    return parse_model_spec(text, os.fspath(path))


def parse_plan(text: str, base_dir=None, source: Optional[str] = None):
    """Simulation plan document -> ``(SimulationPlan, MultistartConfig, n_jobs)``.

    Model references are paths relative to ``base_dir`` or ``bundled:NAME``.
    """
    from .optimizer import MultistartConfig
    from .simulation import ContaminationSpec, SimulationPlan

    doc = _load_json(text, source)
    if not isinstance(doc, dict):
        raise ParseError("plan must be a JSON object", source)
    unknown = sorted(set(doc) - PLAN_KEYS)
    if unknown:
        raise ParseError("unknown key", source, unknown[0])
    for key in ("model", "theta0", "sample_sizes", "a", "replicates"):
        if key not in doc:
            raise ParseError("missing key", source, key)
    spec = _model_ref(doc["model"], base_dir, source, "model")
    theta0 = theta_from_dict(doc["theta0"], spec, source)
    labels = []
    for a in doc["a"]:
        try:
            labels.append(parse_family(a)[1])
        except ValueError as exc:
            raise ParseError(str(exc), source, "a") from None
    contamination = None
    if doc.get("contamination") is not None:
        c = doc["contamination"]
        if not isinstance(c, dict) or set(c) - {"model", "theta", "epsilon"}:
            raise ParseError("expected keys model, theta, epsilon", source, "contamination")
        cspec = _model_ref(c.get("model"), base_dir, source, "contamination.model")
        try:
            contamination = ContaminationSpec(
                cspec, theta_from_dict(c.get("theta"), cspec, source), float(c.get("epsilon"))
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), source, "contamination") from None
    opt = doc.get("optimizer", {}) or {}
    if set(opt) - OPTIMIZER_KEYS:
        raise ParseError("unknown optimizer setting", source, sorted(set(opt) - OPTIMIZER_KEYS)[0])
    lo, hi = opt.get("bounds", (-10.0, 10.0))
    try:
        plan = SimulationPlan(
            spec=spec, theta0=theta0,
            sample_sizes=[int(n) for n in doc["sample_sizes"]],
            family_indices=labels,
            replicates=int(doc["replicates"]),
            seed=int(doc.get("seed", 0)),
            contamination=contamination,
        )
        config = MultistartConfig.for_spec(
            spec, float(lo), float(hi),
            n_initial=int(opt.get("starts", 500)), keep_top=opt.get("keep_top"),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), source) from None
    return plan, config, int(doc.get("n_jobs", 1))


def load_bundled_model(name: str) -> ModelSpec:
    path = bundled_path(name)
    return parse_model_spec(path.read_text(encoding="utf-8"), os.fspath(path))


def load_bundled_counts(name: str, k: int) -> np.ndarray:
    path = bundled_path(name)
    return parse_counts(path.read_text(encoding="utf-8"), k, os.fspath(path))
