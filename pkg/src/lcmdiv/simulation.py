"""Monte Carlo study of minimum power-divergence estimators.

Datasets are multinomial draws from a true model, optionally contaminated
by a second model with the same items.  Each replicate is fitted for every
family index and the estimates are summarised by mean squared error and
squared bias of ``lambda``, ``eta``, the item probabilities and the class
weights.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .divergence import resolve_phi
from .model import (
    ModelSpec,
    ParameterVector,
    class_weights,
    eta_shift_direction,
    item_probabilities,
    manifest_distribution,
)
from .optimizer import MultistartConfig, multistart_fit

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "N", "a",
    "mse_lambda", "mse_eta", "mse_theta", "mse_p", "mse_w", "mse_pw",
    "bias_lambda", "bias_eta", "bias_theta", "bias_p", "bias_w", "bias_pw",
    "n_success", "n_failed", "mse_pw_se",
]


@dataclass(frozen=True)
class ContaminationSpec:
    """Mixture weight ``epsilon`` on a contaminating model."""

    spec: ModelSpec
    theta: ParameterVector
    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class SimulationPlan:
    spec: ModelSpec
    theta0: ParameterVector
    sample_sizes: Sequence[int]
    family_indices: Sequence
    replicates: int
    seed: int = 0
    contamination: Optional[ContaminationSpec] = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if any(int(n) < 1 for n in self.sample_sizes):
            raise ValueError("sample sizes must be at least 1")
        if self.contamination is not None and self.contamination.spec.k != self.spec.k:
            raise ValueError("contaminating model must have the same number of items")


def sample_counts(p, n: int, rng: np.random.Generator) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    return rng.multinomial(int(n), p / p.sum())


def sample_dataset(spec: ModelSpec, theta0, n: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial counts of size ``n`` over the ``2**k`` patterns."""
    if n < 1:
        raise ValueError("sample size must be at least 1")
    return sample_counts(manifest_distribution(spec, theta0), n, rng)


def contaminated_distribution(spec: ModelSpec, theta, contamination: ContaminationSpec) -> np.ndarray:
    """``(1 - eps) p_base + eps p_contaminant`` cellwise."""
    if contamination.spec.k != spec.k:
        raise ValueError(
            f"item counts differ: base k={spec.k}, contaminant k={contamination.spec.k}"
        )
    eps = contamination.epsilon
    base = manifest_distribution(spec, theta)
    other = manifest_distribution(contamination.spec, contamination.theta)
    if eps == 0.0:
        return base
    if eps == 1.0:
        return other
    return (1.0 - eps) * base + eps * other


def mix_distributions(base, other, epsilon: float) -> np.ndarray:
    base = np.asarray(base, dtype=float)
    other = np.asarray(other, dtype=float)
    if base.shape != other.shape:
        raise ValueError("distributions differ in length")
    return (1.0 - epsilon) * base + epsilon * other


@dataclass
class SummaryEntry:
    N: int
    a: str
    n_success: int
    n_failed: int
    mse_lambda_each: np.ndarray
    mse_eta_each: np.ndarray
    mse_lambda: float
    mse_eta: float
    mse_theta: float
    mse_p: float
    mse_w: float
    mse_pw: float
    bias_lambda: float
    bias_eta: float
    bias_theta: float
    bias_p: float
    bias_w: float
    bias_pw: float
    pw_errors: np.ndarray = field(repr=False, default=None)
    objective_values: np.ndarray = field(repr=False, default=None)

    @property
    def valid(self) -> bool:
        return self.n_success > 0

    @property
    def mse_pw_se(self) -> float:
        e = self.pw_errors
        if e is None or e.size < 2:
            return math.nan
        return float(np.std(e, ddof=1) / math.sqrt(e.size))

    def row(self) -> dict:
        out = {name: getattr(self, name) for name in CSV_COLUMNS if name != "mse_pw_se"}
        out["mse_pw_se"] = self.mse_pw_se
        return out


def _weighted(first, second, n_first, n_second):
    total = n_first + n_second
    return (n_first * first + n_second * second) / total if total else math.nan


def mse_summary(estimates, p_estimates, w_estimates, theta0, spec: ModelSpec,
                N: int = 0, a="", n_failed: int = 0, objective_values=None) -> SummaryEntry:
    """Aggregate per-replicate estimates into mse and squared-bias figures.

    ``estimates`` has one row of ``(lambda, eta)`` per successful replicate,
    ``p_estimates`` is ``(n, m, k)`` and ``w_estimates`` is ``(n, m)``.  The
    joint figures weight the ``m k`` item probabilities and the ``m`` class
    weights by their counts.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    n = est.shape[0]
    if n == 0:
        raise ValueError("mse_summary needs at least one replicate")
    theta0 = theta0.flat if isinstance(theta0, ParameterVector) else np.asarray(theta0, float)
    t, u, m, k = spec.t, spec.u, spec.m, spec.k
    P = np.asarray(p_estimates, dtype=float).reshape(n, m, k)
    W = np.asarray(w_estimates, dtype=float).reshape(n, m)
    p0 = item_probabilities(spec, theta0).p
    w0 = class_weights(spec, theta0).w

    dev, dev_p, dev_w = est - theta0, P - p0, W - w0
    mse_each = (dev ** 2).mean(axis=0)
    bias_each = dev.mean(axis=0) ** 2
    mse_p_cells = (dev_p ** 2).mean(axis=0)
    mse_w_cells = (dev_w ** 2).mean(axis=0)
    bias_p_cells = dev_p.mean(axis=0) ** 2
    bias_w_cells = dev_w.mean(axis=0) ** 2

    def split(v):
        lam = float(v[:t].mean()) if t else math.nan
        eta = float(v[t:].mean()) if u else math.nan
        both = _weighted(lam if t else 0.0, eta if u else 0.0, t, u)
        return lam, eta, both

    mse_lam, mse_eta, mse_theta = split(mse_each)
    bias_lam, bias_eta, bias_theta = split(bias_each)
    mse_p, mse_w = float(mse_p_cells.mean()), float(mse_w_cells.mean())
    bias_p, bias_w = float(bias_p_cells.mean()), float(bias_w_cells.mean())
    mse_pw = _weighted(mse_p, mse_w, m * k, m)
    bias_pw = _weighted(bias_p, bias_w, m * k, m)

    per_rep_p = (dev_p ** 2).reshape(n, -1).mean(axis=1)
    per_rep_w = (dev_w ** 2).mean(axis=1)
    pw_errors = (m * k * per_rep_p + m * per_rep_w) / (m * (k + 1))

    return SummaryEntry(
        N=int(N), a=str(a), n_success=n, n_failed=int(n_failed),
        mse_lambda_each=mse_each[:t], mse_eta_each=mse_each[t:],
        mse_lambda=mse_lam, mse_eta=mse_eta, mse_theta=mse_theta,
        mse_p=mse_p, mse_w=mse_w, mse_pw=mse_pw,
        bias_lambda=bias_lam, bias_eta=bias_eta, bias_theta=bias_theta,
        bias_p=bias_p, bias_w=bias_w, bias_pw=bias_pw,
        pw_errors=pw_errors,
        objective_values=None if objective_values is None else np.asarray(objective_values),
    )


def _invalid_entry(spec, N, a, n_failed):
    nan = math.nan
    return SummaryEntry(
        N=int(N), a=str(a), n_success=0, n_failed=int(n_failed),
        mse_lambda_each=np.full(spec.t, nan), mse_eta_each=np.full(spec.u, nan),
        mse_lambda=nan, mse_eta=nan, mse_theta=nan, mse_p=nan, mse_w=nan, mse_pw=nan,
        bias_lambda=nan, bias_eta=nan, bias_theta=nan, bias_p=nan, bias_w=nan, bias_pw=nan,
        pw_errors=np.empty(0), objective_values=np.empty(0),
    )


@dataclass
class SimulationSummary:
    entries: list

    def entry(self, N, a) -> SummaryEntry:
        label = a_label(a)
        for e in self.entries:
            if e.N == int(N) and e.a == label:
                return e
        raise KeyError((N, a))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for e in self.entries:
            writer.writerow({k: _fmt(v) for k, v in e.row().items()})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def a_label(a) -> str:
    if isinstance(a, str):
        return a.strip()
    return format(float(a), "g")


def _float_key(a) -> int:
    phi = resolve_phi(a)
    if phi.a is None:
        return int.from_bytes(phi.name.encode()[:8].ljust(8, b"\0"), "little")
    return int(np.float64(phi.a).view(np.uint64))


def replicate_seeds(seed: int, N: int, a, index: int):
    """Independent seeds for the dataset and for the optimizer of one replicate.

    The dataset seed ignores ``a`` so every family index sees the same samples.
    """
    data = np.random.SeedSequence([int(seed), int(N), int(index)])
    opt = np.random.SeedSequence([int(seed), int(N), _float_key(a), int(index)])
    return data, int(opt.generate_state(1, np.uint64)[0])


def _replicate(plan, config, fitter, N, a, index):
    data_seed, opt_seed = replicate_seeds(plan.seed, N, a, index)
    rng = np.random.default_rng(data_seed)
    if plan.contamination is None:
        counts = sample_dataset(plan.spec, plan.theta0, N, rng)
    else:
        counts = sample_counts(
            contaminated_distribution(plan.spec, plan.theta0, plan.contamination), N, rng
        )
    try:
        fit = fitter(plan.spec, counts, a, replace(config, seed=opt_seed, n_jobs=1))
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("replicate N=%s a=%s l=%s failed: %s", N, a, index, exc)
        return None
    if fit is None or getattr(fit, "theta_hat", None) is None:
        return None
    theta = fit.theta_hat
    return (
        theta.flat,
        item_probabilities(plan.spec, theta).p,
        class_weights(plan.spec, theta).w,
        float(getattr(fit, "objective_value", math.nan)),
    )


def study_config(plan: SimulationPlan, config: MultistartConfig) -> MultistartConfig:
    """Report estimates in the truth's eta gauge and without relabeling."""
    ref = None
    if eta_shift_direction(plan.spec) is not None:
        ref = float(plan.spec.V[-1] @ plan.theta0.eta)
    return replace(config, eta_reference=ref, canonical_labels=False)


def run_study(plan: SimulationPlan, config: MultistartConfig,
              fitter: Optional[Callable] = None, n_jobs: int = 1,
              progress: Optional[Callable] = None) -> SimulationSummary:
    """Fit every replicate for every ``(N, a)`` and summarise.

    ``fitter(spec, counts, a, config)`` defaults to :func:`multistart_fit` and
    must return an object with ``theta_hat`` (None marks a failed replicate).
    Results do not depend on ``n_jobs``.
    """
    fitter = multistart_fit if fitter is None else fitter
    config = study_config(plan, config)
    tasks = [
        (int(N), a, l)
        for N in plan.sample_sizes
        for a in plan.family_indices
        for l in range(plan.replicates)
    ]
    run = delayed(_replicate)
    if n_jobs == 1:
        results = []
        for i, (N, a, l) in enumerate(tasks):
            results.append(_replicate(plan, config, fitter, N, a, l))
            if progress is not None:
                progress(i + 1, len(tasks))
    else:
        results = Parallel(n_jobs=n_jobs)(run(plan, config, fitter, N, a, l) for N, a, l in tasks)

    entries = []
    for N in plan.sample_sizes:
        for a in plan.family_indices:
            rows = [r for (tn, ta, _), r in zip(tasks, results) if tn == int(N) and ta is a]
            ok = [r for r in rows if r is not None]
            failed = len(rows) - len(ok)
            if not ok:
                entries.append(_invalid_entry(plan.spec, N, a_label(a), failed))
                continue
            entries.append(
                mse_summary(
                    [r[0] for r in ok], [r[1] for r in ok], [r[2] for r in ok],
                    plan.theta0, plan.spec, N=N, a=a_label(a), n_failed=failed,
                    objective_values=[r[3] for r in ok],
                )
            )
    return SimulationSummary(entries)
