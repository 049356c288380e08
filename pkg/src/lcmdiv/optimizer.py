"""Multistart minimisation of a divergence objective over a parameter box.

Each start draws a uniform point in the box, improves it with one
Hooke-Jeeves exploratory sweep over a random coordinate order followed by a
short line search along the displacement, and is forwarded to a quasi-Newton
run and a hybrid root solve on the gradient only if its rough value beats the
best rough value seen so far.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize, root

from .divergence import PhiFunction, divergence, empirical_distribution, gradient_weights, resolve_phi
from .model import (
    ClassWeights,
    ItemProbabilities,
    ModelSpec,
    ParameterVector,
    class_weights,
    item_probabilities,
    manifest_distribution,
    canonical_theta,
    manifest_with_jacobian,
    normalize_eta,
)

log = logging.getLogger(__name__)

LINE_PROBE_SCALES = (2.0, 4.0, 0.5, 0.25)
# relative roundoff allowance when comparing objective values of nearby points
OBJECTIVE_SLACK = 64 * np.finfo(float).eps


class OptimizationError(RuntimeError):
    """No start produced a finite objective value."""


@dataclass(frozen=True)
class MultistartConfig:
    """Settings of the multistart search.

    The box defaults to ``[-10, 10]`` for every parameter.  ``hj_initial_step``
    is a fraction of the box width per coordinate.  ``eta_reference`` fixes the
    reported position along the softmax-invariant eta direction when the
    model has one (``None`` leaves it where the optimizer stopped), and
    ``canonical_labels`` reports the lexicographically smallest of the
    label-switched copies of the optimum.
    """

    lambda_lower: np.ndarray
    lambda_upper: np.ndarray
    eta_lower: np.ndarray
    eta_upper: np.ndarray
    n_initial: int = 500
    seed: int = 0
    hj_initial_step: float = 0.05
    qn_gradient_tol: float = 1e-9
    root_residual_tol: float = 1e-9
    max_qn_iterations: int = 1000
    keep_top: Optional[int] = None
    eta_reference: Optional[float] = 0.0
    canonical_labels: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("lambda_lower", "lambda_upper", "eta_lower", "eta_upper"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.lambda_lower.shape != self.lambda_upper.shape:
            raise ValueError("lambda bounds differ in length")
        if self.eta_lower.shape != self.eta_upper.shape:
            raise ValueError("eta bounds differ in length")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bounds exceed upper bounds")
        if self.n_initial < 1:
            raise ValueError("n_initial must be at least 1")
        if min(self.qn_gradient_tol, self.root_residual_tol, self.hj_initial_step) <= 0:
            raise ValueError("tolerances and step sizes must be positive")

    @classmethod
    def for_spec(cls, spec: ModelSpec, lo: float = -10.0, hi: float = 10.0, **kwargs):
        return cls(
            lambda_lower=np.full(spec.t, lo),
            lambda_upper=np.full(spec.t, hi),
            eta_lower=np.full(spec.u, lo),
            eta_upper=np.full(spec.u, hi),
            **kwargs,
        )

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([self.lambda_lower, self.eta_lower])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([self.lambda_upper, self.eta_upper])

    @property
    def dim(self) -> int:
        return self.lambda_lower.size + self.eta_lower.size


class DivergenceObjective:
    """``theta -> D_phi(p_hat, p(theta))`` with evaluation counters.

    Returns ``inf`` where the divergence is undefined so that optimizers treat
    such points as rejected candidates.
    """

    def __init__(self, spec: ModelSpec, p_hat, phi: PhiFunction):
        self.spec = spec
        self.p_hat = np.asarray(p_hat, dtype=float)
        self.phi = phi
        self.n_evals = 0
        self.n_grads = 0

    def __call__(self, x) -> float:
        self.n_evals += 1
        p = manifest_distribution(self.spec, x)
        with np.errstate(all="ignore"):
            val = divergence(self.phi, self.p_hat, p)
        return val if np.isfinite(val) else math.inf

    def gradient(self, x) -> np.ndarray:
        """Analytic gradient; all ``inf`` where a model cell with data underflows to 0."""
        self.n_grads += 1
        p, J = manifest_with_jacobian(self.spec, x)
        if np.any((p <= 0) & (self.p_hat > 0)):
            return np.full(J.shape[1], math.inf)
        with np.errstate(all="ignore"):
            return gradient_weights(self.phi, self.p_hat, p) @ J

    def value_and_gradient(self, x):
        self.n_evals += 1
        self.n_grads += 1
        p, J = manifest_with_jacobian(self.spec, x)
        with np.errstate(all="ignore"):
            val = divergence(self.phi, self.p_hat, p)
            if not np.isfinite(val) or np.any((p <= 0) & (self.p_hat > 0)):
                return math.inf, np.zeros(J.shape[1])
            return val, gradient_weights(self.phi, self.p_hat, p) @ J

    def fresh(self) -> "DivergenceObjective":
        return DivergenceObjective(self.spec, self.p_hat, self.phi)


def _start_rng(seed: int, index: int) -> np.random.Generator:
    # substream keyed by (seed, start) so any schedule reproduces each start
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def _draw_start(config: MultistartConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = config.lower, config.upper
    return lo + (hi - lo) * rng.random(config.dim)


def generate_initial_points(config: MultistartConfig, rng=None) -> np.ndarray:
    """``n_initial`` uniform points in the box, one row per start.

    Without ``rng`` each row comes from the start's own substream, exactly the
    points :func:`multistart_fit` uses.
    """
    if rng is not None:
        return np.array([_draw_start(config, rng) for _ in range(config.n_initial)])
    return np.array(
        [_draw_start(config, _start_rng(config.seed, i)) for i in range(config.n_initial)]
    )


@dataclass
class RoughResult:
    x: np.ndarray
    value: float
    n_evals: int
    step: np.ndarray


def rough_improve(
    point,
    objective: Callable[[np.ndarray], float],
    config: MultistartConfig,
    rng: Optional[np.random.Generator] = None,
    value: Optional[float] = None,
) -> RoughResult:
    """One exploratory sweep plus a line search along the displacement.

    The sweep visits the coordinates in random order and tries ``+h`` then
    ``-h`` on each, keeping any improvement.  The line search probes
    ``x0 + s (x1 - x0)`` for ``s`` in :data:`LINE_PROBE_SCALES`.  At most
    ``2 (t + u) + 4`` objective evaluations are spent, not counting ``value``
    when it has to be computed here.
    """
    x0 = np.array(point, dtype=float)
    lo, hi = config.lower, config.upper
    f0 = objective(x0) if value is None else value
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at the starting point")
    rng = np.random.default_rng() if rng is None else rng
    step = config.hj_initial_step * (hi - lo)
    evals = 0

    x, fx = x0.copy(), f0
    for i in rng.permutation(x0.size):
        if step[i] == 0:
            continue
        base = x[i]
        for cand in (min(base + step[i], hi[i]), max(base - step[i], lo[i])):
            if cand == base:
                continue
            x[i] = cand
            fc = objective(x)
            evals += 1
            if fc < fx:
                fx = fc
                break
            x[i] = base

    if fx < f0:
        d = x - x0
        best_x, best_f = x, fx
        for s in LINE_PROBE_SCALES:
            probe = np.clip(x0 + s * d, lo, hi)
            fp = objective(probe)
            evals += 1
            if fp < best_f:
                best_x, best_f = probe, fp
        x, fx = best_x, best_f
    return RoughResult(x, fx, evals, step)


@dataclass
class FineResult:
    x: np.ndarray
    value: float
    converged: bool
    n_iter: int
    bounds_active: bool
    message: str = ""


def fine_improve(point, objective, gradient=None, config: Optional[MultistartConfig] = None,
                 value: Optional[float] = None) -> FineResult:
    """Limited-memory quasi-Newton descent (L-BFGS-B) projected onto the box.

    ``objective`` may be a :class:`DivergenceObjective`, in which case
    ``gradient`` can be omitted.  The returned value never exceeds the
    starting value.
    """
    x0 = np.array(point, dtype=float)
    if gradient is None:
        fun, jac = objective.value_and_gradient, True
    else:
        fun, jac = objective, gradient
    f0 = objective(x0) if value is None else value
    if config is None:
        bounds, gtol, maxiter = None, 1e-9, 1000
    else:
        bounds = list(zip(config.lower, config.upper))
        gtol, maxiter = config.qn_gradient_tol, config.max_qn_iterations
    res = minimize(
        fun, x0, jac=jac, method="L-BFGS-B", bounds=bounds,
        options={"gtol": gtol, "ftol": 1e-15, "maxiter": maxiter, "maxls": 50},
    )
    x = np.asarray(res.x, dtype=float)
    fx = float(objective(x))
    active = bool(
        bounds is not None and np.any((x <= config.lower) | (x >= config.upper))
    )
    if not fx <= f0:
        return FineResult(x0, f0, False, int(res.nit), False, "no decrease")
    return FineResult(x, fx, bool(res.success), int(res.nit), active, str(res.message))


@dataclass
class RefineResult:
    x: np.ndarray
    value: float
    gradient_norm: float
    accepted: bool
    message: str = ""


def _fd_jacobian(gradient, step=1e-7):
    def jac(x):
        x = np.asarray(x, dtype=float)
        g0 = gradient(x)
        out = np.empty((x.size, x.size))
        for i in range(x.size):
            h = step * max(1.0, abs(x[i]))
            xh = x.copy()
            xh[i] += h
            out[:, i] = (gradient(xh) - g0) / h
        return out
    return jac


def stationary_refine(point, objective, gradient, config: Optional[MultistartConfig] = None,
                      value: Optional[float] = None) -> RefineResult:
    """Solve ``grad D = 0`` with Powell's hybrid method from ``point``.

    The root is kept only if its residual is within ``root_residual_tol``, it
    stays in the box, and it does not raise the objective beyond roundoff
    (``OBJECTIVE_SLACK`` relative); otherwise the input
    point comes back with ``accepted=False``.
    """
    x0 = np.array(point, dtype=float)
    f0 = objective(x0) if value is None else value
    g0 = np.asarray(gradient(x0), dtype=float)
    tol = 1e-9 if config is None else config.root_residual_tol
    g0_norm = float(np.linalg.norm(g0))
    if not np.all(np.isfinite(g0)):
        return RefineResult(x0, f0, math.inf, False, "gradient not finite")
    if g0_norm <= tol:
        return RefineResult(x0, f0, g0_norm, False, "already stationary")

    def safe_gradient(x):
        g = np.asarray(gradient(x), dtype=float)
        return np.where(np.isfinite(g), g, 1e10)

    try:
        with np.errstate(all="ignore"):
            sol = root(safe_gradient, x0, jac=_fd_jacobian(safe_gradient), method="hybr",
                       options={"xtol": 1e-14})
    except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - defensive
        return RefineResult(x0, f0, g0_norm, False, f"solver error: {exc}")
    x = np.asarray(sol.x, dtype=float)
    if not np.all(np.isfinite(x)):
        return RefineResult(x0, f0, g0_norm, False, "solver diverged")
    g_norm = float(np.linalg.norm(gradient(x)))
    fx = float(objective(x))
    if config is not None and np.any((x < config.lower) | (x > config.upper)):
        return RefineResult(x0, f0, g0_norm, False, "root outside the box")
    if not g_norm <= tol:
        return RefineResult(x0, f0, g0_norm, False, f"residual {g_norm:.3g} above tolerance")
    # allow for evaluation roundoff; a stationary point a few ulps higher is the same point
    if not fx <= f0 + OBJECTIVE_SLACK * max(1.0, abs(f0)):
        return RefineResult(x0, f0, g0_norm, False, "root raises the objective")
    return RefineResult(x, fx, g_norm, True, str(sol.message))


@dataclass
class StartTrace:
    index: int
    initial: np.ndarray
    initial_value: float
    rough: Optional[np.ndarray] = None
    rough_value: float = math.inf
    rough_evals: int = 0
    forwarded: bool = False
    fine_value: Optional[float] = None
    fine_converged: Optional[bool] = None
    bounds_active: Optional[bool] = None
    refined: Optional[np.ndarray] = None
    refined_value: Optional[float] = None
    refine_accepted: Optional[bool] = None
    gradient_norm: Optional[float] = None
    failed: bool = False
    n_evals: int = 0
    n_grads: int = 0


@dataclass
class FitResult:
    """Best point found by :func:`multistart_fit` together with the full trace."""

    spec: ModelSpec
    phi: PhiFunction
    theta_hat: Optional[ParameterVector]
    objective_value: float
    gradient_norm: float
    converged: bool
    starts: list = field(default_factory=list)
    best_start: Optional[int] = None
    n_objective_evals: int = 0
    n_gradient_evals: int = 0
    success: bool = True
    message: str = ""
    projected_gradient_norm: float = math.nan

    @property
    def item_probabilities(self) -> ItemProbabilities:
        return item_probabilities(self.spec, self.theta_hat)

    @property
    def class_weights(self) -> ClassWeights:
        return class_weights(self.spec, self.theta_hat)

    @property
    def n_forwarded(self) -> int:
        return sum(s.forwarded for s in self.starts)


def _rough_phase(objective, config, index):
    obj = objective.fresh()
    rng = _start_rng(config.seed, index)
    x0 = _draw_start(config, rng)
    f0 = obj(x0)
    trace = StartTrace(index=index, initial=x0, initial_value=f0)
    if not np.isfinite(f0):
        trace.failed = True
    else:
        rough = rough_improve(x0, obj, config, rng=rng, value=f0)
        trace.rough, trace.rough_value, trace.rough_evals = rough.x, rough.value, rough.n_evals
    trace.n_evals = obj.n_evals
    return trace


def _fine_phase(objective, config, trace):
    obj = objective.fresh()
    fine = fine_improve(trace.rough, obj, config=config, value=trace.rough_value)
    trace.fine_value = fine.value
    trace.fine_converged = fine.converged
    trace.bounds_active = fine.bounds_active
    ref = stationary_refine(fine.x, obj, obj.gradient, config, value=fine.value)
    trace.refined = ref.x
    trace.refined_value = ref.value
    trace.refine_accepted = ref.accepted
    trace.gradient_norm = float(np.linalg.norm(obj.gradient(ref.x)))
    trace.n_evals += obj.n_evals
    trace.n_grads += obj.n_grads
    return trace


def projected_gradient(x, grad, config: MultistartConfig) -> np.ndarray:
    """Zero the components that push against an active bound."""
    g = np.array(grad, dtype=float)
    x = np.asarray(x, dtype=float)
    g[(x <= config.lower) & (g > 0)] = 0.0
    g[(x >= config.upper) & (g < 0)] = 0.0
    return g


def _run(func, items, n_jobs):
    if n_jobs == 1:
        return [func(item) for item in items]
    return Parallel(n_jobs=n_jobs)(delayed(func)(item) for item in items)


def multistart_fit(spec: ModelSpec, counts, family, config: MultistartConfig) -> FitResult:
    """Minimise ``D_phi(p_hat, p(theta))`` over the box with the multistart scheme.

    ``family`` is a power index ``a`` (number or ``"2/3"``-style string) or a
    :class:`PhiFunction`.  Results are identical for any ``n_jobs``.
    """
    phi = resolve_phi(family)
    if config.dim != spec.n_params:
        raise ValueError(f"config box has {config.dim} parameters, model has {spec.n_params}")
    p_hat = empirical_distribution(counts)
    if p_hat.size != spec.n_cells:
        raise ValueError(f"counts have {p_hat.size} cells, model has {spec.n_cells}")
    objective = DivergenceObjective(spec, p_hat, phi)

    traces = _run(lambda i: _rough_phase(objective, config, i), range(config.n_initial),
                  config.n_jobs)

    # the gate is inherently sequential; it only reads rough values
    d_in = math.inf
    forwarded = []
    for tr in traces:
        if tr.failed or not tr.rough_value < d_in:
            continue
        d_in = tr.rough_value
        tr.forwarded = True
        forwarded.append(tr)
    if config.keep_top is not None:
        for tr in forwarded[: max(0, len(forwarded) - config.keep_top)]:
            tr.forwarded = False
        forwarded = forwarded[-config.keep_top:] if config.keep_top else []

    done = _run(lambda tr: _fine_phase(objective, config, tr), forwarded, config.n_jobs)
    by_index = {tr.index: tr for tr in done}
    traces = [by_index.get(tr.index, tr) for tr in traces]

    n_evals = sum(tr.n_evals for tr in traces)
    n_grads = sum(tr.n_grads for tr in traces)
    candidates = [tr for tr in traces if tr.forwarded and np.isfinite(tr.refined_value)]
    if not candidates:
        return FitResult(spec, phi, None, math.inf, math.inf, False, traces, None,
                         n_evals, n_grads, False, "no start produced a finite objective")
    best = min(candidates, key=lambda tr: (tr.refined_value, tr.index))

    theta = ParameterVector.from_flat(spec, best.refined)
    if config.canonical_labels:
        theta = canonical_theta(spec, theta, config.eta_reference)
    elif config.eta_reference is not None:
        theta = normalize_eta(spec, theta, config.eta_reference)
    value = objective(theta.flat)
    grad_norm = float(np.linalg.norm(objective.gradient(theta.flat)))
    # the reported copy may leave the box; project at the optimizer's own point
    pg = projected_gradient(best.refined, objective.gradient(best.refined), config)
    pg_norm = float(np.linalg.norm(pg))
    return FitResult(
        spec=spec,
        phi=phi,
        theta_hat=theta,
        objective_value=value,
        gradient_norm=grad_norm,
        converged=pg_norm <= config.root_residual_tol,
        starts=traces,
        best_start=best.index,
        n_objective_evals=n_evals + objective.n_evals,
        n_gradient_evals=n_grads + objective.n_grads,
        projected_gradient_norm=pg_norm,
    )
