"""phi-divergences between empirical and model pattern distributions.

The generic evaluator handles empty cells with ``0 phi(0/0) = 0`` and
``0 phi(p/0) = p * L`` where ``L = lim phi(x)/x``.  The Cressie-Read power
family has a closed form used as an independent route.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelSpec, ThetaLike, manifest_distribution, manifest_jacobian

_BRANCH_EPS = 1e-9


@dataclass(frozen=True)
class PhiFunction:
    """Convex ``phi`` with ``phi(1) = 0`` and its first two derivatives.

    ``at_zero`` is ``lim_{x->0+} phi(x)`` and ``limit_slope`` is
    ``lim_{x->inf} phi(x)/x``; either may be ``inf``.
    """

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    d2phi: Callable[[np.ndarray], np.ndarray]
    limit_slope: float
    at_zero: float
    a: float | None = None

    def __call__(self, x):
        return self.phi(x)


def _branch(a: float) -> str:
    if abs(a) < _BRANCH_EPS:
        return "kl"
    if abs(a + 1.0) < _BRANCH_EPS:
        return "reverse_kl"
    return "power"


def phi_power(a: float, x):
    """Cressie-Read ``phi_a(x)`` for ``x > 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("phi_a is defined for x > 0 only")
    branch = _branch(a)
    if branch == "kl":
        out = x * np.log(x) - x + 1.0
    elif branch == "reverse_kl":
        out = -np.log(x) + x - 1.0
    else:
        out = (x ** (a + 1.0) - x - a * (x - 1.0)) / (a * (a + 1.0))
    return out if out.ndim else float(out)


def _dphi_power(a, x):
    x = np.asarray(x, dtype=float)
    branch = _branch(a)
    if branch == "kl":
        return np.log(x)
    if branch == "reverse_kl":
        return 1.0 - 1.0 / x
    return (x ** a - 1.0) / a


def _d2phi_power(a, x):
    return np.asarray(x, dtype=float) ** (a - 1.0)


def power_phi(a: float) -> PhiFunction:
    """The power-divergence member with index ``a`` as a :class:`PhiFunction`."""
    a = float(a)
    branch = _branch(a)
    if branch == "kl":
        at_zero, slope = 1.0, math.inf
    elif branch == "reverse_kl":
        at_zero, slope = math.inf, 1.0
    else:
        at_zero = 1.0 / (a + 1.0) if a > -1.0 else math.inf
        slope = math.inf if a > 0 else -1.0 / a
    return PhiFunction(
        name=f"power({a:g})",
        phi=lambda x: phi_power(a, x),
        dphi=lambda x: _dphi_power(a, x),
        d2phi=lambda x: _d2phi_power(a, x),
        limit_slope=slope,
        at_zero=at_zero,
        a=a,
    )


def phi_normalize(phi: PhiFunction) -> PhiFunction:
    """Return ``psi(x) = phi(x) - phi'(1) (x - 1)``, which has ``psi'(1) = 0``."""
    s = float(phi.dphi(np.array(1.0)))
    if s == 0.0:
        return phi
    return PhiFunction(
        name=f"{phi.name}-normalized",
        phi=lambda x: phi.phi(x) - s * (np.asarray(x, dtype=float) - 1.0),
        dphi=lambda x: phi.dphi(x) - s,
        d2phi=phi.d2phi,
        limit_slope=phi.limit_slope - s,
        at_zero=phi.at_zero + s,
        a=phi.a,
    )


def empirical_distribution(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("counts must have a positive total")
    return counts / total


def _check_pair(p_hat, p):
    p_hat = np.asarray(p_hat, dtype=float)
    p = np.asarray(p, dtype=float)
    if p_hat.shape != p.shape:
        raise ValueError(f"length mismatch: {p_hat.shape} vs {p.shape}")
    return p_hat, p


def _times(scale, value):
    # 0 * inf := 0 for the empty-cell conventions
    with np.errstate(invalid="ignore"):
        return np.where(scale == 0, 0.0, scale * value)


def divergence(phi: PhiFunction, p_hat, p) -> float:
    """``sum_nu p_nu phi(p_hat_nu / p_nu)`` with the empty-cell conventions."""
    p_hat, p = _check_pair(p_hat, p)
    pos = p > 0
    ratio = np.divide(p_hat, p, out=np.zeros_like(p), where=pos)
    interior = pos & (p_hat > 0)
    vals = np.zeros_like(p)
    vals[interior] = phi.phi(ratio[interior])
    vals[pos & ~interior] = phi.at_zero
    terms = np.where(pos, _times(p, vals), _times(p_hat, phi.limit_slope))
    return float(np.sum(terms))


def power_divergence(a: float, p_hat, p) -> float:
    """Closed-form power divergence ``D_a(p_hat, p)``."""
    p_hat, p = _check_pair(p_hat, p)
    a = float(a)
    branch = _branch(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        if branch == "kl":
            return _kl(p_hat, p)
        if branch == "reverse_kl":
            return _kl(p, p_hat)
        num = np.where(p_hat > 0, p_hat ** (a + 1.0) / p ** a, 0.0 if a > -1 else np.inf)
        num = np.where((p_hat == 0) & (p == 0), 0.0, num)
    return float((np.sum(num) - 1.0) / (a * (a + 1.0)))


def _kl(q, r):
    # sum q log(q / r) with 0 log 0 = 0 and q log(q/0) = inf
    support = q > 0
    if np.any(support & (r <= 0)):
        return math.inf
    return float(np.sum(q[support] * np.log(q[support] / r[support])))


def log_likelihood(counts, spec: ModelSpec, theta: ThetaLike) -> float:
    counts = np.asarray(counts, dtype=float)
    if counts.sum() < 1:
        raise ValueError("counts total must be at least 1")
    p = manifest_distribution(spec, theta)
    seen = counts > 0
    if np.any(p[seen] <= 0):
        return -math.inf
    return float(np.sum(counts[seen] * np.log(p[seen])))


def gradient_weights(phi: PhiFunction, p_hat, p) -> np.ndarray:
    """Per-cell factors ``phi(r) - r phi'(r)`` with ``r = p_hat / p``."""
    p_hat, p = _check_pair(p_hat, p)
    if np.any((p <= 0) & (p_hat > 0)):
        raise ZeroDivisionError("model cell with zero probability has positive empirical mass")
    out = np.zeros_like(p)
    interior = (p > 0) & (p_hat > 0)
    r = p_hat[interior] / p[interior]
    out[interior] = phi.phi(r) - r * phi.dphi(r)
    # r -> 0: r phi'(r) -> 0 for convex phi with finite phi(0)
    out[(p > 0) & (p_hat == 0)] = phi.at_zero
    return out


def objective_gradient(spec: ModelSpec, phi: PhiFunction, p_hat, theta: ThetaLike) -> np.ndarray:
    """Gradient of ``D_phi(p_hat, p(theta))`` with respect to ``s_j``."""
    p = manifest_distribution(spec, theta)
    J = manifest_jacobian(spec, theta)
    return gradient_weights(phi, p_hat, p) @ J


def resolve_phi(family) -> PhiFunction:
    """Accept a power index (number or string like ``"2/3"``) or a :class:`PhiFunction`."""
    if isinstance(family, PhiFunction):
        return family
    if isinstance(family, str):
        from fractions import Fraction

        family = float(Fraction(family.strip()))
    return power_phi(float(family))
