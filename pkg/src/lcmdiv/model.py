"""Linear-logistic latent class model for binary items.

Item probabilities are logistic transforms of ``x_ji = sum_r q_jir lambda_r + c_ji``
and class weights are a softmax of ``z_j = sum_r v_jr eta_r + d_j``.  The manifest
distribution is the mixture of product-Bernoulli laws over all ``2**k`` response
patterns, ordered so that item 1 is the most significant bit of ``nu - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy.special import expit, softmax

MAX_ITEMS = 24


class ModelError(ValueError):
    """Raised when a model specification or parameter vector is malformed."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Fixed design of a constrained latent class model.

    Parameters
    ----------
    m, k : int
        Number of latent classes and of binary items.
    Q : ndarray, shape (t, m, k)
        One design matrix per lambda parameter.
    C : ndarray, shape (m, k)
        Offsets of the item linear predictors.
    V : ndarray, shape (m, u)
        Design matrix of the class-weight predictors.
    d : ndarray, shape (m,)
        Offsets of the class-weight predictors.
    """

    m: int
    k: int
    Q: np.ndarray
    C: np.ndarray
    V: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for name in ("Q", "C", "V", "d"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def build(cls, Q, V, C=None, d=None):
        """Build a spec inferring ``m`` and ``k``; ``C`` and ``d`` default to zero."""
        Q = np.asarray(Q, dtype=float)
        V = np.asarray(V, dtype=float)
        if Q.ndim != 3:
            raise ModelError("Q must have shape (t, m, k)")
        _, m, k = Q.shape
        if V.ndim == 1 and V.size == 0:
            V = np.zeros((m, 0))
        C = np.zeros((m, k)) if C is None else C
        d = np.zeros(m) if d is None else d
        spec = cls(m=m, k=k, Q=Q, C=C, V=V, d=d)
        report = validate_spec(spec)
        if not report.ok:
            raise ModelError("; ".join(report.errors))
        return spec

    @property
    def t(self) -> int:
        return self.Q.shape[0]

    @property
    def u(self) -> int:
        return self.V.shape[1] if self.V.ndim == 2 else 0

    @property
    def n_params(self) -> int:
        return self.t + self.u

    @property
    def n_cells(self) -> int:
        return 2 ** self.k

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            self.m == other.m
            and self.k == other.k
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("Q", "C", "V", "d")
            )
        )

    __hash__ = None


@dataclass(frozen=True)
class ValidationReport:
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self):
        return self.ok


def validate_spec(spec: ModelSpec) -> ValidationReport:
    """Check dimensions and finiteness of ``spec`` without raising."""
    errors = []
    m, k = spec.m, spec.k
    if not isinstance(m, (int, np.integer)) or m < 1:
        errors.append(f"m must be a positive integer, got {m!r}")
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_ITEMS:
        errors.append(f"k must be an integer in [1, {MAX_ITEMS}], got {k!r}")
    if errors:
        return ValidationReport(errors)

    Q, C, V, d = spec.Q, spec.C, spec.V, spec.d
    if Q.ndim != 3 or Q.shape[1:] != (m, k):
        errors.append(f"Q must have shape (t, {m}, {k}), got {Q.shape}")
    if C.shape != (m, k):
        errors.append(f"C must have shape ({m}, {k}), got {C.shape}")
    if V.ndim != 2 or V.shape[0] != m:
        errors.append(f"V must have shape ({m}, u), got {V.shape}")
    if d.shape != (m,):
        errors.append(f"d must have shape ({m},), got {d.shape}")
    if errors:
        return ValidationReport(errors)
    if spec.t + spec.u < 1:
        errors.append("model has no free parameters (t + u = 0)")
    for name in ("Q", "C", "V", "d"):
        if not np.all(np.isfinite(getattr(spec, name))):
            errors.append(f"{name} contains non-finite entries")
    return ValidationReport(errors)


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Free parameters ``(lambda_1..lambda_t, eta_1..eta_u)``."""

    lam: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float).reshape(-1)
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(eta))):
            raise ModelError("parameter vector has non-finite entries")
        lam.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_flat(cls, spec_or_t, flat):
        t = spec_or_t.t if isinstance(spec_or_t, ModelSpec) else int(spec_or_t)
        flat = np.asarray(flat, dtype=float).reshape(-1)
        return cls(flat[:t], flat[t:])

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.lam, self.eta])

    def __len__(self):
        return self.lam.size + self.eta.size

    def __getitem__(self, j):
        # s_j ordering: lambdas first, then etas
        return self.flat[j]

    def __eq__(self, other):
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return np.array_equal(self.lam, other.lam) and np.array_equal(self.eta, other.eta)

    __hash__ = None


ThetaLike = Union[ParameterVector, Sequence[float], np.ndarray]


def as_flat(spec: ModelSpec, theta: ThetaLike) -> np.ndarray:
    flat = theta.flat if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=float)
    flat = flat.reshape(-1)
    if flat.size != spec.n_params:
        raise ModelError(
            f"theta has {flat.size} entries but the model has t + u = {spec.n_params}"
        )
    return flat


class ItemProbabilities(NamedTuple):
    p: np.ndarray  # (m, k)
    x: np.ndarray  # (m, k) linear predictors


class ClassWeights(NamedTuple):
    w: np.ndarray  # (m,)
    z: np.ndarray  # (m,) linear predictors


def pattern_of(nu: int, k: int) -> np.ndarray:
    """Response pattern for 1-based index ``nu``; item 1 is the leading bit."""
    if not 1 <= nu <= 2 ** k:
        raise IndexError(f"pattern index {nu} outside 1..{2 ** k}")
    return (((nu - 1) >> np.arange(k - 1, -1, -1)) & 1).astype(np.int8)


def index_of(y) -> int:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("patterns must be 0/1 vectors")
    k = y.size
    return int(y @ (1 << np.arange(k - 1, -1, -1))) + 1


@lru_cache(maxsize=32)
def _pattern_table(k):
    nu = np.arange(2 ** k, dtype=np.int64)
    table = ((nu[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.int8)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=32)
def _float_patterns(k):
    table = _pattern_table(k).astype(float)
    table.setflags(write=False)
    return table


def all_patterns(k: int) -> np.ndarray:
    """All ``2**k`` patterns as a ``(2**k, k)`` int8 array in canonical order."""
    return _pattern_table(k).copy()


def item_probabilities(spec: ModelSpec, theta: ThetaLike) -> ItemProbabilities:
    flat = as_flat(spec, theta)
    lam = flat[: spec.t]
    x = np.tensordot(lam, spec.Q, axes=(0, 0)) + spec.C if spec.t else spec.C.copy()
    return ItemProbabilities(expit(x), x)


def class_weights(spec: ModelSpec, theta: ThetaLike) -> ClassWeights:
    flat = as_flat(spec, theta)
    eta = flat[spec.t:]
    z = spec.V @ eta + spec.d
    # scipy's softmax subtracts the max before exponentiating
    return ClassWeights(softmax(z), z)


def conditional_pattern_prob(ip: ItemProbabilities, j: int, y) -> float:
    """Probability of pattern ``y`` given class ``j`` (1-based)."""
    p = ip.p
    if not 1 <= j <= p.shape[0]:
        raise IndexError(f"class index {j} outside 1..{p.shape[0]}")
    y = np.asarray(y).reshape(-1)
    if y.size != p.shape[1]:
        raise ValueError(f"pattern has {y.size} items, model has {p.shape[1]}")
    pj = p[j - 1]
    return float(np.prod(np.where(y == 1, pj, 1.0 - pj)))


def _class_conditionals(spec, ip, patterns):
    # (2**k, m) matrix of Pr(y_nu | class j); products, not log-space
    x = ip.x
    p1 = ip.p
    p0 = expit(-x)
    cond = np.ones((patterns.shape[0], spec.m))
    for i in range(spec.k):
        cond *= np.where(patterns[:, i, None] == 1, p1[None, :, i], p0[None, :, i])
    return cond


def manifest_distribution(spec: ModelSpec, theta: ThetaLike) -> np.ndarray:
    """Probabilities of all ``2**k`` response patterns."""
    ip = item_probabilities(spec, theta)
    cw = class_weights(spec, theta)
    cond = _class_conditionals(spec, ip, _pattern_table(spec.k))
    return cond @ cw.w


def manifest_jacobian(spec: ModelSpec, theta: ThetaLike) -> np.ndarray:
    """Jacobian of the manifest distribution, rows are cells, columns follow ``s_j``."""
    return manifest_with_jacobian(spec, theta)[1]


def manifest_with_jacobian(spec: ModelSpec, theta: ThetaLike):
    """Manifest distribution and its Jacobian from a single pass."""
    ip = item_probabilities(spec, theta)
    cw = class_weights(spec, theta)
    Y = _float_patterns(spec.k)
    weighted = _class_conditionals(spec, ip, Y) * cw.w  # w_j Pr(y_nu | C_j)

    J = np.empty((Y.shape[0], spec.n_params))
    for a in range(spec.t):
        Qa = spec.Q[a]
        # sum_i q_jia (y_nui - p_ji)
        score = Y @ Qa.T - np.sum(Qa * ip.p, axis=1)
        J[:, a] = np.sum(weighted * score, axis=1)
    if spec.u:
        centered = spec.V - cw.w @ spec.V
        J[:, spec.t:] = weighted @ centered
    return weighted.sum(axis=1), J


def eta_shift_direction(spec: ModelSpec):
    """Direction ``delta`` with ``V @ delta == 1``, or None.

    When it exists the class weights are invariant along ``eta + c * delta``.
    """
    if spec.u == 0:
        return None
    ones = np.ones(spec.m)
    delta, *_ = np.linalg.lstsq(spec.V, ones, rcond=None)
    if np.allclose(spec.V @ delta, ones, atol=1e-10):
        return delta
    return None


def normalize_eta(spec: ModelSpec, theta: ThetaLike, reference: float = 0.0) -> ParameterVector:
    """Move ``eta`` along the softmax-invariant direction so that ``(V eta)_m == reference``.

    The manifest distribution is unchanged.  Models without such a direction
    are returned as-is.
    """
    flat = as_flat(spec, theta).copy()
    delta = eta_shift_direction(spec)
    if delta is not None:
        eta = flat[spec.t:]
        shift = spec.V[-1] @ eta - reference
        flat[spec.t:] = eta - shift * delta
    return ParameterVector.from_flat(spec, flat)


@dataclass(frozen=True)
class Relabeling:
    """A class permutation that the design maps onto itself.

    Class ``j`` of the relabeled model plays the role of class
    ``classes[j]`` of the original; parameter ``r`` moves to position
    ``lam_perm[r]`` (``eta_perm`` likewise).
    """

    classes: tuple
    lam_perm: tuple
    eta_perm: tuple

    def apply(self, spec: ModelSpec, theta: ThetaLike) -> ParameterVector:
        flat = as_flat(spec, theta)
        lam = np.empty(spec.t)
        eta = np.empty(spec.u)
        lam[list(self.lam_perm)] = flat[: spec.t]
        eta[list(self.eta_perm)] = flat[spec.t:]
        return ParameterVector(lam, eta)


def _match_columns(permuted, original):
    # bijection s -> sigma(s) with permuted[s] == original[sigma(s)], or None
    used = set()
    sigma = []
    for cand in permuted:
        hit = next(
            (r for r, ref in enumerate(original) if r not in used and np.array_equal(cand, ref)),
            None,
        )
        if hit is None:
            return None
        used.add(hit)
        sigma.append(hit)
    return tuple(sigma)


def relabelings(spec: ModelSpec, max_classes: int = 8) -> list:
    """All class permutations under which the design is invariant (identity first).

    Brute force over ``m!`` permutations, so only models with at most
    ``max_classes`` classes are searched; larger models return the identity.
    """
    from itertools import permutations

    identity = Relabeling(tuple(range(spec.m)), tuple(range(spec.t)), tuple(range(spec.u)))
    if spec.m > max_classes:
        return [identity]
    found = [identity]
    for perm in permutations(range(spec.m)):
        perm = list(perm)
        if perm == sorted(perm):
            continue
        if not (np.array_equal(spec.C[perm], spec.C) and np.array_equal(spec.d[perm], spec.d)):
            continue
        lam_perm = _match_columns([Qr[perm] for Qr in spec.Q], list(spec.Q))
        if lam_perm is None:
            continue
        eta_perm = _match_columns(list(spec.V[perm].T), list(spec.V.T))
        if eta_perm is None:
            continue
        found.append(Relabeling(tuple(perm), lam_perm, eta_perm))
    return found


def canonical_theta(spec: ModelSpec, theta: ThetaLike, eta_reference=0.0,
                    symmetries=None) -> ParameterVector:
    """Representative of ``theta`` among its label-switched copies.

    Every copy is put in the eta gauge ``(V eta)_m == eta_reference`` (skipped
    when ``eta_reference`` is None) and the lexicographically smallest
    ``(lambda, eta)`` wins.  All copies share the same manifest distribution.
    """
    symmetries = relabelings(spec) if symmetries is None else symmetries
    best = None
    for sym in symmetries:
        cand = sym.apply(spec, theta)
        if eta_reference is not None:
            cand = normalize_eta(spec, cand, eta_reference)
        if best is None or tuple(cand.flat) < tuple(best.flat):
            best = cand
    return best
