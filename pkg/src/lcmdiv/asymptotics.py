"""Asymptotic covariance of minimum phi-divergence estimators.

All members of the family share the covariance ``(A^T A)^{-1} / N`` with
``A = D_p^{-1/2} J``, the inverse Fisher information of the multinomial
model, and the manifest probabilities follow by the delta method.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .model import (
    ModelSpec,
    ThetaLike,
    as_flat,
    eta_shift_direction,
    manifest_with_jacobian,
)


class RankDeficientError(np.linalg.LinAlgError):
    """The information matrix is singular; ``diagnostics`` says why."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class BirchDiagnostics:
    min_cell_probability: float
    rank: int
    n_params: int
    singular_values: np.ndarray
    condition_number: float
    rank_tolerance: float
    eta_shift_direction: Optional[np.ndarray] = None
    # smoothness and continuity of the inverse hold for the logistic/softmax map
    analytic_conditions: str = "satisfied by construction"

    @property
    def positive_cells(self) -> bool:
        return self.min_cell_probability > 0

    @property
    def full_rank(self) -> bool:
        return self.rank == self.n_params

    @property
    def ok(self) -> bool:
        return self.positive_cells and self.full_rank

    def as_dict(self):
        return {
            "min_cell_probability": self.min_cell_probability,
            "rank": self.rank,
            "n_params": self.n_params,
            "full_rank": self.full_rank,
            "condition_number": self.condition_number,
            "singular_values": self.singular_values.tolist(),
            "eta_shift_direction": (
                None if self.eta_shift_direction is None else self.eta_shift_direction.tolist()
            ),
            "analytic_conditions": self.analytic_conditions,
        }


def birch_diagnostics(spec: ModelSpec, theta: ThetaLike) -> BirchDiagnostics:
    """Positivity of the cells and numerical rank of the Jacobian at ``theta``."""
    p, J = manifest_with_jacobian(spec, theta)
    sv = np.linalg.svd(J, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    tol = max(J.shape) * np.finfo(float).eps * smax
    rank = int(np.sum(sv > tol))
    smin = sv[-1] if sv.size else 0.0
    cond = float(smax / smin) if smin > 0 else np.inf
    return BirchDiagnostics(
        min_cell_probability=float(p.min()),
        rank=rank,
        n_params=spec.n_params,
        singular_values=sv,
        condition_number=cond,
        rank_tolerance=float(tol),
        eta_shift_direction=eta_shift_direction(spec),
    )


def _scaled_jacobian(spec, theta):
    p, J = manifest_with_jacobian(spec, theta)
    if np.any(p <= 0):
        raise ZeroDivisionError("information matrix needs strictly positive manifest cells")
    return p, J, J / np.sqrt(p)[:, None]


def information_matrix(spec: ModelSpec, theta: ThetaLike) -> np.ndarray:
    """``A^T A`` with ``A = D_p^{-1/2} J``; the per-observation Fisher information."""
    _, _, A = _scaled_jacobian(spec, theta)
    info = A.T @ A
    return 0.5 * (info + info.T)


def _gauge_basis(spec: ModelSpec):
    # columns span {theta : (V eta)_m = 0}, removing the softmax-invariant direction
    n = spec.n_params
    if eta_shift_direction(spec) is None:
        return np.eye(n)
    constraint = np.zeros(n)
    constraint[spec.t:] = spec.V[-1]
    return linalg.null_space(constraint[None, :])


def _spd_inverse(info, spec, theta):
    try:
        factor = linalg.cho_factor(info, lower=True)
    except linalg.LinAlgError:
        diag = birch_diagnostics(spec, theta)
        raise RankDeficientError(
            f"information matrix is singular (Jacobian rank {diag.rank} < {diag.n_params})",
            diag,
        ) from None
    inv = linalg.cho_solve(factor, np.eye(info.shape[0]))
    return 0.5 * (inv + inv.T)


@dataclass
class ParameterCovariance:
    cov: np.ndarray
    se: np.ndarray
    asymptotic_cov: np.ndarray  # covariance of sqrt(N) (theta_hat - theta0)
    n: int
    gauge_fixed: bool = False


def parameter_covariance(spec: ModelSpec, theta: ThetaLike, n: int,
                         fix_eta_gauge: bool = False) -> ParameterCovariance:
    """``(A^T A)^{-1} / N`` and the standard errors.

    With ``fix_eta_gauge`` the softmax-invariant eta direction (if any) is
    held fixed at ``(V eta)_m`` and the covariance is that of the remaining
    coordinates; otherwise such a model raises :class:`RankDeficientError`.
    """
    if n < 1:
        raise ValueError("sample size must be at least 1")
    info = information_matrix(spec, theta)
    diag = birch_diagnostics(spec, theta)
    if fix_eta_gauge and diag.eta_shift_direction is not None:
        B = _gauge_basis(spec)
        inner = _spd_inverse(B.T @ info @ B, spec, theta)
        asym = B @ inner @ B.T
        gauge = True
    else:
        if not diag.full_rank:
            raise RankDeficientError(
                f"Jacobian rank {diag.rank} < t + u = {diag.n_params}", diag
            )
        asym = _spd_inverse(info, spec, theta)
        gauge = False
    cov = asym / n
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return ParameterCovariance(cov, se, asym, int(n), gauge)


def manifest_covariance(spec: ModelSpec, theta: ThetaLike, n: int,
                        fix_eta_gauge: bool = False) -> np.ndarray:
    """Delta-method covariance ``J (A^T A)^{-1} J^T / N`` of the fitted cells."""
    pc = parameter_covariance(spec, theta, n, fix_eta_gauge=fix_eta_gauge)
    _, J = manifest_with_jacobian(spec, theta)
    out = J @ pc.cov @ J.T
    return 0.5 * (out + out.T)


@dataclass
class AsymptoticsReport:
    jacobian: np.ndarray
    scaled_jacobian: np.ndarray
    info: np.ndarray
    birch: BirchDiagnostics
    n: int
    param_cov: Optional[np.ndarray] = None
    param_cov_unscaled: Optional[np.ndarray] = None
    se: Optional[np.ndarray] = None
    manifest_cov: Optional[np.ndarray] = None
    manifest_cov_unscaled: Optional[np.ndarray] = None
    gauge_fixed: bool = False
    error: Optional[str] = None
    extra: dict = field(default_factory=dict)


def asymptotics_report(spec: ModelSpec, theta: ThetaLike, n: int,
                       fix_eta_gauge: bool = True) -> AsymptoticsReport:
    """Everything above in one report; a singular information matrix is recorded, not raised."""
    as_flat(spec, theta)
    p, J, A = _scaled_jacobian(spec, theta)
    info = 0.5 * (A.T @ A + (A.T @ A).T)
    report = AsymptoticsReport(J, A, info, birch_diagnostics(spec, theta), int(n))
    try:
        pc = parameter_covariance(spec, theta, n, fix_eta_gauge=fix_eta_gauge)
    except RankDeficientError as exc:
        report.error = str(exc)
        return report
    report.param_cov = pc.cov
    report.param_cov_unscaled = pc.asymptotic_cov
    report.se = pc.se
    report.gauge_fixed = pc.gauge_fixed
    mc = J @ pc.asymptotic_cov @ J.T
    report.manifest_cov_unscaled = 0.5 * (mc + mc.T)
    report.manifest_cov = report.manifest_cov_unscaled / n
    return report
