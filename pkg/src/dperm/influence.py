"""Per-instance contribution estimates and the noise-gating predicate.

The contribution of an instance is the first-order estimate of how the
optimum would move if that instance were dropped:

    c = (1/n) * H^{-1} grad_theta(z, theta)

with H the dataset-averaged parameter Hessian at a near-optimal reference
model. H is factorized once (Cholesky) and reused for every solve; an
explicit inverse is never formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dataset import DataInstance, Dataset
from .models import LossModel

__all__ = ["HessianOperator", "InfluenceReport", "assemble_hessian", "influence", "threshold_check"]


@dataclass(frozen=True)
class HessianOperator:
    """Averaged Hessian with a cached Cholesky factorization of H + damping*I."""

    matrix: np.ndarray
    damping: float
    auto_escalated: bool
    _factor: tuple = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (H + damping*I) x = rhs through the cached factorization."""
        return cho_solve(self._factor, rhs)


@dataclass(frozen=True)
class InfluenceReport:
    """Contribution vector plus the gate verdict for one instance.

    ``gated`` is True exactly when ratio_norm lies within
    [exp(-epsilon), exp(epsilon)], i.e. the instance's effect on the model
    is small enough that no noise is needed.
    """

    contribution: np.ndarray
    ratio_norm: float
    gated: bool


def assemble_hessian(
    model: LossModel, theta_ref: np.ndarray, ds: Dataset, damping: float = 0.0
) -> HessianOperator:
    """Average the per-instance Hessians at ``theta_ref`` and factorize.

    If H + damping*I is not positive definite, damping is raised to
    |smallest eigenvalue| + 1e-4 (the applied value is recorded on the
    operator). A failure after escalation raises RuntimeError.
    """
    if ds.n < 1:
        raise ValueError("dataset must be nonempty")
    if damping < 0:
        raise ValueError(f"damping must be >= 0, got {damping}")
    m = model.param_dim
    H = np.zeros((m, m))
    for z in ds:
        H += model.hessian_theta(theta_ref, z)
    H /= ds.n
    H = 0.5 * (H + H.T)  # guard against accumulation asymmetry

    applied = damping
    escalated = False
    try:
        factor = cho_factor(H + applied * np.eye(m), lower=True)
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(H)[0])
        applied = max(damping, abs(lam_min) + 1e-4)
        escalated = True
        try:
            factor = cho_factor(H + applied * np.eye(m), lower=True)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(
                f"Hessian factorization failed even with damping {applied:g}"
            ) from exc
    return HessianOperator(matrix=H, damping=applied, auto_escalated=escalated, _factor=factor)


def influence(
    hess: HessianOperator,
    model: LossModel,
    theta_ref: np.ndarray,
    z: DataInstance,
    n: int,
) -> np.ndarray:
    """Contribution vector c = (1/n) H^{-1} grad_theta(z, theta_ref)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    g = model.grad_theta(theta_ref, z)
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return np.zeros_like(g)
    c = hess.solve(g) / n
    residual = np.linalg.norm(
        (hess.matrix + hess.damping * np.eye(hess.dim)) @ (n * c) - g
    )
    if residual > 1e-8 * gnorm:
        raise RuntimeError(
            f"influence solve residual {residual:.3e} exceeds 1e-8 * ||grad|| = {1e-8 * gnorm:.3e}"
        )
    return c


def threshold_check(
    contribution: np.ndarray,
    theta_g: np.ndarray,
    epsilon: float,
    mode: str = "literal",
    theta_floor: float = 1e-12,
) -> InfluenceReport:
    """Decide whether an instance's contribution is small enough to skip noise.

    Forms the elementwise ratio (c_j + theta_j) / theta_j, with parameters of
    magnitude below ``theta_floor`` replaced by a signed floor (sign of zero
    taken as +) so the division is always defined. ``ratio_norm`` is the
    2-norm of the ratio vector; "normalized" mode divides it by sqrt(m) so a
    zero contribution sits at 1 regardless of dimension.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if theta_floor <= 0:
        raise ValueError(f"theta_floor must be > 0, got {theta_floor}")
    if mode not in ("literal", "normalized"):
        raise ValueError(f"unknown mode {mode!r}")
    c = np.asarray(contribution, dtype=float)
    theta = np.asarray(theta_g, dtype=float)
    if c.shape != theta.shape:
        raise ValueError(f"shape mismatch: {c.shape} vs {theta.shape}")
    sign = np.where(theta < 0.0, -1.0, 1.0)
    safe = np.where(np.abs(theta) < theta_floor, sign * theta_floor, theta)
    ratio = (c + safe) / safe
    norm = float(np.linalg.norm(ratio))
    if mode == "normalized":
        norm /= math.sqrt(c.size)
    gated = math.exp(-epsilon) <= norm <= math.exp(epsilon)
    return InfluenceReport(contribution=c, ratio_norm=norm, gated=gated)
