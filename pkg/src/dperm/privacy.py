"""Privacy budgets and Gaussian noise calibration.

Two closed-form calibrations are provided. The uniform one scales one
standard deviation for noising every instance of a minibatch-sampled run:

    sigma = c * q * G * sqrt(T * ln(1/delta)) / epsilon

The per-instance one adapts to how strongly the loss scales feature noise
into gradient noise for the instance at hand (grad_scale, the operator norm
of the mixed partial), so instances that amplify noise more receive less:

    sigma_t = c * G * sqrt(T * ln(1/delta)) / (sqrt(grad_scale) * n * epsilon)

Both return the equality case of the bound: the least noise the calibration
permits. Noise is applied to features only; labels are never perturbed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PrivacyBudget",
    "CalibrationConstants",
    "NoiseScale",
    "calibrate_uniform",
    "calibrate_per_instance",
    "validate_budget",
    "gaussian_vector",
]


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) pair; epsilon > 0 and 0 < delta < 1."""

    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")

    @property
    def log_inv_delta(self) -> float:
        return math.log(1.0 / self.delta)


@dataclass(frozen=True)
class CalibrationConstants:
    """Knobs of the closed-form calibrations.

    ``c`` is the universal constant in front of both formulas and ``c1``
    bounds the proven budget range checked by :func:`validate_budget`.
    ``w_floor`` keeps the per-instance formula finite when grad_scale is
    tiny. ``infimum`` optionally divides the uniform sigma by sqrt(I) where
    I lower-bounds grad_scale; the default 1 leaves the formula untouched.
    """

    c: float = 2.0
    c1: float = 1.0
    w_floor: float = 1e-6
    infimum: float = 1.0

    def __post_init__(self) -> None:
        for name in ("c", "c1", "w_floor", "infimum"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class NoiseScale:
    """Standard deviation of per-coordinate Gaussian feature noise."""

    sigma: float

    def __post_init__(self) -> None:
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")


def calibrate_uniform(
    budget: PrivacyBudget,
    sampling_prob: float,
    steps: int,
    lipschitz: float,
    consts: CalibrationConstants = CalibrationConstants(),
) -> NoiseScale:
    """Single noise scale for a minibatch run of ``steps`` iterations."""
    if not 0.0 < sampling_prob <= 1.0:
        raise ValueError(f"sampling_prob must be in (0, 1], got {sampling_prob}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if lipschitz <= 0:
        raise ValueError(f"lipschitz must be > 0, got {lipschitz}")
    sigma = (
        consts.c
        * sampling_prob
        * lipschitz
        * math.sqrt(steps * budget.log_inv_delta)
        / budget.epsilon
        / math.sqrt(consts.infimum)
    )
    return NoiseScale(sigma)


def calibrate_per_instance(
    budget: PrivacyBudget,
    n: int,
    steps: int,
    lipschitz: float,
    grad_scale: float,
    consts: CalibrationConstants = CalibrationConstants(),
) -> NoiseScale:
    """Noise scale for one instance, shrinking as its grad_scale grows."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if lipschitz <= 0:
        raise ValueError(f"lipschitz must be > 0, got {lipschitz}")
    if grad_scale < 0:
        raise ValueError(f"grad_scale must be >= 0, got {grad_scale}")
    w = max(grad_scale, consts.w_floor)
    sigma = (
        consts.c
        * lipschitz
        * math.sqrt(steps * budget.log_inv_delta)
        / (math.sqrt(w) * n * budget.epsilon)
    )
    return NoiseScale(sigma)


def validate_budget(
    budget: PrivacyBudget,
    sampling_prob: float,
    steps: int,
    n: int | None = None,
    consts: CalibrationConstants = CalibrationConstants(),
) -> str | None:
    """Advisory check that epsilon sits inside the proven budget range.

    Returns None when epsilon < c1 * q^2 * T, otherwise a human-readable
    violation description. Runs outside the range still execute; callers
    are expected to tag their results with the returned message.
    """
    bound = consts.c1 * sampling_prob * sampling_prob * steps
    if budget.epsilon < bound:
        return None
    context = f" (n={n})" if n is not None else ""
    return (
        f"epsilon={budget.epsilon:g} outside proven range: requires "
        f"epsilon < c1*q^2*T = {bound:g}{context}"
    )


def gaussian_vector(
    dim: int, scale: NoiseScale | float, rng: np.random.Generator
) -> np.ndarray:
    """``dim`` independent N(0, sigma^2) draws from the supplied generator."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    sigma = scale.sigma if isinstance(scale, NoiseScale) else float(scale)
    return rng.normal(0.0, sigma, size=dim)
