"""Training loops: non-private SGD, the private trainers, and baselines.

Randomness contract
-------------------
Every trainer derives three independent generator streams from
``config.seed``: ``[seed, 0]`` drives batch/instance selection, ``[seed, 1]``
drives noise, and ``[seed, 2]`` drives parameter initialization. A trainer is
therefore a pure function of its arguments; rerunning with identical inputs
reproduces every draw, and a private trainer with its noise forced to zero
walks exactly the trajectory of the non-private loop under the same seed.

All private trainers clip each per-example gradient to the model's
Lipschitz bound before averaging.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dataset import DataInstance, Dataset
from .influence import HessianOperator, influence, threshold_check
from .models import LossModel
from .privacy import (
    CalibrationConstants,
    PrivacyBudget,
    calibrate_per_instance,
    calibrate_uniform,
    gaussian_vector,
)

__all__ = [
    "TrainConfig",
    "StepRecord",
    "FitResult",
    "TrainOutcome",
    "clip_to_norm",
    "train_sgd",
    "train_data_perturbation",
    "train_gated_perturbation",
    "train_gradient_perturbation",
    "train_output_perturbation",
    "output_noise_scale",
    "step_log_to_csv",
]

POLISH_MAX_ITER = 100_000
POLISH_GRAD_TOL = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Shared knobs of the iterative trainers.

    ``steps`` is the total iteration count T. The gated trainer runs
    ``rounds`` global rounds of ``local_steps`` iterations each and requires
    rounds * local_steps == steps (rounds defaults to steps // local_steps).
    ``noise_mode`` selects whether the data-perturbation trainer draws one
    noise vector per instance up front ("fixed") or redraws for the selected
    instances at every step ("fresh").
    """

    steps: int
    sampling_prob: float = 0.05
    learning_rate: float | None = None
    local_steps: int = 10
    rounds: int | None = None
    seed: int = 0
    noise_mode: str = "fixed"

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 < self.sampling_prob <= 1.0:
            raise ValueError(f"sampling_prob must be in (0, 1], got {self.sampling_prob}")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.local_steps < 1:
            raise ValueError(f"local_steps must be >= 1, got {self.local_steps}")
        if self.rounds is not None and self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.noise_mode not in ("fixed", "fresh"):
            raise ValueError(f"noise_mode must be 'fixed' or 'fresh', got {self.noise_mode!r}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def resolved_rounds(self) -> int:
        rounds = self.rounds if self.rounds is not None else self.steps // self.local_steps
        if rounds < 1 or rounds * self.local_steps != self.steps:
            raise ValueError(
                f"rounds * local_steps must equal steps "
                f"({rounds} * {self.local_steps} != {self.steps})"
            )
        return rounds


@dataclass(frozen=True)
class StepRecord:
    """One iteration of a training loop.

    ``gated`` is True for a gate-passed (noise-free) step of the gated
    trainer, False for a noised step, and None where the gate does not apply.
    ``w`` is the mixed-partial norm used to scale per-instance noise, when one
    was computed. ``loss`` is the trainer's objective after the update.
    """

    iteration: int
    indices: tuple[int, ...]
    gated: bool | None
    sigma: float
    w: float | None
    loss: float


@dataclass(frozen=True)
class FitResult:
    """Output of the non-private trainer."""

    theta: np.ndarray
    objective: float
    grad_norm: float
    converged: bool
    loss_trace: tuple[float, ...]
    step_log: tuple[StepRecord, ...]


@dataclass(frozen=True)
class TrainOutcome:
    """Output of a private trainer.

    ``d_priv`` holds the perturbed instances where noise was applied and the
    originals elsewhere. ``sigma`` is the run's representative noise scale
    (per-step values live in ``step_log``).
    """

    theta_priv: np.ndarray
    d_priv: Dataset
    step_log: tuple[StepRecord, ...]
    loss_trace: tuple[float, ...]
    sigma: float

    @property
    def fraction_noised(self) -> float:
        if not self.step_log:
            return 0.0
        return sum(1 for r in self.step_log if r.gated is False) / len(self.step_log)


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    return (
        np.random.default_rng([seed, 0]),
        np.random.default_rng([seed, 1]),
        np.random.default_rng([seed, 2]),
    )


def _initial_theta(model: LossModel, rng: np.random.Generator) -> np.ndarray:
    return 0.1 * rng.standard_normal(model.param_dim)


def _learning_rate(model: LossModel, cfg: TrainConfig) -> float:
    return cfg.learning_rate if cfg.learning_rate is not None else model.default_learning_rate()


def _batch_size(cfg: TrainConfig, n: int) -> int:
    b = int(round(cfg.sampling_prob * n))
    if b < 1:
        raise ValueError(
            f"sampling_prob {cfg.sampling_prob} selects no instances from n={n}"
        )
    return min(b, n)


def clip_to_norm(g: np.ndarray, bound: float) -> np.ndarray:
    """Scale ``g`` onto the ball of radius ``bound``; shorter vectors pass through."""
    norm = float(np.linalg.norm(g))
    if norm > bound:
        return g * (bound / norm)
    return g


def _averaged_clipped_grad(
    model: LossModel,
    theta: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    bound: float | None,
) -> np.ndarray:
    grads = np.stack(
        [model.grad_theta(theta, DataInstance(X[i], int(y[i]))) for i in idx]
    )
    if bound is not None:
        grads = np.stack([clip_to_norm(g, bound) for g in grads])
    return grads.mean(axis=0)


def train_sgd(
    model: LossModel,
    ds: Dataset,
    cfg: TrainConfig,
    polish: bool = True,
    clip_bound: float | None = None,
) -> FitResult:
    """Mini-batch SGD, optionally followed by full-batch descent to the optimum.

    The polish phase iterates full-batch gradient steps until the gradient
    norm falls below 1e-8 or 100000 iterations elapse; on hitting the cap the
    best iterate seen is returned with ``converged=False``. ``clip_bound``
    optionally clips per-example gradients during the mini-batch phase,
    matching the private loops so their zero-noise trajectories coincide
    with this one even where clipping binds.
    """
    if ds.n < 1:
        raise ValueError("dataset must be nonempty")
    select_rng, _, init_rng = _rng_streams(cfg.seed)
    alpha = _learning_rate(model, cfg)
    b = _batch_size(cfg, ds.n)
    theta = _initial_theta(model, init_rng)
    trace: list[float] = []
    log: list[StepRecord] = []
    for t in range(cfg.steps):
        idx = select_rng.choice(ds.n, size=b, replace=False)
        g = _averaged_clipped_grad(model, theta, ds.X, ds.y, idx, bound=clip_bound)
        theta = theta - alpha * g
        loss = model.objective(theta, ds)
        trace.append(loss)
        log.append(StepRecord(t, tuple(int(i) for i in idx), None, 0.0, None, loss))

    converged = False
    if polish:
        best_theta = theta
        best_obj = model.objective(theta, ds)
        for _ in range(POLISH_MAX_ITER):
            g = model.batch_grad(theta, ds.X, ds.y)
            if np.linalg.norm(g) <= POLISH_GRAD_TOL:
                converged = True
                break
            theta = theta - alpha * g
            obj = model.objective(theta, ds)
            if obj < best_obj:
                best_obj, best_theta = obj, theta
        if not converged:
            theta = best_theta
    grad_norm = float(np.linalg.norm(model.batch_grad(theta, ds.X, ds.y)))
    converged = converged or grad_norm <= POLISH_GRAD_TOL
    return FitResult(
        theta=theta,
        objective=model.objective(theta, ds),
        grad_norm=grad_norm,
        converged=converged,
        loss_trace=tuple(trace),
        step_log=tuple(log),
    )


def train_data_perturbation(
    model: LossModel,
    ds: Dataset,
    budget: PrivacyBudget,
    cfg: TrainConfig,
    consts: CalibrationConstants = CalibrationConstants(),
    sigma_override: float | None = None,
) -> TrainOutcome:
    """Noise the training features, then run plain mini-batch SGD on them.

    In the default "fixed" mode one Gaussian vector is drawn per instance up
    front, the perturbed dataset is frozen, and training runs entirely on it,
    so retraining on ``d_priv`` with the same seed reproduces ``theta_priv``.
    In "fresh" mode the selected instances are re-noised at every step and
    ``d_priv`` keeps each instance's last draw. ``sigma_override`` replaces
    the calibrated scale (used for zero-noise reduction checks).
    """
    lipschitz = model.lipschitz_bound()
    if sigma_override is not None:
        sigma = float(sigma_override)
    else:
        sigma = calibrate_uniform(budget, cfg.sampling_prob, cfg.steps, lipschitz, consts).sigma
    select_rng, noise_rng, init_rng = _rng_streams(cfg.seed)
    alpha = _learning_rate(model, cfg)
    b = _batch_size(cfg, ds.n)
    theta = _initial_theta(model, init_rng)

    Xp = ds.X + noise_rng.normal(0.0, sigma, size=ds.X.shape)
    trace: list[float] = []
    log: list[StepRecord] = []
    for t in range(cfg.steps):
        idx = select_rng.choice(ds.n, size=b, replace=False)
        if cfg.noise_mode == "fresh":
            Xp[idx] = ds.X[idx] + noise_rng.normal(0.0, sigma, size=(len(idx), ds.d))
        g = _averaged_clipped_grad(model, theta, Xp, ds.y, idx, bound=lipschitz)
        theta = theta - alpha * g
        loss = model.batch_loss(theta, Xp, ds.y)
        trace.append(loss)
        log.append(StepRecord(t, tuple(int(i) for i in idx), False, sigma, None, loss))

    d_priv = Dataset(Xp, ds.y.copy(), name=f"{ds.name}-priv")
    return TrainOutcome(
        theta_priv=theta,
        d_priv=d_priv,
        step_log=tuple(log),
        loss_trace=tuple(trace),
        sigma=sigma,
    )


def train_gated_perturbation(
    model: LossModel,
    ds: Dataset,
    budget: PrivacyBudget,
    cfg: TrainConfig,
    consts: CalibrationConstants = CalibrationConstants(),
    theta_ref: np.ndarray | None = None,
    hess: HessianOperator | None = None,
    gate_mode: str = "literal",
    theta_floor: float = 1e-12,
) -> TrainOutcome:
    """Single-instance SGD that noises only influential instances.

    Starts global and local models at the pre-trained reference. Each step
    picks one instance uniformly at random, estimates its contribution with
    the influence solve against the cached Hessian factorization (taken at
    the current global model), and applies the threshold gate: within bounds
    means a plain SGD step, outside means the step runs on the instance with
    fresh per-instance Gaussian feature noise, whose scale adapts to the
    instance's mixed-partial norm at the current local model. The global
    model syncs to the local one after every round. ``d_priv`` carries each
    instance's last perturbation, or the original when it was never noised.
    """
    if theta_ref is None or hess is None:
        raise ValueError("gated training requires a pre-trained reference model and Hessian")
    rounds = cfg.resolved_rounds()
    total_steps = cfg.steps
    lipschitz = model.lipschitz_bound()
    select_rng, noise_rng, _ = _rng_streams(cfg.seed)
    alpha = _learning_rate(model, cfg)

    theta_g = np.array(theta_ref, dtype=float)
    theta_l = theta_g.copy()
    Xp = ds.X.copy()
    trace: list[float] = []
    log: list[StepRecord] = []
    sigmas: list[float] = []
    t = 0
    for _ in range(rounds):
        for _ in range(cfg.local_steps):
            k = int(select_rng.integers(ds.n))
            z = ds.instance(k)
            c = influence(hess, model, theta_g, z, ds.n)
            report = threshold_check(c, theta_g, budget.epsilon, gate_mode, theta_floor)
            if report.gated:
                g = clip_to_norm(model.grad_theta(theta_l, z), lipschitz)
                theta_l = theta_l - alpha * g
                sigma_t, w = 0.0, None
            else:
                w = model.mixed_norm(theta_l, z)
                sigma_t = calibrate_per_instance(
                    budget, ds.n, total_steps, lipschitz, w, consts
                ).sigma
                noisy_x = z.x + gaussian_vector(ds.d, sigma_t, noise_rng)
                g = clip_to_norm(
                    model.grad_theta(theta_l, DataInstance(noisy_x, z.y)), lipschitz
                )
                theta_l = theta_l - alpha * g
                Xp[k] = noisy_x
                sigmas.append(sigma_t)
            loss = model.objective(theta_l, ds)
            trace.append(loss)
            log.append(StepRecord(t, (k,), report.gated, sigma_t, w, loss))
            t += 1
        theta_g = theta_l.copy()

    d_priv = Dataset(Xp, ds.y.copy(), name=f"{ds.name}-priv")
    return TrainOutcome(
        theta_priv=theta_g,
        d_priv=d_priv,
        step_log=tuple(log),
        loss_trace=tuple(trace),
        sigma=float(np.mean(sigmas)) if sigmas else 0.0,
    )


def train_gradient_perturbation(
    model: LossModel,
    ds: Dataset,
    budget: PrivacyBudget,
    cfg: TrainConfig,
    consts: CalibrationConstants = CalibrationConstants(),
    sigma_override: float | None = None,
) -> TrainOutcome:
    """Mini-batch SGD with Gaussian noise added to each averaged gradient.

    The comparison baseline that noises gradients instead of data: per-example
    gradients are clipped, averaged, and perturbed with per-coordinate
    standard deviation c * q * G * sqrt(T ln(1/delta)) / epsilon. The data is
    returned untouched.
    """
    lipschitz = model.lipschitz_bound()
    if sigma_override is not None:
        sigma = float(sigma_override)
    else:
        sigma = (
            consts.c
            * cfg.sampling_prob
            * lipschitz
            * math.sqrt(cfg.steps * budget.log_inv_delta)
            / budget.epsilon
        )
    select_rng, noise_rng, init_rng = _rng_streams(cfg.seed)
    alpha = _learning_rate(model, cfg)
    b = _batch_size(cfg, ds.n)
    theta = _initial_theta(model, init_rng)
    trace: list[float] = []
    log: list[StepRecord] = []
    for t in range(cfg.steps):
        idx = select_rng.choice(ds.n, size=b, replace=False)
        g = _averaged_clipped_grad(model, theta, ds.X, ds.y, idx, bound=lipschitz)
        noise = noise_rng.normal(0.0, sigma, size=model.param_dim)
        theta = theta - alpha * (g + noise)
        loss = model.objective(theta, ds)
        trace.append(loss)
        log.append(StepRecord(t, tuple(int(i) for i in idx), False, sigma, None, loss))
    return TrainOutcome(
        theta_priv=theta,
        d_priv=ds,
        step_log=tuple(log),
        loss_trace=tuple(trace),
        sigma=sigma,
    )


def output_noise_scale(
    budget: PrivacyBudget, n: int, lambda_reg: float, lipschitz: float
) -> float:
    """Per-coordinate noise for releasing the optimum of a strongly convex fit."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if lambda_reg <= 0:
        raise ValueError("output perturbation requires lambda_reg > 0")
    if lipschitz <= 0:
        raise ValueError(f"lipschitz must be > 0, got {lipschitz}")
    return (
        2.0
        * lipschitz
        * math.sqrt(2.0 * math.log(1.25 / budget.delta))
        / (n * lambda_reg * budget.epsilon)
    )


def train_output_perturbation(
    model: LossModel, ds: Dataset, budget: PrivacyBudget, cfg: TrainConfig
) -> TrainOutcome:
    """Train to the optimum, then release it with Gaussian noise added once.

    Requires a strictly positive regularization strength (the sensitivity
    bound behind the noise scale needs strong convexity). The data is
    returned untouched.
    """
    if model.lambda_reg <= 0:
        raise ValueError("output perturbation requires a model with lambda_reg > 0")
    fit = train_sgd(model, ds, cfg, polish=True)
    sigma = output_noise_scale(budget, ds.n, model.lambda_reg, model.lipschitz_bound())
    _, noise_rng, _ = _rng_streams(cfg.seed)
    theta_priv = fit.theta + noise_rng.normal(0.0, sigma, size=model.param_dim)
    return TrainOutcome(
        theta_priv=theta_priv,
        d_priv=ds,
        step_log=fit.step_log,
        loss_trace=fit.loss_trace,
        sigma=sigma,
    )


def step_log_to_csv(step_log, path) -> None:
    """Serialize a step log for audit and plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "instance_index", "gated", "sigma", "w_t", "loss"])
        for rec in step_log:
            writer.writerow(
                [
                    rec.iteration,
                    ";".join(str(i) for i in rec.indices),
                    "" if rec.gated is None else str(rec.gated).lower(),
                    format(rec.sigma, ".17g"),
                    "" if rec.w is None else format(rec.w, ".17g"),
                    format(rec.loss, ".17g"),
                ]
            )
