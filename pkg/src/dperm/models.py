"""Differentiable classification losses and every derivative the trainers need.

Both architectures score an instance with u(x; theta) and share the loss

    loss(z, theta) = log(1 + exp(-y * u(x; theta))) + (lambda_reg / 2) ||theta||^2

so the parameter gradient, the parameter Hessian, and the mixed partial
(the Jacobian of the parameter gradient with respect to the features) are
assembled once from per-architecture score derivatives. Writing s for the
sigmoid of -y*u and g for the score gradient over theta:

    grad_theta   = -y * s * g + lambda_reg * theta
    hessian      = s(1-s) * g g^T - y * s * hess_u + lambda_reg * I
    mixed        = s(1-s) * g (grad_x u)^T - y * s * d(g)/dx

The logistic model has u = theta . x; the perceptron has one tanh hidden
layer of width d with no biases (hidden weights d x d, then d output
weights, so m = d*d + d).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dataset import DataInstance, Dataset

__all__ = [
    "LossModel",
    "LogisticModel",
    "MLPModel",
    "make_model",
    "spectral_norm",
    "save_model",
    "load_model",
]


def spectral_norm(matrix: np.ndarray, tol: float = 1e-8, max_iter: int = 1000) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    Deterministic: starts from the matrix row of largest norm, which lies in
    the row space, and stops when the Rayleigh estimate is stable to ``tol``
    relative. Raises RuntimeError if the estimate has not settled after
    ``max_iter`` sweeps.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"need a matrix, got shape {M.shape}")
    if not np.any(M):
        return 0.0
    if M.shape[0] < M.shape[1]:
        M = M.T
    gram = M.T @ M  # smaller side
    k = int(np.argmax(np.einsum("ij,ij->i", M, M)))
    v = M[k].astype(float)
    v /= np.linalg.norm(v)
    est = float(v @ gram @ v)
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = float(v @ gram @ v)
        if abs(new - est) <= tol * max(new, 1e-300):
            return float(np.sqrt(max(new, 0.0)))
        est = new
    raise RuntimeError(f"power iteration did not converge in {max_iter} steps")


class LossModel(ABC):
    """Twice-differentiable loss over (parameter vector, instance) pairs.

    Parameters are plain 1-d numpy arrays of length :attr:`param_dim`.
    All methods are pure; instances of this class are immutable.
    """

    kind: str = ""

    def __init__(
        self,
        dim: int,
        lambda_reg: float = 1e-3,
        clip_bound: float = 1.0,
        mixed_norm_method: str = "spectral",
    ):
        if dim < 1:
            raise ValueError(f"feature dimension must be >= 1, got {dim}")
        if lambda_reg < 0:
            raise ValueError(f"lambda_reg must be >= 0, got {lambda_reg}")
        if clip_bound <= 0:
            raise ValueError(f"clip_bound must be > 0, got {clip_bound}")
        if mixed_norm_method not in ("spectral", "frobenius"):
            raise ValueError(f"unknown mixed_norm_method {mixed_norm_method!r}")
        self.dim = int(dim)
        self.lambda_reg = float(lambda_reg)
        self.clip_bound = float(clip_bound)
        self.mixed_norm_method = mixed_norm_method

    # architecture hooks ---------------------------------------------------

    @property
    @abstractmethod
    def param_dim(self) -> int:
        """Number of parameters m."""

    @abstractmethod
    def score(self, theta: np.ndarray, x: np.ndarray) -> float:
        """Classification score u(x; theta)."""

    @abstractmethod
    def batch_scores(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Scores for every row of X."""

    @abstractmethod
    def _score_grad_theta(self, theta, x) -> np.ndarray:
        """du/dtheta, length m."""

    @abstractmethod
    def _score_grad_x(self, theta, x) -> np.ndarray:
        """du/dx, length d."""

    @abstractmethod
    def _score_hessian_theta(self, theta, x) -> np.ndarray:
        """d^2u/dtheta^2, m x m."""

    @abstractmethod
    def _score_grad_theta_jac_x(self, theta, x) -> np.ndarray:
        """d(du/dtheta)/dx, m x d."""

    @abstractmethod
    def batch_grad(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of the averaged objective over (X, y), vectorized."""

    # shared derivative assembly --------------------------------------------

    def _check(self, theta: np.ndarray, x: np.ndarray) -> None:
        if theta.shape != (self.param_dim,):
            raise ValueError(
                f"parameter shape {theta.shape} does not match m={self.param_dim}"
            )
        if x.shape != (self.dim,):
            raise ValueError(f"feature shape {x.shape} does not match d={self.dim}")

    def loss(self, theta: np.ndarray, z: DataInstance) -> float:
        self._check(theta, z.x)
        t = z.y * self.score(theta, z.x)
        return float(np.logaddexp(0.0, -t) + 0.5 * self.lambda_reg * (theta @ theta))

    def grad_theta(self, theta: np.ndarray, z: DataInstance) -> np.ndarray:
        self._check(theta, z.x)
        s = expit(-z.y * self.score(theta, z.x))
        return -z.y * s * self._score_grad_theta(theta, z.x) + self.lambda_reg * theta

    def hessian_theta(self, theta: np.ndarray, z: DataInstance) -> np.ndarray:
        self._check(theta, z.x)
        s = expit(-z.y * self.score(theta, z.x))
        g = self._score_grad_theta(theta, z.x)
        H = s * (1.0 - s) * np.outer(g, g)
        Hu = self._score_hessian_theta(theta, z.x)
        if Hu is not None:
            H = H - z.y * s * Hu
        H += self.lambda_reg * np.eye(self.param_dim)
        return H

    def grad_x_grad_theta(self, theta: np.ndarray, z: DataInstance) -> np.ndarray:
        self._check(theta, z.x)
        s = expit(-z.y * self.score(theta, z.x))
        g = self._score_grad_theta(theta, z.x)
        gx = self._score_grad_x(theta, z.x)
        return s * (1.0 - s) * np.outer(g, gx) - z.y * s * self._score_grad_theta_jac_x(
            theta, z.x
        )

    def mixed_norm(self, theta: np.ndarray, z: DataInstance) -> float:
        """Operator norm of the mixed partial (Frobenius behind the config switch)."""
        M = self.grad_x_grad_theta(theta, z)
        if self.mixed_norm_method == "frobenius":
            return float(np.linalg.norm(M))
        return spectral_norm(M)

    # evaluation -------------------------------------------------------------

    def predict(self, theta: np.ndarray, x: np.ndarray) -> int:
        """Sign of the score; ties go to +1."""
        return 1 if self.score(theta, x) >= 0.0 else -1

    def accuracy(self, theta: np.ndarray, ds: Dataset) -> float:
        if ds.n == 0:
            raise ValueError("accuracy of an empty dataset is undefined")
        preds = np.where(self.batch_scores(theta, ds.X) >= 0.0, 1, -1)
        return float(np.mean(preds == ds.y))

    def batch_loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        t = y * self.batch_scores(theta, X)
        return float(
            np.mean(np.logaddexp(0.0, -t)) + 0.5 * self.lambda_reg * (theta @ theta)
        )

    def objective(self, theta: np.ndarray, ds: Dataset) -> float:
        """Averaged regularized loss over a dataset."""
        return self.batch_loss(theta, ds.X, ds.y)

    # constants ---------------------------------------------------------------

    def lipschitz_bound(self) -> float:
        """Gradient-norm bound used for clipping and noise calibration.

        The unregularized logistic loss on the unit ball is 1-Lipschitz; any
        other configuration falls back to the configured clip bound, which
        the trainers enforce by clipping.
        """
        if self.kind == "logistic" and self.lambda_reg == 0.0:
            return 1.0
        return self.clip_bound

    def smoothness_bound(self) -> float:
        # 1/4 from the sigmoid curvature on the unit ball, plus the ridge term.
        return 0.25 + self.lambda_reg

    def default_learning_rate(self) -> float:
        return 1.0 / self.smoothness_bound()


class LogisticModel(LossModel):
    """L2-regularized logistic regression; u(x; theta) = theta . x, m = d."""

    kind = "logistic"

    @property
    def param_dim(self) -> int:
        return self.dim

    def score(self, theta, x):
        return float(theta @ x)

    def batch_scores(self, theta, X):
        return X @ theta

    def _score_grad_theta(self, theta, x):
        return x

    def _score_grad_x(self, theta, x):
        return theta

    def _score_hessian_theta(self, theta, x):
        return None  # linear score

    def _score_grad_theta_jac_x(self, theta, x):
        return np.eye(self.dim)

    def batch_grad(self, theta, X, y):
        s = expit(-y * (X @ theta))
        coeff = -y * s
        return (X.T @ coeff) / X.shape[0] + self.lambda_reg * theta


class MLPModel(LossModel):
    """One tanh hidden layer of width d, no biases; m = d*d + d.

    Parameter layout: the hidden weight matrix W (d x d, row major) followed
    by the output weights v, so u(x) = v . tanh(W x). tanh keeps the loss
    twice differentiable, which the influence machinery requires.
    """

    kind = "mlp"

    @property
    def param_dim(self) -> int:
        return self.dim * self.dim + self.dim

    def _split(self, theta):
        d = self.dim
        return theta[: d * d].reshape(d, d), theta[d * d :]

    def score(self, theta, x):
        W, v = self._split(theta)
        return float(v @ np.tanh(W @ x))

    def batch_scores(self, theta, X):
        W, v = self._split(theta)
        return np.tanh(X @ W.T) @ v

    def _score_grad_theta(self, theta, x):
        W, v = self._split(theta)
        h = np.tanh(W @ x)
        a = 1.0 - h * h
        gW = np.outer(v * a, x)
        return np.concatenate([gW.ravel(), h])

    def _score_grad_x(self, theta, x):
        W, v = self._split(theta)
        h = np.tanh(W @ x)
        return W.T @ ((1.0 - h * h) * v)

    def _score_hessian_theta(self, theta, x):
        d = self.dim
        W, v = self._split(theta)
        h = np.tanh(W @ x)
        a = 1.0 - h * h
        H = np.zeros((self.param_dim, self.param_dim))
        xx = np.outer(x, x)
        for i in range(d):
            rows = slice(i * d, (i + 1) * d)
            H[rows, rows] = (-2.0 * v[i] * h[i] * a[i]) * xx
            H[rows, d * d + i] = a[i] * x
            H[d * d + i, rows] = a[i] * x
        return H

    def _score_grad_theta_jac_x(self, theta, x):
        d = self.dim
        W, v = self._split(theta)
        h = np.tanh(W @ x)
        a = 1.0 - h * h
        J = np.empty((self.param_dim, d))
        eye = np.eye(d)
        for i in range(d):
            J[i * d : (i + 1) * d] = v[i] * a[i] * eye - (
                2.0 * v[i] * h[i] * a[i]
            ) * np.outer(x, W[i])
        J[d * d :] = a[:, None] * W
        return J

    def batch_grad(self, theta, X, y):
        W, v = self._split(theta)
        H = np.tanh(X @ W.T)
        A = 1.0 - H * H
        s = expit(-y * (H @ v))
        coeff = -y * s
        gW = ((A * coeff[:, None]) * v[None, :]).T @ X / X.shape[0]
        gv = H.T @ coeff / X.shape[0]
        return np.concatenate([gW.ravel(), gv]) + self.lambda_reg * theta


_MODEL_KINDS = {"logistic": LogisticModel, "mlp": MLPModel}


def make_model(kind: str, dim: int, **kwargs) -> LossModel:
    if kind not in _MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(_MODEL_KINDS)}")
    return _MODEL_KINDS[kind](dim, **kwargs)


def save_model(model: LossModel, theta: np.ndarray, path: str | Path) -> None:
    """Flat text format: one header line, then one parameter per line."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.param_dim,):
        raise ValueError(f"parameter shape {theta.shape} does not match the model")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    with open(path, "w") as fh:
        fh.write(f"{model.kind},{model.dim},{model.param_dim},{model.lambda_reg:.17g}\n")
        for v in theta:
            fh.write(format(v, ".17g") + "\n")


def load_model(
    path: str | Path,
    clip_bound: float = 1.0,
    mixed_norm_method: str = "spectral",
) -> tuple[LossModel, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 4:
            raise ValueError(f"{path}: malformed model header {header}")
        kind, d, m, lam = header[0], int(header[1]), int(header[2]), float(header[3])
        theta = np.array([float(line) for line in fh if line.strip()])
    model = make_model(
        kind, d, lambda_reg=lam, clip_bound=clip_bound, mixed_norm_method=mixed_norm_method
    )
    if model.param_dim != m or theta.shape != (m,):
        raise ValueError(f"{path}: parameter count mismatch (header {m}, got {theta.shape})")
    if not np.all(np.isfinite(theta)):
        raise ValueError(f"{path}: parameters must be finite")
    return model, theta
