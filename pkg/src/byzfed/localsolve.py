"""Local empirical risk minimization on a single machine's shard.

Two loss families cover the pipeline:

* ``squared_error``: f(w; (x, y)) = (1/2) (x'w - y)^2, the mixture-of-
  regressions loss. The exact ERM is ordinary least squares.
* ``location``: f(w; p) = (1/2) ||w - p||^2 over raw points p, whose ERM
  is the shard mean. Ingested fleets use this loss.

Besides the exact solver there are two inexact ones: plain batch gradient
descent (gd_erm) and projected online gradient descent with iterate
averaging (online_to_batch), which reads every sample exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import WorkerShard
from .errors import ConfigError, NumericError
from .numerics import least_squares, top_eigenpair

__all__ = [
    "LossSpec",
    "loss_value",
    "loss_grad",
    "batch_objective",
    "local_gradient",
    "local_erm",
    "gd_erm",
    "online_to_batch",
]

_KINDS = ("squared_error", "location")

# iterates beyond this norm are treated as divergence of the recursion
_DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class LossSpec:
    """Loss family tag; see the module docstring for the two kinds."""

    kind: str = "squared_error"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; expected one of {_KINDS}")

    @property
    def uses_targets(self) -> bool:
        return self.kind == "squared_error"


def loss_value(loss: LossSpec, w: np.ndarray, x: np.ndarray, y: float | None = None) -> float:
    """Single-sample loss f(w; point)."""
    if loss.kind == "squared_error":
        if y is None:
            raise ConfigError("squared_error loss needs a target value")
        return 0.5 * float(x @ w - y) ** 2
    return 0.5 * float(np.sum((w - x) ** 2))


def loss_grad(loss: LossSpec, w: np.ndarray, x: np.ndarray, y: float | None = None) -> np.ndarray:
    """Single-sample gradient of f(w; point) in w."""
    if loss.kind == "squared_error":
        if y is None:
            raise ConfigError("squared_error loss needs a target value")
        return x * float(x @ w - y)
    return w - x


def batch_objective(shard: WorkerShard, loss: LossSpec, w: np.ndarray) -> float:
    """Local empirical risk F_i(w) = (1/n) sum_l f(w; point_l)."""
    w = np.asarray(w, dtype=float)
    if loss.kind == "squared_error":
        r = shard.X @ w - shard.y
        return 0.5 * float(r @ r) / shard.n
    diffs = w[None, :] - shard.X
    return 0.5 * float(np.sum(diffs * diffs)) / shard.n


def local_gradient(shard: WorkerShard, loss: LossSpec, w: np.ndarray) -> np.ndarray:
    """Gradient of the local empirical risk at w."""
    w = np.asarray(w, dtype=float)
    if w.shape != (shard.X.shape[1],):
        raise ConfigError(f"w has shape {w.shape}, expected ({shard.X.shape[1]},)")
    if loss.kind == "squared_error":
        return shard.X.T @ (shard.X @ w - shard.y) / shard.n
    return w - shard.X.mean(axis=0)


def local_erm(shard: WorkerShard, loss: LossSpec) -> np.ndarray:
    """Exact local empirical risk minimizer.

    Least squares for the regression loss (minimum-norm solution when the
    shard is rank-deficient), shard mean for the location loss.
    """
    if shard.n < 1:
        raise ConfigError("cannot solve an empty shard")
    if loss.kind == "squared_error":
        return least_squares(shard.X, shard.y)
    return shard.X.mean(axis=0)


def _auto_step(shard: WorkerShard, loss: LossSpec) -> float:
    # 1 / lambda_max of the local Hessian; the location Hessian is I
    if loss.kind == "location":
        return 1.0
    H = shard.X.T @ shard.X / shard.n
    lam, _ = top_eigenpair(H)
    if lam <= 0:
        return 1.0
    return 1.0 / lam


def gd_erm(
    shard: WorkerShard,
    loss: LossSpec,
    step: float | None = None,
    iters: int = 100,
) -> np.ndarray:
    """Approximate ERM by batch gradient descent from the origin.

    step=None picks 1/lambda_max of the local Hessian. Raises
    NumericError if an iterate's norm exceeds 1e12 (diverging recursion,
    typically a too-large step).
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    if step is None:
        step = _auto_step(shard, loss)
    if not step > 0:
        raise ConfigError(f"step must be > 0, got {step}")
    d = shard.X.shape[1]
    w = np.zeros(d)
    for t in range(iters):
        w = w - step * local_gradient(shard, loss, w)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > _DIVERGENCE_NORM:
            raise NumericError(
                f"gradient descent diverged at iteration {t + 1} (step={step})"
            )
    return w


def online_to_batch(
    shard: WorkerShard,
    loss: LossSpec,
    lam: float = 1.0,
    radius: float | None = None,
    step_schedule=None,
) -> np.ndarray:
    """Projected online gradient descent with iterate averaging.

    Starting from w_1 = 0, each sample is visited exactly once in shard
    order: w_{l+1} = Proj_B(R) [ w_l - eta_l grad f(w_l; point_l) ], and
    the returned estimate is the average of w_1 .. w_n. The default
    schedule is eta_l = 1/(lam*l) and the default ball radius is
    2*sqrt(d). A custom step_schedule(l) overrides the schedule (l is
    1-based).
    """
    if shard.n < 1:
        raise ConfigError("cannot solve an empty shard")
    if lam <= 0:
        raise ConfigError("lam must be > 0")
    d = shard.X.shape[1]
    R = 2.0 * np.sqrt(d) if radius is None else float(radius)
    if R <= 0:
        raise ConfigError("radius must be > 0")
    if step_schedule is None:
        step_schedule = lambda l: 1.0 / (lam * l)

    w = np.zeros(d)
    total = np.zeros(d)
    for l in range(shard.n):
        total += w
        # one read of sample l, never revisited
        x = shard.X[l]
        yl = float(shard.y[l]) if loss.uses_targets else None
        w = w - step_schedule(l + 1) * loss_grad(loss, w, x, yl)
        nw = np.linalg.norm(w)
        if nw > R:
            w = w * (R / nw)
    return total / shard.n
