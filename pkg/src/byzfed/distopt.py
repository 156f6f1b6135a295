"""Byzantine-robust distributed gradient descent within one cluster.

Each round, every machine reports a gradient of the global model on its
own shard (or an attacked value, for Byzantine machines); the center
aggregates the reports with a pluggable robust estimator and takes a
descent step. fed_avg_robust is the federated-averaging variant: machines
run several local descent steps and the center aggregates the returned
models instead of gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import WorkerShard
from .errors import ConfigError
from .localsolve import _DIVERGENCE_NORM, LossSpec, local_gradient
from .numerics import RngStream, derive_seed, top_eigenpair
from .robust_stats import AggregatorSpec, aggregate

__all__ = [
    "OptConfig",
    "AttackSpec",
    "robust_gd",
    "fed_avg_robust",
    "pooled_auto_step",
]

_ATTACK_KINDS = ("none", "own_corrupt_data", "sign_flip", "random_gauss", "constant")


@dataclass(frozen=True)
class AttackSpec:
    """Byzantine reporting behavior, applied only to Byzantine machines.

    own_corrupt_data (the default) means Byzantine machines follow the
    honest protocol on their own corrupted shard: the attack lives in the
    data, not the messages. The remaining kinds replace the report
    outright: its negation scaled (sign_flip), a Gaussian vector
    (random_gauss), or a fixed vector (constant).
    """

    kind: str = "own_corrupt_data"
    scale: float = 1.0
    vector: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}; expected one of {_ATTACK_KINDS}")
        if self.kind == "constant":
            if self.vector is None:
                raise ConfigError("constant attack needs a vector")
            object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float))
        if not math.isfinite(self.scale):
            raise ConfigError("attack scale must be finite")

    @classmethod
    def none(cls) -> "AttackSpec":
        return cls(kind="none")

    @classmethod
    def own_corrupt_data(cls) -> "AttackSpec":
        return cls(kind="own_corrupt_data")

    @classmethod
    def sign_flip(cls, scale: float = 1.0) -> "AttackSpec":
        return cls(kind="sign_flip", scale=scale)

    @classmethod
    def random_gauss(cls, scale: float = 1.0, seed: int = 0) -> "AttackSpec":
        return cls(kind="random_gauss", scale=scale, seed=seed)

    @classmethod
    def constant(cls, vector) -> "AttackSpec":
        return cls(kind="constant", vector=np.asarray(vector, dtype=float))


@dataclass(frozen=True)
class OptConfig:
    """Distributed optimization settings.

    step_size=None derives 1/lambda_max of the pooled covariance across
    the cluster's shards (1.0 for the location loss). local_steps > 1
    switches robust_gd semantics to federated averaging.
    """

    step_size: float | None = None
    max_rounds: int = 300
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec.sample_mean)
    local_steps: int = 1
    init: np.ndarray | None = None
    stop_tol: float = 1e-8

    def __post_init__(self):
        if self.step_size is not None and not (
            math.isfinite(self.step_size) and self.step_size > 0
        ):
            raise ConfigError("step_size must be finite and > 0")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be >= 1")
        if self.stop_tol < 0:
            raise ConfigError("stop_tol must be >= 0")
        if self.init is not None:
            object.__setattr__(self, "init", np.asarray(self.init, dtype=float))


def pooled_auto_step(shards: list[WorkerShard], loss: LossSpec) -> float:
    """1 / lambda_max of the pooled second-moment matrix over the cluster
    (the location-loss Hessian is the identity)."""
    if loss.kind == "location":
        return 1.0
    d = shards[0].X.shape[1]
    H = np.zeros((d, d))
    total = 0
    for s in shards:
        H += s.X.T @ s.X
        total += s.n
    H /= total
    lam, _ = top_eigenpair(H)
    return 1.0 / lam if lam > 0 else 1.0


def _attacked_report(honest_value, shard, attack, round_idx, d):
    """Vector a Byzantine machine sends in place of honest_value()."""
    if attack.kind in ("none", "own_corrupt_data"):
        return honest_value()
    if attack.kind == "sign_flip":
        return -attack.scale * honest_value()
    if attack.kind == "random_gauss":
        rng = RngStream(
            derive_seed(attack.seed, shard.machine_id, round_idx), 0
        ).generator()
        return attack.scale * rng.standard_normal(d)
    return attack.vector.copy()


def _check_shards(shards):
    if not shards:
        raise ConfigError("need at least one shard")
    d = shards[0].X.shape[1]
    for s in shards:
        if s.X.shape[1] != d:
            raise ConfigError("shards disagree on dimension")
    return d


def robust_gd(
    shards: list[WorkerShard],
    loss: LossSpec,
    cfg: OptConfig,
    attack: AttackSpec | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Robustly aggregated distributed gradient descent.

    Returns (final model, trajectory of all models including the start).
    Stops after max_rounds or when the update norm drops below stop_tol.
    Robust aggregators assume fewer than half the shards are Byzantine;
    this is the caller's contract, not enforced here.
    """
    attack = attack or AttackSpec.own_corrupt_data()
    d = _check_shards(shards)
    step = cfg.step_size if cfg.step_size is not None else pooled_auto_step(shards, loss)
    w = np.zeros(d) if cfg.init is None else cfg.init.copy()
    if w.shape != (d,):
        raise ConfigError(f"init has shape {w.shape}, expected ({d},)")
    traj = [w.copy()]
    for t in range(cfg.max_rounds):
        reports = np.empty((len(shards), d))
        for i, s in enumerate(shards):
            if s.is_byzantine:
                reports[i] = _attacked_report(
                    lambda: local_gradient(s, loss, w), s, attack, t, d
                )
            else:
                reports[i] = local_gradient(s, loss, w)
        w_next = w - step * aggregate(reports, cfg.aggregator)
        traj.append(w_next.copy())
        delta = float(np.linalg.norm(w_next - w))
        w = w_next
        if delta < cfg.stop_tol:
            break
        # Halt diverging runs at a bounded iterate rather than compounding
        # for the full round budget; the caller sees the blow-up in the
        # returned model and trajectory.
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > _DIVERGENCE_NORM:
            break
    return w, np.asarray(traj)


def _local_descent(shard, loss, w0, step, n_steps):
    w = w0.copy()
    for _ in range(n_steps):
        w = w - step * local_gradient(shard, loss, w)
    return w


def fed_avg_robust(
    shards: list[WorkerShard],
    loss: LossSpec,
    cfg: OptConfig,
    attack: AttackSpec | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Robust federated averaging.

    Per round every machine runs cfg.local_steps gradient-descent steps
    from the global model on its own shard; the center aggregates the
    returned local models. With local_steps=1 and an affine-equivariant
    aggregator this coincides with robust_gd round for round.
    """
    attack = attack or AttackSpec.own_corrupt_data()
    d = _check_shards(shards)
    step = cfg.step_size if cfg.step_size is not None else pooled_auto_step(shards, loss)
    E = cfg.local_steps
    w = np.zeros(d) if cfg.init is None else cfg.init.copy()
    traj = [w.copy()]
    for t in range(cfg.max_rounds):
        models = np.empty((len(shards), d))
        for i, s in enumerate(shards):
            if s.is_byzantine:
                models[i] = _attacked_report(
                    lambda: _local_descent(s, loss, w, step, E), s, attack, t, d
                )
            else:
                models[i] = _local_descent(s, loss, w, step, E)
        w_next = aggregate(models, cfg.aggregator)
        traj.append(w_next.copy())
        delta = float(np.linalg.norm(w_next - w))
        w = w_next
        if delta < cfg.stop_tol:
            break
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > _DIVERGENCE_NORM:
            break
    return w, np.asarray(traj)
