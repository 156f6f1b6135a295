"""Synthetic fleet generation and external dataset ingestion.

The synthetic fleet is a mixture of linear regressions: K regression
vectors drawn elementwise from Bernoulli(1/2), honest machines dealt
uniformly onto the K clusters, and a ceil(alpha*m) fraction of Byzantine
machines whose data comes from corrupt coefficient vectors drawn from
3*Bernoulli(1/2). Ingestion turns an unlabeled feature matrix into a fleet
by threshold-graph connected components, per-component sharding, and
synthetic adversarial shards.

Roles (true_cluster / Byzantine) are ground-truth metadata: clustering and
optimization code never reads them, except where the fleet layer injects
adversarial behavior by design.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .components import threshold_components
from .errors import ConfigError, DataError
from .numerics import RngStream

__all__ = [
    "BYZANTINE",
    "FleetConfig",
    "WorkerShard",
    "GroundTruth",
    "generate_fleet",
    "generate_symmetric_mixture",
    "ingest_threshold_graph",
    "percentile_gamma",
    "read_points_csv",
    "save_fleet",
    "load_fleet",
]

logger = logging.getLogger(__name__)

# label sentinel for machines with no true cluster
BYZANTINE = -1

# stream ids inside one fleet seed: 0 = centers, 1 = assignment, 1000+i = machine i
_STREAM_CENTERS = 0
_STREAM_ASSIGN = 1
_STREAM_MACHINE_BASE = 1000


@dataclass(frozen=True)
class FleetConfig:
    m: int
    n: int
    d: int
    K: int
    alpha: float = 0.0
    sigma: float = 0.0
    adversary_kind: str = "corrupt_coefficients"
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.n, self.d, self.K) < 1:
            raise ConfigError("m, n, d, K must all be >= 1")
        if not 0.0 <= self.alpha < 0.5:
            raise ConfigError(f"alpha must be in [0, 0.5), got {self.alpha}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.adversary_kind != "corrupt_coefficients":
            raise ConfigError(f"unknown adversary_kind {self.adversary_kind!r}")
        if self.K > self.n_honest:
            raise ConfigError(
                f"K={self.K} exceeds the honest machine count {self.n_honest}"
            )

    @property
    def n_byzantine(self) -> int:
        return int(math.ceil(self.alpha * self.m))

    @property
    def n_honest(self) -> int:
        return self.m - self.n_byzantine


@dataclass(frozen=True)
class WorkerShard:
    """One machine's local dataset.

    true_cluster is None for Byzantine machines. It is ground-truth
    metadata only; no clustering or optimization operation may read it
    (the attack layer in the optimizer is the single sanctioned reader).
    """

    machine_id: int
    X: np.ndarray
    y: np.ndarray
    true_cluster: int | None = None

    @property
    def is_byzantine(self) -> bool:
        return self.true_cluster is None

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class GroundTruth:
    """True centers and per-machine labels (BYZANTINE sentinel = -1)."""

    centers: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.centers, dtype=float)
        for i in range(C.shape[0]):
            for j in range(i + 1, C.shape[0]):
                if np.array_equal(C[i], C[j]):
                    raise ConfigError(f"true centers {i} and {j} coincide")

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def honest_mask(self) -> np.ndarray:
        return np.asarray(self.labels) != BYZANTINE

    def min_separation(self) -> float:
        C = self.centers
        best = math.inf
        for i in range(C.shape[0]):
            for j in range(i + 1, C.shape[0]):
                best = min(best, float(np.linalg.norm(C[i] - C[j])))
        return best


def _draw_distinct_centers(K: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if d < 64 and K > 2**d:
        raise ConfigError(f"cannot draw {K} distinct centers in {{0,1}}^{d}")
    for _ in range(200):
        C = rng.integers(0, 2, size=(K, d)).astype(float)
        if len({tuple(row) for row in C}) == K:
            return C
    raise DataError("failed to draw pairwise-distinct centers")


def generate_fleet(cfg: FleetConfig) -> tuple[list[WorkerShard], GroundTruth]:
    """Build the synthetic mixture-of-regressions fleet.

    Deterministic per cfg.seed; every machine draws from its own stream
    keyed by machine_id, so the result is independent of generation order.
    """
    centers = _draw_distinct_centers(cfg.K, cfg.d, RngStream(cfg.seed, _STREAM_CENTERS).generator())

    assign_rng = RngStream(cfg.seed, _STREAM_ASSIGN).generator()
    ids = np.arange(cfg.m)
    assign_rng.shuffle(ids)
    honest_ids = np.sort(ids[: cfg.n_honest])
    # uniform assignment: shuffle the honest ids, deal round-robin onto clusters
    dealt = honest_ids.copy()
    assign_rng.shuffle(dealt)
    labels = np.full(cfg.m, BYZANTINE, dtype=int)
    for j, mid in enumerate(dealt):
        labels[mid] = j % cfg.K

    shards = []
    for i in range(cfg.m):
        rng = RngStream(cfg.seed, _STREAM_MACHINE_BASE + i).generator()
        if labels[i] == BYZANTINE:
            w = 3.0 * rng.integers(0, 2, size=cfg.d).astype(float)
            cluster = None
        else:
            w = centers[labels[i]]
            cluster = int(labels[i])
        X = rng.standard_normal((cfg.n, cfg.d))
        y = X @ w + cfg.sigma * rng.standard_normal(cfg.n)
        shards.append(WorkerShard(machine_id=i, X=X, y=y, true_cluster=cluster))
    return shards, GroundTruth(centers=centers, labels=labels)


def generate_symmetric_mixture(
    m: int,
    d: int,
    theta,
    sigma: float,
    outlier_fraction: float = 0.0,
    outlier_scale: float = 20.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric two-cluster Gaussian point cloud with optional outliers.

    Inliers are nu*theta + N(0, sigma^2 I) with nu uniform on {+1, -1};
    outliers sit at outlier_scale*||theta|| in independent random
    directions. Returns (points, labels) with labels in {+1, -1, 0} and 0
    marking outliers.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d,):
        raise ConfigError(f"theta must have shape ({d},), got {theta.shape}")
    if not 0.0 <= outlier_fraction < 0.5:
        raise ConfigError("outlier_fraction must be in [0, 0.5)")
    n_out = int(math.ceil(outlier_fraction * m))
    n_in = m - n_out
    rng = RngStream(seed, 0).generator()
    nu = np.where(rng.random(n_in) < 0.5, 1.0, -1.0)
    inliers = nu[:, None] * theta[None, :] + sigma * rng.standard_normal((n_in, d))
    radius = outlier_scale * np.linalg.norm(theta)
    dirs = rng.standard_normal((n_out, d))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    outliers = radius * dirs
    points = np.vstack([inliers, outliers]) if n_out else inliers
    labels = np.concatenate([nu.astype(int), np.zeros(n_out, dtype=int)])
    perm = rng.permutation(m)
    return points[perm], labels[perm]


def _bernoulli_centered(rng: np.random.Generator, d: int) -> np.ndarray:
    return rng.integers(0, 2, size=d).astype(float) - 0.5


def ingest_threshold_graph(
    points,
    gamma: float,
    min_cluster: int = 1,
    shard_size: int = 1,
    n_adv: int = 0,
    adv_noise=None,
    seed: int = 0,
) -> tuple[list[WorkerShard], GroundTruth]:
    """Fleet from an unlabeled point set via threshold-graph components.

    Components of size >= min_cluster become clusters whose center is the
    component mean. Each component is split into random shards of
    shard_size points (remainders are dropped; the count is logged).
    n_adv adversarial shards are sampled from the unused points and shifted
    by an adv_noise vector (default: elementwise Bernoulli(1/2) - 0.5),
    which shifts each such shard's mean by exactly that vector.

    Shards produced here carry raw feature points in X (y is zero); pair
    them with the location loss, under which a shard's local minimizer is
    its mean.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        raise ConfigError(f"expected points of shape (N, d), got {P.shape}")
    if shard_size < 1 or min_cluster < 1 or n_adv < 0:
        raise ConfigError("shard_size and min_cluster must be >= 1, n_adv >= 0")
    if adv_noise is None:
        adv_noise = _bernoulli_centered
    comps = threshold_components(P, gamma)
    # a surviving component must also fill at least one shard, else its
    # cluster would exist with zero machines
    keep_size = max(min_cluster, shard_size)
    surviving = [c for c in comps if len(c) >= keep_size]
    if not surviving:
        raise DataError(
            f"no connected component reaches min_cluster={min_cluster} at gamma={gamma}"
        )
    dropped_comps = [c for c in comps if len(c) < keep_size]
    centers = np.stack([P[c].mean(axis=0) for c in surviving])

    rng = RngStream(seed, 0).generator()
    shards: list[WorkerShard] = []
    label_list: list[int] = []
    unused: list[np.ndarray] = [c for c in dropped_comps]
    n_remainder = 0
    for k, comp in enumerate(surviving):
        order = rng.permutation(comp)
        n_full = len(comp) // shard_size
        for s in range(n_full):
            idx = np.sort(order[s * shard_size : (s + 1) * shard_size])
            shards.append(
                WorkerShard(
                    machine_id=len(shards),
                    X=P[idx].copy(),
                    y=np.zeros(len(idx)),
                    true_cluster=k,
                )
            )
            label_list.append(k)
        rem = order[n_full * shard_size :]
        n_remainder += len(rem)
        if len(rem):
            unused.append(np.asarray(rem))
    if n_remainder or dropped_comps:
        logger.info(
            "ingest: dropped %d remainder points and %d undersized components",
            n_remainder,
            len(dropped_comps),
        )

    pool = np.concatenate(unused) if unused else np.empty(0, dtype=int)
    if n_adv > 0 and len(pool) == 0:
        logger.warning("ingest: unused-point pool is empty; adversarial shards sample all points")
        pool = np.arange(P.shape[0])
    for _ in range(n_adv):
        replace = len(pool) < shard_size
        idx = rng.choice(pool, size=shard_size, replace=replace)
        shift = np.asarray(adv_noise(rng, P.shape[1]), dtype=float)
        shards.append(
            WorkerShard(
                machine_id=len(shards),
                X=P[idx] + shift[None, :],
                y=np.zeros(shard_size),
                true_cluster=None,
            )
        )
        label_list.append(BYZANTINE)

    truth = GroundTruth(centers=centers, labels=np.asarray(label_list, dtype=int))
    return shards, truth


def percentile_gamma(points, q: float = 10.0, max_pairs: int = 200_000, seed: int = 0) -> float:
    """Distance threshold default: the q-th percentile of pairwise
    distances, estimated on a random sample of pairs for large N."""
    P = np.asarray(points, dtype=float)
    N = P.shape[0]
    if N < 2:
        raise DataError("need at least 2 points to pick a distance threshold")
    n_pairs = N * (N - 1) // 2
    if n_pairs <= max_pairs:
        ii, jj = np.triu_indices(N, k=1)
    else:
        rng = RngStream(seed, 0).generator()
        ii = rng.integers(0, N, size=max_pairs)
        jj = rng.integers(0, N, size=max_pairs)
        keep = ii != jj
        ii, jj = ii[keep], jj[keep]
    dists = np.linalg.norm(P[ii] - P[jj], axis=1)
    return float(np.percentile(dists, q))


def read_points_csv(path, delimiter: str = ",", header: str | bool = "auto", label_column: int | None = None) -> np.ndarray:
    """Read a points matrix: one row per point, plain floats.

    header='auto' skips the first line when any of its fields fails float
    parsing. label_column (if given) is dropped; the data are treated as
    unsupervised.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"points file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise DataError(f"points file is empty: {path}")

    def _is_float_row(line: str) -> bool:
        try:
            [float(tok) for tok in line.strip().split(delimiter)]
            return True
        except ValueError:
            return False

    if header == "auto":
        skip = 0 if _is_float_row(first) else 1
    else:
        skip = 1 if header else 0
    data = np.loadtxt(path, delimiter=delimiter, skiprows=skip, ndmin=2)
    if label_column is not None:
        data = np.delete(data, label_column, axis=1)
    if data.size == 0:
        raise DataError(f"no data rows in {path}")
    return data


# ---------------------------------------------------------------------------
# fleet serialization: JSON manifest + one binary shard archive


def save_fleet(directory, shards: list[WorkerShard], truth: GroundTruth, config: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for s in shards:
        arrays[f"X{s.machine_id}"] = s.X
        arrays[f"y{s.machine_id}"] = s.y
    arrays["centers"] = truth.centers
    arrays["labels"] = truth.labels
    np.savez_compressed(directory / "fleet.npz", **arrays)
    manifest = {
        "format": 1,
        "machine_ids": [s.machine_id for s in shards],
        "true_clusters": [s.true_cluster for s in shards],
        "shard_file": "fleet.npz",
        "config": config or {},
    }
    with (directory / "fleet.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_fleet(directory) -> tuple[list[WorkerShard], GroundTruth]:
    directory = Path(directory)
    try:
        with (directory / "fleet.json").open("r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        data = np.load(directory / manifest["shard_file"])
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load fleet from {directory}: {exc}") from exc
    shards = []
    for mid, cluster in zip(manifest["machine_ids"], manifest["true_clusters"]):
        shards.append(
            WorkerShard(
                machine_id=int(mid),
                X=data[f"X{mid}"],
                y=data[f"y{mid}"],
                true_cluster=None if cluster is None else int(cluster),
            )
        )
    truth = GroundTruth(centers=data["centers"], labels=data["labels"])
    return shards, truth
