"""End-to-end three-stage pipeline and the seeded experiment grid.

Stage I computes every machine's local ERM (exactly or by a configured
inexact solver), Stage II clusters the ERM vectors, Stage III runs
Byzantine-robust distributed optimization inside each estimated cluster,
initialized at that cluster's Stage-II center. The headline metric is
est_error = max over matched clusters of ||w_hat - w*|| / sqrt(d).

All randomness is derived from PipelineConfig.seed before any parallel
dispatch, so results are independent of scheduling and thread count.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import (
    ClusteringState,
    LloydVariant,
    MisclusterReport,
    edge_cut_cluster,
    iterfilter_2cluster,
    mismetrics,
    run_lloyd_variant,
    warm_start_init,
)
from .datagen import (
    FleetConfig,
    GroundTruth,
    WorkerShard,
    generate_fleet,
    ingest_threshold_graph,
    read_points_csv,
)
from .distopt import AttackSpec, OptConfig, fed_avg_robust, pooled_auto_step, robust_gd
from .errors import ByzfedError, ConfigError, NumericError
from .localsolve import LossSpec, gd_erm, local_erm, online_to_batch
from .numerics import derive_seed, top_eigenpair
from .robust_stats import AggregatorSpec

__all__ = [
    "SolverSpec",
    "ClusterSpec",
    "IngestSpec",
    "PipelineConfig",
    "RunResult",
    "TrialOutcome",
    "run_pipeline",
    "run_grid",
    "stage1_erms",
    "config_to_dict",
    "config_from_dict",
    "run_id_for",
]

_SOLVER_KINDS = ("erm", "gd", "ogd")
_CLUSTER_METHODS = ("edge_cut", "lloyd", "kgeomedian", "trimmed_kmeans", "iterfilter2")


@dataclass(frozen=True)
class SolverSpec:
    """Stage-I solver: exact ERM, batch GD, or one-pass online GD.

    step=None lets GD use 1/lambda_max of each machine's own Hessian.
    """

    kind: str = "erm"
    loss: str = "squared_error"
    step: float | None = None
    iters: int = 100
    lam: float = 1.0
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in _SOLVER_KINDS:
            raise ConfigError(f"unknown solver {self.kind!r}; expected one of {_SOLVER_KINDS}")
        LossSpec(self.loss)  # validates
        if self.iters < 1:
            raise ConfigError("iters must be >= 1")
        if self.step is not None and not self.step > 0:
            raise ConfigError("step must be > 0")

    @property
    def loss_spec(self) -> LossSpec:
        return LossSpec(self.loss)


@dataclass(frozen=True)
class ClusterSpec:
    """Stage-II method and its knobs.

    warm_fraction configures the partially-correct initialization used by
    the Lloyd-family methods (and the two-cluster filter's starting
    center); gamma/min_cluster belong to edge_cut; T and variance_bound to
    iterfilter2.
    """

    method: str = "trimmed_kmeans"
    C: float = 2.0
    sigma_hat: float | None = None
    max_iter: int = 15
    warm_fraction: float = 0.6
    gamma: float | None = None
    min_cluster: int = 1
    T: int = 5
    variance_bound: float | None = None

    def __post_init__(self):
        if self.method not in _CLUSTER_METHODS:
            raise ConfigError(
                f"unknown cluster method {self.method!r}; expected one of {_CLUSTER_METHODS}"
            )
        if self.method == "edge_cut" and self.gamma is None:
            raise ConfigError("edge_cut needs gamma")
        if not 0.0 <= self.warm_fraction <= 1.0:
            raise ConfigError("warm_fraction must be in [0, 1]")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be >= 0")
        if self.T < 1:
            raise ConfigError("T must be >= 1")

    def variant(self) -> LloydVariant:
        if self.method == "lloyd":
            return LloydVariant.lloyd()
        if self.method == "kgeomedian":
            return LloydVariant.kgeomedian()
        if self.method == "trimmed_kmeans":
            return LloydVariant.trimmed(C=self.C, sigma_hat=self.sigma_hat)
        raise ConfigError(f"{self.method} has no Lloyd variant")


@dataclass(frozen=True)
class IngestSpec:
    """External dataset: CSV of points, threshold-graph clustering into
    shards plus synthetic adversarial shards. Pairs with the location
    loss."""

    path: str
    gamma: float
    shard_size: int = 50
    n_adv: int = 0
    min_cluster: int = 1
    label_column: int | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if self.shard_size < 1 or self.min_cluster < 1 or self.n_adv < 0:
            raise ConfigError("shard_size, min_cluster must be >= 1 and n_adv >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    """Complete description of one seeded run.

    seed governs every random draw (fleet, initialization, attacks); a
    synthetic fleet spec's own seed field is overwritten with a derived
    stream. Output locations are a CLI concern and not part of the
    config's identity.
    """

    fleet: FleetConfig | IngestSpec
    solver: SolverSpec = field(default_factory=SolverSpec)
    cluster: ClusterSpec = field(default_factory=ClusterSpec)
    opt: OptConfig = field(default_factory=OptConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.fleet, IngestSpec) and self.solver.loss != "location":
            raise ConfigError("ingested fleets carry raw points; use the location loss")


@dataclass
class RunResult:
    """Outputs of one pipeline run.

    est_error is NaN when no ground truth exists. matched_pairs lists
    (estimated cluster, true cluster) index pairs used for est_error;
    estimated clusters beyond the matching are counted in n_unmatched and
    excluded from the metric.
    """

    per_cluster_w_hat: np.ndarray
    est_error: float
    clustering_history: list[MisclusterReport]
    opt_trajectories: list[np.ndarray]
    wall_times: dict[str, float]
    cluster_state: ClusteringState
    matched_pairs: list[tuple[int, int]]
    n_unmatched: int = 0
    true_centers: np.ndarray | None = None


@dataclass
class TrialOutcome:
    """One grid cell x trial: either a RunResult or an error string."""

    cell: str
    clusterer: str
    optimizer: str
    trial: int
    seed: int
    result: RunResult | None
    error: str | None = None


# ---------------------------------------------------------------------------
# stage I


def _batched_gd_erms(shards, solver: SolverSpec) -> np.ndarray:
    """Vectorized batch GD across machines with identical shard shapes.

    Same recursion as gd_erm per machine, evaluated with batched matmuls.
    """
    X = np.stack([s.X for s in shards])
    Y = np.stack([s.y for s in shards])
    m, n, d = X.shape
    XT = np.ascontiguousarray(X.transpose(0, 2, 1))
    if solver.step is None:
        steps = np.empty(m)
        for i in range(m):
            lam, _ = top_eigenpair(XT[i] @ X[i] / n)
            steps[i] = 1.0 / lam if lam > 0 else 1.0
    else:
        steps = np.full(m, solver.step)
    W = np.zeros((m, d))
    for t in range(solver.iters):
        R = (X @ W[:, :, None])[:, :, 0] - Y
        G = (XT @ R[:, :, None])[:, :, 0] / n
        W -= steps[:, None] * G
        if not np.all(np.isfinite(W)) or np.linalg.norm(W, axis=1).max() > 1e12:
            raise NumericError(f"stage-I gradient descent diverged at iteration {t + 1}")
    return W


def stage1_erms(shards: list[WorkerShard], solver: SolverSpec) -> np.ndarray:
    """Local model estimates for every machine, stacked (m, d)."""
    loss = solver.loss_spec
    if solver.kind == "gd" and loss.kind == "squared_error":
        shapes = {s.X.shape for s in shards}
        if len(shapes) == 1:
            return _batched_gd_erms(shards, solver)
    out = []
    for s in shards:
        if solver.kind == "erm":
            out.append(local_erm(s, loss))
        elif solver.kind == "gd":
            out.append(gd_erm(s, loss, step=solver.step, iters=solver.iters))
        else:
            out.append(online_to_batch(s, loss, lam=solver.lam, radius=solver.radius))
    return np.stack(out)


# ---------------------------------------------------------------------------
# stage II


def _oracle_state(erms, truth: GroundTruth) -> ClusteringState:
    """Ground-truth clustering of honest machines; Byzantine machines fall
    to the nearest true center so they still contaminate Stage III."""
    labels = np.asarray(truth.labels).copy()
    byz = np.flatnonzero(~truth.honest_mask)
    if byz.size:
        d2 = ((erms[byz][:, None, :] - truth.centers[None, :, :]) ** 2).sum(axis=2)
        labels[byz] = np.argmin(d2, axis=1)
    return ClusteringState(labels=labels, centers=truth.centers.astype(float), iteration=0)


def _stage2(cfg: PipelineConfig, erms, truth, oracle_clusters):
    history: list[MisclusterReport] = []
    if oracle_clusters:
        if truth is None:
            raise ConfigError("oracle clustering requires ground truth")
        state = _oracle_state(erms, truth)
        history.append(mismetrics(state, truth))
        return state, history

    spec = cfg.cluster
    if spec.method == "edge_cut":
        state = edge_cut_cluster(erms, spec.gamma, spec.min_cluster)
        if truth is not None and state.K == truth.K:
            history.append(mismetrics(state, truth))
        return state, history

    if truth is None:
        raise ConfigError(
            f"{spec.method} initializes from a warm start and needs ground truth; "
            "use edge_cut on unlabeled data"
        )
    init_seed = derive_seed(cfg.seed, 1)
    K = truth.K

    if spec.method == "iterfilter2":
        if K != 2:
            raise ConfigError("iterfilter2 applies to the symmetric 2-cluster setting only")
        warm = warm_start_init(erms, truth, spec.warm_fraction, K, seed=init_seed)
        filt = AggregatorSpec.filtering(variance_bound=spec.variance_bound)
        theta, signs = iterfilter_2cluster(erms, warm.centers[0], spec.T, filter=filt)
        labels = np.where(signs > 0, 0, 1)
        state = ClusteringState(
            labels=labels, centers=np.stack([theta, -theta]), iteration=spec.T
        )
        history.append(mismetrics(state, truth))
        return state, history

    init = warm_start_init(erms, truth, spec.warm_fraction, K, seed=init_seed)
    state, history = run_lloyd_variant(
        erms, init, spec.variant(), max_iter=spec.max_iter, ground_truth=truth
    )
    return state, history


# ---------------------------------------------------------------------------
# stage III and metric


def _stage3(cfg: PipelineConfig, shards, state: ClusteringState, loss: LossSpec):
    w_hats = np.empty_like(state.centers)
    trajectories: list[np.ndarray] = []
    labels = state.labels
    for k in range(state.K):
        members = [shards[i] for i in np.flatnonzero(labels == k)]
        if not members:
            w_hats[k] = state.centers[k]
            trajectories.append(state.centers[k][None, :].copy())
            continue
        opt = replace(cfg.opt, init=state.centers[k])
        attack = replace(cfg.attack, seed=derive_seed(cfg.seed, 2, k))
        if opt.local_steps > 1:
            w, traj = fed_avg_robust(members, loss, opt, attack)
        else:
            w, traj = robust_gd(members, loss, opt, attack)
        w_hats[k] = w
        trajectories.append(traj)
    return w_hats, trajectories


def _match_centers(w_hats: np.ndarray, centers_true: np.ndarray) -> list[tuple[int, int]]:
    """Pair estimated clusters with true centers by distance: optimal
    assignment when the counts agree, greedy nearest-pair otherwise."""
    dist = np.linalg.norm(w_hats[:, None, :] - centers_true[None, :, :], axis=2)
    if w_hats.shape[0] == centers_true.shape[0]:
        rows, cols = linear_sum_assignment(dist)
        return list(zip(rows.tolist(), cols.tolist()))
    pairs = []
    work = dist.copy()
    for _ in range(min(work.shape)):
        i, j = np.unravel_index(np.argmin(work), work.shape)
        pairs.append((int(i), int(j)))
        work[i, :] = np.inf
        work[:, j] = np.inf
    return pairs


def _tag_stage(stage: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, ByzfedError):
                exc.args = (f"{stage}: {exc}",)
            return False

    return _Ctx()


def run_pipeline(
    cfg: PipelineConfig,
    *,
    fleet: list[WorkerShard] | None = None,
    ground_truth: GroundTruth | None = None,
    erms: np.ndarray | None = None,
    oracle_clusters: bool = False,
) -> RunResult:
    """Run the three stages for one config and seed.

    A pre-built fleet (and optionally its Stage-I ERMs) can be injected to
    share work across grid cells; the result is bit-identical to building
    them from cfg, since both paths use the same derived streams.
    """
    times: dict[str, float] = {}
    loss = cfg.solver.loss_spec

    t0 = time.perf_counter()
    if fleet is None:
        if erms is not None:
            raise ConfigError("erms injection requires an injected fleet")
        with _tag_stage("stage1"):
            fleet, ground_truth = materialize_fleet(cfg)
    for i, s in enumerate(fleet):
        if s.machine_id != i:
            raise ConfigError("shards must be ordered by machine_id")
    with _tag_stage("stage1"):
        if erms is None:
            erms = stage1_erms(fleet, cfg.solver)
    times["stage1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _tag_stage("stage2"):
        state, history = _stage2(cfg, erms, ground_truth, oracle_clusters)
    times["stage2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _tag_stage("stage3"):
        w_hats, trajectories = _stage3(cfg, fleet, state, loss)
    times["stage3"] = time.perf_counter() - t0

    if ground_truth is not None:
        pairs = _match_centers(w_hats, ground_truth.centers)
        d = fleet[0].X.shape[1]
        est_error = max(
            float(np.linalg.norm(w_hats[i] - ground_truth.centers[j])) / np.sqrt(d)
            for i, j in pairs
        )
        n_unmatched = w_hats.shape[0] - len(pairs)
    else:
        pairs, est_error, n_unmatched = [], float("nan"), w_hats.shape[0]

    return RunResult(
        per_cluster_w_hat=w_hats,
        est_error=est_error,
        clustering_history=history,
        opt_trajectories=trajectories,
        wall_times=times,
        cluster_state=state,
        matched_pairs=pairs,
        n_unmatched=n_unmatched,
        true_centers=None if ground_truth is None else ground_truth.centers.copy(),
    )


def materialize_fleet(cfg: PipelineConfig) -> tuple[list[WorkerShard], GroundTruth]:
    """Build the fleet named by the config, seeded from cfg.seed."""
    fleet_seed = derive_seed(cfg.seed, 0)
    if isinstance(cfg.fleet, FleetConfig):
        return generate_fleet(replace(cfg.fleet, seed=fleet_seed))
    spec = cfg.fleet
    points = read_points_csv(spec.path, label_column=spec.label_column)
    return ingest_threshold_graph(
        points,
        gamma=spec.gamma,
        min_cluster=spec.min_cluster,
        shard_size=spec.shard_size,
        n_adv=spec.n_adv,
        seed=fleet_seed,
    )


# ---------------------------------------------------------------------------
# grid


def run_grid(
    base_cfg: PipelineConfig,
    clusterers: list[tuple[str, ClusterSpec]],
    optimizers: list[tuple[str, OptConfig]],
    n_trials: int,
    seed: int | None = None,
    threads: int = 1,
    oracle_clusters: bool = False,
) -> tuple[list[TrialOutcome], list[dict]]:
    """Cartesian product of clusterers x optimizers over seeded trials.

    Trial t uses the same derived seed in every cell, so cells are paired:
    they see identical fleets and Stage-I ERMs (computed once per trial
    and shared). Cell failures are recorded as error strings and the grid
    continues. Returns (outcomes, per-cell summary rows); outcomes are
    ordered cell-major then by trial, independent of thread count.
    """
    if not clusterers or not optimizers:
        raise ConfigError("clusterers and optimizers must be nonempty")
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    master = base_cfg.seed if seed is None else seed
    trial_seeds = [derive_seed(master, t) for t in range(n_trials)]

    def _prepare(t):
        try:
            cfg = replace(base_cfg, seed=trial_seeds[t])
            fleet, truth = materialize_fleet(cfg)
            return fleet, truth, stage1_erms(fleet, cfg.solver)
        except Exception as exc:  # fleet failure poisons the trial, not the grid
            return exc

    with ThreadPoolExecutor(max_workers=threads) as pool:
        prepared = list(pool.map(_prepare, range(n_trials)))

        tasks = []
        for cname, cspec in clusterers:
            for oname, ospec in optimizers:
                for t in range(n_trials):
                    tasks.append((cname, cspec, oname, ospec, t))

        def _run(task):
            cname, cspec, oname, ospec, t = task
            cell = f"{cname}+{oname}"
            cfg = replace(base_cfg, cluster=cspec, opt=ospec, seed=trial_seeds[t])
            if isinstance(prepared[t], Exception):
                return TrialOutcome(
                    cell, cname, oname, t, trial_seeds[t], None, repr(prepared[t])
                )
            fleet, truth, erms = prepared[t]
            try:
                result = run_pipeline(
                    cfg,
                    fleet=fleet,
                    ground_truth=truth,
                    erms=erms,
                    oracle_clusters=oracle_clusters,
                )
                return TrialOutcome(cell, cname, oname, t, trial_seeds[t], result)
            except Exception as exc:  # record and continue per grid contract
                return TrialOutcome(cell, cname, oname, t, trial_seeds[t], None, repr(exc))

        outcomes = list(pool.map(_run, tasks))

    summary = summarize_grid(outcomes)
    return outcomes, summary


def summarize_grid(outcomes: list[TrialOutcome]) -> list[dict]:
    """Per-cell mean and sample standard deviation of est_error."""
    cells: dict[str, list[TrialOutcome]] = {}
    order = []
    for o in outcomes:
        if o.cell not in cells:
            cells[o.cell] = []
            order.append(o.cell)
        cells[o.cell].append(o)
    rows = []
    for cell in order:
        outs = cells[cell]
        errs = [o.result.est_error for o in outs if o.result is not None]
        errs = [e for e in errs if np.isfinite(e)]
        rows.append(
            {
                "cell": cell,
                "clusterer": outs[0].clusterer,
                "optimizer": outs[0].optimizer,
                "n_trials": len(outs),
                "n_failed": sum(1 for o in outs if o.result is None),
                "est_error_mean": float(np.mean(errs)) if errs else float("nan"),
                "est_error_sd": float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# config (de)serialization and run identity


def config_to_dict(cfg: PipelineConfig) -> dict:
    """JSON-safe snapshot; round-trips through config_from_dict."""
    if isinstance(cfg.fleet, FleetConfig):
        fleet = {"type": "synthetic", **asdict(cfg.fleet)}
    else:
        fleet = {"type": "ingest", **asdict(cfg.fleet)}
    opt = asdict(cfg.opt)
    opt["init"] = None if cfg.opt.init is None else [float(v) for v in cfg.opt.init]
    attack = asdict(cfg.attack)
    attack["vector"] = (
        None if cfg.attack.vector is None else [float(v) for v in cfg.attack.vector]
    )
    return {
        "fleet": fleet,
        "solver": asdict(cfg.solver),
        "cluster": asdict(cfg.cluster),
        "opt": opt,
        "attack": attack,
        "seed": cfg.seed,
    }


def config_from_dict(data: dict) -> PipelineConfig:
    try:
        fleet_data = dict(data["fleet"])
        kind = fleet_data.pop("type")
        if kind == "synthetic":
            fleet = FleetConfig(**fleet_data)
        elif kind == "ingest":
            fleet = IngestSpec(**fleet_data)
        else:
            raise ConfigError(f"unknown fleet type {kind!r}")
        opt_data = dict(data.get("opt", {}))
        if "aggregator" in opt_data and isinstance(opt_data["aggregator"], dict):
            opt_data["aggregator"] = AggregatorSpec(**opt_data["aggregator"])
        attack_data = dict(data.get("attack", {}))
        return PipelineConfig(
            fleet=fleet,
            solver=SolverSpec(**data.get("solver", {})),
            cluster=ClusterSpec(**data.get("cluster", {})),
            opt=OptConfig(**opt_data),
            attack=AttackSpec(**attack_data),
            seed=int(data.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def run_id_for(cfg: PipelineConfig) -> str:
    """Deterministic 12-hex identifier of the config snapshot."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]
