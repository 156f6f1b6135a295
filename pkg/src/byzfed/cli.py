"""Command-line front end.

Commands:
  synth   run a synthetic-fleet experiment (single cell or config grid)
  grid    like synth, but requires an explicit grid section in the config
  ingest  build a fleet from a points CSV, then run the experiment grid
  replay  rerun a finished experiment from its manifest and compare files

Configs are JSON; flags override file values. Every run writes a
manifest.json (atomically, before any result file) plus four result CSVs
into --out-dir. Progress goes to stdout, diagnostics to stderr; results
live only in the files. BYZFED_THREADS caps the worker pool.

Exit codes: 0 success, 1 config/usage error, 2 runtime/data error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

from .datagen import percentile_gamma, read_points_csv
from .distopt import OptConfig
from .errors import ByzfedError, ConfigError, DataError
from .pipeline import (
    ClusterSpec,
    PipelineConfig,
    config_from_dict,
    config_to_dict,
    run_grid,
)
from .reporting import (
    RunManifest,
    compute_run_id,
    emit_grid_outputs,
    file_sha256,
    load_manifest,
    write_manifest,
)
from .robust_stats import AggregatorSpec

__all__ = ["main"]

_CLUSTERER_ALIASES = {
    "km": "lloyd",
    "lloyd": "lloyd",
    "kgm": "kgeomedian",
    "kgeomedian": "kgeomedian",
    "tkm": "trimmed_kmeans",
    "trimmed_kmeans": "trimmed_kmeans",
    "edge_cut": "edge_cut",
    "edgecut": "edge_cut",
    "if2": "iterfilter2",
    "iterfilter2": "iterfilter2",
}

_AGGREGATOR_ALIASES = {
    "sm": "sample_mean",
    "sample_mean": "sample_mean",
    "tm": "trimmed_mean",
    "trimmed_mean": "trimmed_mean",
    "cm": "coord_median",
    "coord_median": "coord_median",
    "gm": "geo_median",
    "geo_median": "geo_median",
    "if": "iter_filter",
    "iter_filter": "iter_filter",
}

_CLUSTERER_DISPLAY = {
    "lloyd": "KM",
    "kgeomedian": "KGM",
    "trimmed_kmeans": "TKM",
    "edge_cut": "EC",
    "iterfilter2": "IF2",
}

_AGGREGATOR_DISPLAY = {
    "sample_mean": "SM",
    "trimmed_mean": "TM",
    "coord_median": "CM",
    "geo_median": "GM",
    "iter_filter": "IF",
}

_DEFAULT_SYNTH = {
    "fleet": {"type": "synthetic", "m": 20, "n": 20, "d": 5, "K": 2, "alpha": 0.0, "sigma": 0.0},
    "solver": {"kind": "erm", "loss": "squared_error"},
    "cluster": {"method": "trimmed_kmeans", "warm_fraction": 0.6},
    "opt": {"aggregator": {"kind": "trimmed_mean", "beta": 0.1}},
    "seed": 0,
    "trials": 1,
}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out-dir", default="byzfed_out", help="output directory")
    common.add_argument("--trials", type=int, help="trials per grid cell")
    common.add_argument("--threads", type=int, default=1, help="worker pool size")
    common.add_argument("--alpha", type=float, help="Byzantine fraction override")
    common.add_argument("--sigma", type=float, help="noise level override")
    common.add_argument("--clusterer", help="cluster method (km/kgm/tkm/edge_cut/if2)")
    common.add_argument("--aggregator", help="robust aggregator (sm/tm/cm/gm/if)")
    common.add_argument("--beta", type=float, help="trim fraction for trimmed aggregators")
    common.add_argument("--gamma", type=float, help="distance threshold (edge_cut / ingest)")

    parser = argparse.ArgumentParser(prog="byzfed", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", parents=[common], help="synthetic fleet experiment")
    p_synth.set_defaults(func=cmd_synth)

    p_grid = sub.add_parser("grid", parents=[common], help="explicit clusterer x optimizer grid")
    p_grid.set_defaults(func=cmd_grid)

    p_ingest = sub.add_parser("ingest", parents=[common], help="experiment on an ingested points CSV")
    p_ingest.add_argument("--csv", required=True, help="points CSV file")
    p_ingest.add_argument("--shard-size", type=int, default=50)
    p_ingest.add_argument("--n-adv", type=int, default=0, help="adversarial shard count")
    p_ingest.add_argument("--min-cluster", type=int, default=1)
    p_ingest.add_argument("--label-column", type=int, help="column index to drop")
    p_ingest.set_defaults(func=cmd_ingest)

    p_replay = sub.add_parser("replay", help="rerun from a manifest and compare outputs")
    p_replay.add_argument("--manifest", required=True, help="manifest.json or its directory")
    p_replay.add_argument("--out-dir", help="directory for the replayed outputs")
    p_replay.add_argument("--threads", type=int, help="worker pool size override")
    p_replay.set_defaults(func=cmd_replay)
    return parser


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    return data


def _deep_merge(dst: dict, src: dict) -> dict:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_merge(dst[k], v)
        else:
            dst[k] = v
    return dst


def _alias(table: dict, value: str, what: str) -> str:
    key = value.strip().lower()
    if key not in table:
        raise ConfigError(f"unknown {what} {value!r}; choices: {sorted(set(table.values()))}")
    return table[key]


def _apply_overrides(data: dict, args) -> dict:
    if args.seed is not None:
        data["seed"] = args.seed
    if args.trials is not None:
        data["trials"] = args.trials
        if isinstance(data.get("grid"), dict):
            data["grid"]["trials"] = args.trials
    fleet = data.setdefault("fleet", {})
    if args.alpha is not None:
        fleet["alpha"] = args.alpha
    if args.sigma is not None:
        fleet["sigma"] = args.sigma
    cluster = data.setdefault("cluster", {})
    if args.clusterer is not None:
        cluster["method"] = _alias(_CLUSTERER_ALIASES, args.clusterer, "clusterer")
    if args.gamma is not None and fleet.get("type") != "ingest":
        cluster["gamma"] = args.gamma
    opt = data.setdefault("opt", {})
    agg = opt.setdefault("aggregator", {})
    if args.aggregator is not None:
        agg["kind"] = _alias(_AGGREGATOR_ALIASES, args.aggregator, "aggregator")
    if args.beta is not None:
        agg["beta"] = args.beta
    return data


def _resolve_threads(requested: int | None) -> int:
    threads = max(1, requested or 1)
    cap = os.environ.get("BYZFED_THREADS")
    if cap:
        try:
            threads = min(threads, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"BYZFED_THREADS must be an integer, got {cap!r}") from exc
    return threads


def _opt_to_dict(opt: OptConfig) -> dict:
    d = asdict(opt)
    d["init"] = None if opt.init is None else [float(v) for v in opt.init]
    d["aggregator"] = asdict(opt.aggregator)
    return d


def _opt_from_dict(data: dict) -> OptConfig:
    d = dict(data)
    if isinstance(d.get("aggregator"), dict):
        d["aggregator"] = AggregatorSpec(**d["aggregator"])
    return OptConfig(**d)


def _grid_specs(data: dict, base_cfg: PipelineConfig):
    """(clusterers, optimizers, trials) from the config's grid section, or
    a 1x1 grid around the base config."""
    grid = data.get("grid")
    if grid:
        try:
            clusterers = [
                (str(g["name"]), ClusterSpec(**{k: v for k, v in g.items() if k != "name"}))
                for g in grid["clusterers"]
            ]
            optimizers = [
                (str(g["name"]), _opt_from_dict({k: v for k, v in g.items() if k != "name"}))
                for g in grid["optimizers"]
            ]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad grid section: {exc}") from exc
        trials = int(grid.get("trials", data.get("trials", 1)))
        return clusterers, optimizers, trials
    cname = _CLUSTERER_DISPLAY[base_cfg.cluster.method]
    if base_cfg.opt.local_steps > 1:
        oname = "FA"
    else:
        oname = _AGGREGATOR_DISPLAY[base_cfg.opt.aggregator.kind]
    trials = int(data.get("trials", 1))
    return [(cname, base_cfg.cluster)], [(oname, base_cfg.opt)], trials


def _grid_manifest_dict(clusterers, optimizers, trials) -> dict:
    return {
        "clusterers": [[name, asdict(spec)] for name, spec in clusterers],
        "optimizers": [[name, _opt_to_dict(opt)] for name, opt in optimizers],
        "trials": trials,
    }


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("byzfed")
    except Exception:
        return "unknown"


def _execute(data: dict, args, command: str) -> int:
    base_cfg = config_from_dict(data)
    clusterers, optimizers, trials = _grid_specs(data, base_cfg)
    threads = _resolve_threads(args.threads)
    out_dir = Path(args.out_dir)

    grid_dict = _grid_manifest_dict(clusterers, optimizers, trials)
    config_dict = config_to_dict(base_cfg)
    run_id = compute_run_id({"config": config_dict, "grid": grid_dict})
    manifest = RunManifest(
        run_id=run_id,
        seed=base_cfg.seed,
        config=config_dict,
        grid=grid_dict,
        command=command,
        version=_version(),
        threads=threads,
    )
    write_manifest(out_dir, manifest)
    print(f"[byzfed] run {run_id}: {len(clusterers) * len(optimizers)} cells x {trials} trials "
          f"({threads} threads)", flush=True)

    outcomes, summary = run_grid(
        base_cfg, clusterers, optimizers, trials, threads=threads
    )
    files = emit_grid_outputs(out_dir, run_id, outcomes, summary)
    if all(o.result is None for o in outcomes):
        for o in outcomes[:1]:
            print(f"error: every trial failed; first failure: {o.error}", file=sys.stderr)
        return 2
    for row in summary:
        print(
            f"[byzfed] {row['cell']}: est_error mean={row['est_error_mean']:.6g} "
            f"sd={row['est_error_sd']:.6g} failed={row['n_failed']}/{row['n_trials']}",
            flush=True,
        )
    n_found = next(
        (len(o.result.true_centers) for o in outcomes if o.result is not None
         and o.result.true_centers is not None),
        None,
    )
    if command == "ingest" and n_found is not None:
        print(f"[byzfed] ingest produced {n_found} clusters", flush=True)
    print(f"[byzfed] wrote {', '.join(files)} to {out_dir}", flush=True)
    return 0


def cmd_synth(args) -> int:
    data = copy.deepcopy(_DEFAULT_SYNTH)
    if args.config:
        _deep_merge(data, _load_config_file(args.config))
    _apply_overrides(data, args)
    return _execute(data, args, "synth")


def cmd_grid(args) -> int:
    data = copy.deepcopy(_DEFAULT_SYNTH)
    if args.config:
        _deep_merge(data, _load_config_file(args.config))
    if not data.get("grid"):
        raise ConfigError("the grid command needs a 'grid' section in the config")
    _apply_overrides(data, args)
    return _execute(data, args, "grid")


def cmd_ingest(args) -> int:
    data = {
        "solver": {"kind": "erm", "loss": "location"},
        "cluster": {"method": "trimmed_kmeans", "warm_fraction": 0.6},
        "opt": {"aggregator": {"kind": "trimmed_mean", "beta": 0.1}},
        "seed": 0,
        "trials": 1,
    }
    if args.config:
        _deep_merge(data, _load_config_file(args.config))
    if not Path(args.csv).exists():
        raise DataError(f"points file not found: {args.csv}")
    gamma = args.gamma
    if gamma is None:
        gamma = data.get("fleet", {}).get("gamma")
    if gamma is None:
        points = read_points_csv(args.csv, label_column=args.label_column)
        gamma = percentile_gamma(points)
        print(f"[byzfed] gamma defaulted to {gamma:.6g} "
              "(10th percentile of sampled pairwise distances)", flush=True)
    data["fleet"] = {
        "type": "ingest",
        "path": str(args.csv),
        "gamma": float(gamma),
        "shard_size": args.shard_size,
        "n_adv": args.n_adv,
        "min_cluster": args.min_cluster,
        "label_column": args.label_column,
    }
    data.setdefault("solver", {})["loss"] = "location"
    _apply_overrides(data, args)
    return _execute(data, args, "ingest")


def cmd_replay(args) -> int:
    manifest = load_manifest(args.manifest)
    src_dir = Path(args.manifest)
    if src_dir.is_file():
        src_dir = src_dir.parent

    base_cfg = config_from_dict(manifest.config)
    try:
        clusterers = [(name, ClusterSpec(**spec)) for name, spec in manifest.grid["clusterers"]]
        optimizers = [(name, _opt_from_dict(spec)) for name, spec in manifest.grid["optimizers"]]
        trials = int(manifest.grid["trials"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"manifest grid section is unusable: {exc}") from exc
    threads = _resolve_threads(args.threads if args.threads is not None else manifest.threads)

    out_dir = Path(args.out_dir) if args.out_dir else Path(
        tempfile.mkdtemp(prefix=f"byzfed_replay_{manifest.run_id}_")
    )
    print(f"[byzfed] replaying run {manifest.run_id} into {out_dir}", flush=True)
    outcomes, summary = run_grid(base_cfg, clusterers, optimizers, trials, threads=threads)
    emit_grid_outputs(out_dir, manifest.run_id, outcomes, summary)

    all_match = True
    for name in manifest.files:
        orig, new = src_dir / name, out_dir / name
        if not orig.exists():
            print(f"[byzfed] {name}: original missing", flush=True)
            all_match = False
        elif file_sha256(orig) == file_sha256(new):
            print(f"[byzfed] {name}: identical", flush=True)
        else:
            print(f"[byzfed] {name}: DIFFERS", flush=True)
            all_match = False
    if not all_match:
        print("[byzfed] replay mismatch", file=sys.stderr, flush=True)
        return 2
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ByzfedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
