"""``hpmrec`` command line: prepare, build-graph, train, evaluate, grid-search, gradcheck.

Configuration is a flat JSON object; every key also exists as a
``--kebab-case`` flag that overrides the file.  Exit codes: 0 success,
2 input/config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as D
from .errors import ConfigError, DataError, NumericalError
from .graphs import build_knn_graph, save_sparse
from .model import (
    CONTENT_MODALITIES,
    DEFAULT_GRIDS,
    HyperParams,
    build_inputs,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger("hpmrec")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

# run-level keys; hyperparameter keys come from HyperParams
RUN_DEFAULTS = {
    "interactions": None,
    "visual_features": None,
    "textual_features": None,
    "out_dir": "hpmrec-run",
    "kcore": 5,
    "split_ratios": [0.8, 0.1, 0.1],
    "global_split": False,
    "threads": 1,
    "grids": DEFAULT_GRIDS,
}
_OPTIONAL_TYPES = {"interactions": str, "visual_features": str, "textual_features": str, "clip_norm": float}


def default_config() -> dict:
    cfg = json.loads(json.dumps(RUN_DEFAULTS))
    env_threads = os.environ.get("HPMREC_THREADS")
    if env_threads:
        cfg["threads"] = int(env_threads)
    cfg.update(asdict(HyperParams()))
    return cfg


def _coerce(key, value, default):
    if value is None:
        if key in _OPTIONAL_TYPES:
            return None
        raise ConfigError(f"{key} may not be null")
    kind = _OPTIONAL_TYPES.get(key, type(default))
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if key == "split_ratios":
        if not isinstance(value, list) or len(value) != 3:
            raise ConfigError("split_ratios must be a list of three numbers")
        return [float(v) for v in value]
    if key == "grids":
        if not isinstance(value, dict) or not value:
            raise ConfigError("grids must be a non-empty object")
        for name, points in value.items():
            if name not in HyperParams.field_names():
                raise ConfigError(f"grids: unknown hyperparameter {name!r}")
            if not isinstance(points, list) or not points:
                raise ConfigError(f"grids: {name} needs a non-empty list")
        return value
    raise ConfigError(f"unsupported config key {key}")


def resolve_config(file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- flags, validated; unknown keys are rejected."""
    cfg = default_config()
    for source in (file_cfg or {}, overrides or {}):
        unknown = sorted(set(source) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key, value in source.items():
            cfg[key] = _coerce(key, value, cfg[key])
    hyperparams_from(cfg)
    if cfg["kcore"] < 1 or cfg["threads"] < 1:
        raise ConfigError("kcore and threads must be >= 1")
    return cfg


def hyperparams_from(cfg: dict) -> HyperParams:
    return HyperParams(**{k: cfg[k] for k in HyperParams.field_names()})


def _add_config_flags(parser):
    for key, default in default_config().items():
        flag = "--" + key.replace("_", "-")
        kind = _OPTIONAL_TYPES.get(key, type(default))
        if kind is bool:
            parser.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        elif key == "split_ratios":
            parser.add_argument(flag, dest=key, type=float, nargs=3, default=argparse.SUPPRESS)
        elif key == "grids":
            parser.add_argument(flag, dest=key, type=json.loads, default=argparse.SUPPRESS,
                                help="JSON object mapping hyperparameter names to value lists")
        else:
            parser.add_argument(flag, dest=key, type=kind, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--log-level", default="INFO")
    _add_config_flags(common)

    parser = argparse.ArgumentParser(prog="hpmrec", description="Hypercomplex prompt-aware multimodal recommender.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="load, k-core filter and split interactions")
    sub.add_parser("build-graph", parents=[common], help="build kNN item graphs from prepared features")
    sub.add_parser("train", parents=[common], help="fit the model with early stopping")
    ev = sub.add_parser("evaluate", parents=[common], help="full-ranking metrics for a checkpoint")
    ev.add_argument("--checkpoint", type=Path)
    ev.add_argument("--split", choices=("valid", "test"), default="test")
    sub.add_parser("grid-search", parents=[common], help="fit every point of the configured grids")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check on a tiny model")
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--check-seed", type=int, default=0)
    return parser


# -- commands ----------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _data_dir(cfg) -> Path:
    return Path(cfg["out_dir"]) / "data"


def prepare(cfg: dict) -> dict:
    if not cfg["interactions"]:
        raise ConfigError("prepare needs `interactions`")
    raw = D.load_interactions(cfg["interactions"])
    features = {}
    for m in CONTENT_MODALITIES:
        path = cfg[f"{m}_features"]
        if path:
            features[m] = D.load_features(path, expected_rows=raw.num_items, modality=m)
    table = D.kcore_filter(raw, cfg["kcore"])
    split = D.split_dataset(table, cfg["split_ratios"], seed=cfg["seed"], per_user=not cfg["global_split"])
    out = _data_dir(cfg)
    summary = D.write_split(split, table, out)
    for m, f in features.items():
        D.save_features(D.subset_features(f, table, raw), out / f"{m}.hpmf")
    log.info("prepared %d users, %d items, %d interactions", table.num_users, table.num_items,
             table.num_interactions)
    return summary


def _load_prepared(cfg):
    table, split = D.read_split(_data_dir(cfg))
    features = {}
    for m in CONTENT_MODALITIES:
        path = _data_dir(cfg) / f"{m}.hpmf"
        if not path.exists():
            raise DataError(f"missing prepared {m} features at {path}; run prepare with {m}_features")
        features[m] = D.load_features(path, expected_rows=table.num_items, modality=m)
    return table, split, features


def build_graph(cfg: dict) -> dict:
    hp = hyperparams_from(cfg)
    table, split, features = _load_prepared(cfg)
    out = Path(cfg["out_dir"]) / "graphs"
    out.mkdir(parents=True, exist_ok=True)
    stats = {}
    for m, f in features.items():
        if f.cols == 0:
            raise DataError(f"{m} features are empty")
        g = build_knn_graph(f, hp.knn_k)
        save_sparse(g, out / f"knn_{m}.hpms")
        stats[m] = int(g.nnz)
    inputs = build_inputs(split.train, table.num_users, table.num_items, features, hp)
    op = inputs.item_graph.operator(np.zeros(len(CONTENT_MODALITIES)), hp.item_graph_norm)
    save_sparse(op, out / "fused.hpms")
    stats["fused"] = int(op.nnz)
    stats["k"] = hp.knn_k
    return stats


def _inputs(cfg, hp):
    table, split, features = _load_prepared(cfg)
    return split, features, build_inputs(split.train, table.num_users, table.num_items, features, hp)


def train_cmd(cfg: dict) -> dict:
    from .metrics import evaluate_split
    from .train import fit

    hp = hyperparams_from(cfg)
    split, _, inputs = _inputs(cfg, hp)
    out = Path(cfg["out_dir"])
    result = fit(hp, split, inputs, log_path=out / "train_log.jsonl")
    with open(out / "timing.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.log:
            fh.write(json.dumps({"epoch": rec.epoch, "wall_time": rec.wall_time}) + "\n")
    ckpt = out / "checkpoint.hpmc"
    save_checkpoint(ckpt, result.params, result.adam)
    # score the checkpoint as stored (float32) so `evaluate` reproduces these numbers
    params, _ = load_checkpoint(ckpt, result.params)
    trace = forward(params, inputs, hp)
    report = {
        "hyperparams": asdict(hp),
        "best_epoch": result.best_epoch,
        "stopped_epoch": result.stopped_epoch,
        "valid": evaluate_split(trace, split, "valid").as_dict(),
        "test": evaluate_split(trace, split, "test").as_dict(),
        "checkpoint": str(ckpt),
        "aborted": result.aborted,
    }
    _write_json(out / "report.json", report)
    if result.aborted:
        raise NumericalError(result.aborted)
    return report


def evaluate_cmd(cfg: dict, checkpoint=None, which: str = "test") -> dict:
    from .metrics import evaluate_split

    hp = hyperparams_from(cfg)
    split, features, inputs = _inputs(cfg, hp)
    ckpt = Path(checkpoint) if checkpoint else Path(cfg["out_dir"]) / "checkpoint.hpmc"
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    template = init_params(hp, inputs.num_users, inputs.num_items, {m: f.cols for m, f in features.items()})
    params, _ = load_checkpoint(ckpt, template)
    metrics = evaluate_split(forward(params, inputs, hp), split, which).as_dict()
    metrics["split"] = which
    _write_json(Path(cfg["out_dir"]) / f"metrics_{which}.json", metrics)
    return metrics


def grid_cmd(cfg: dict) -> dict:
    from .train import grid_search

    hp = hyperparams_from(cfg)
    _, split, features = _load_prepared(cfg)
    report = grid_search(hp, cfg["grids"], split, features,
                         on_run=lambda run, _: log.info("grid run %d %s -> %s", run["index"],
                                                        run["overrides"], run["valid"]))
    _write_json(Path(cfg["out_dir"]) / "grid_report.json", report)
    return report


def gradcheck_cmd(cfg: dict, tolerance: float = 1e-4, seed: int = 0) -> dict:
    from .optim import grad_check

    report = grad_check(tolerance=tolerance, seed=seed)
    _write_json(Path(cfg["out_dir"]) / "gradcheck.json", report)
    if not report["passed"]:
        raise NumericalError(f"gradient check failed for {report['failed']}")
    return report


def _limit_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    reserved = {"command", "config", "log_level", "checkpoint", "split", "tolerance", "check_seed"}
    overrides = {k: v for k, v in vars(args).items() if k not in reserved}
    if "split_ratios" in overrides:
        overrides["split_ratios"] = list(overrides["split_ratios"])
    try:
        file_cfg = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = resolve_config(file_cfg, overrides)
        _write_json(Path(cfg["out_dir"]) / "config.json", cfg)
        _limit_threads(cfg["threads"])
        if args.command == "prepare":
            result = prepare(cfg)
        elif args.command == "build-graph":
            result = build_graph(cfg)
        elif args.command == "train":
            result = train_cmd(cfg)
        elif args.command == "evaluate":
            result = evaluate_cmd(cfg, args.checkpoint, args.split)
        elif args.command == "grid-search":
            result = grid_cmd(cfg)
        else:
            result = gradcheck_cmd(cfg, args.tolerance, args.check_seed)
    except (ConfigError, DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"hpmrec: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"hpmrec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
