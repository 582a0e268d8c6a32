"""Command-line entry point: ``egopose {generate-data,train-heatmap,train-pose,eval,ablate}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import write_dataset
from .training import ExperimentConfig, evaluate, run_ablation_suite, train_heatmap, train_pose

DATA_ROOT_ENV = "EGOPOSE_DATA_ROOT"


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _deep_merge(base: dict, update: dict) -> dict:
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_merge(base[k], v)
        else:
            base[k] = v
    return base


def apply_override(d: dict, assignment: str):
    if "=" not in assignment:
        raise ValueError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise KeyError(f"unknown config section {p!r} in {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise KeyError(f"unknown config key {key!r}")
    node[parts[-1]] = parse_value(value)


def load_config(path=None, overrides=(), **fixed) -> ExperimentConfig:
    """Defaults, then the JSON file at ``path``, then ``key=value`` overrides (dotted keys)."""
    d = ExperimentConfig().to_dict()
    if path:
        _deep_merge(d, json.loads(Path(path).read_text()))
    d.update(fixed)
    for o in overrides:
        apply_override(d, o)
    return ExperimentConfig.from_dict(d)


def _data_root(args) -> Path:
    root = args.data or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise SystemExit(f"no dataset root: pass --data or set ${DATA_ROOT_ENV}")
    return Path(root)


def _add_config_args(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set window.length_T=32")
    p.add_argument("--data", help=f"dataset root (default ${DATA_ROOT_ENV})")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egopose", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write a synthetic dataset")
    g.add_argument("--out", help=f"dataset root (default ${DATA_ROOT_ENV})")
    g.add_argument("--records", type=int, default=8)
    g.add_argument("--frames", type=int, default=64)
    g.add_argument("--image-size", type=int, default=64)
    g.add_argument("--test-fraction", type=float, default=0.25)
    g.add_argument("--seed", type=int, default=0)

    h = sub.add_parser("train-heatmap", help="stage 1: heatmap network")
    _add_config_args(h)
    h.add_argument("--resume", help="heatmap checkpoint to continue from")

    t = sub.add_parser("train-pose", help="stage 2: pose network with frozen heatmaps")
    _add_config_args(t)
    t.add_argument("--heatmap", required=True, help="frozen heatmap checkpoint")

    e = sub.add_parser("eval", help="sliding-window evaluation")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--split", default="test")
    e.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="fusion ablation, window sweep and heatmap-loss comparison")
    _add_config_args(a)
    a.add_argument("--heatmap", help="reuse this heatmap checkpoint instead of training one")
    a.add_argument("--window-sweep", default="32,64,128")
    a.add_argument("--no-loss-comparison", action="store_true")
    a.add_argument("--capacity-steps", type=int, default=100)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate-data":
        root = Path(args.out or os.environ.get(DATA_ROOT_ENV) or "")
        if not str(root):
            raise SystemExit(f"no dataset root: pass --out or set ${DATA_ROOT_ENV}")
        index = write_dataset(root, args.records, args.frames, args.seed, args.image_size, args.test_fraction)
        print(json.dumps({"dataset": str(root), "records": len(index["records"])}))
    elif args.command == "train-heatmap":
        cfg = load_config(args.config, args.overrides, stage="heatmap")
        path = train_heatmap(cfg, _data_root(args), args.out, resume_from=args.resume)
        print(json.dumps({"checkpoint": str(path)}))
    elif args.command == "train-pose":
        cfg = load_config(args.config, args.overrides, stage="pose")
        path = train_pose(cfg, _data_root(args), args.heatmap, args.out)
        print(json.dumps({"checkpoint": str(path)}))
    elif args.command == "eval":
        report = evaluate(args.checkpoint, _data_root(args), args.split, args.out)
        print(report.to_json())
    elif args.command == "ablate":
        cfg = load_config(args.config, args.overrides, stage="pose")
        sweep = tuple(int(v) for v in args.window_sweep.split(",") if v)
        tables = run_ablation_suite(cfg, _data_root(args), args.out, args.heatmap, sweep,
                                    include_loss_comparison=not args.no_loss_comparison,
                                    capacity_steps=args.capacity_steps)
        print(json.dumps(tables, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
