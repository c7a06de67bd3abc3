"""Command-line entry point.

Any ``--section.key=value`` argument (``--seed=3``, ``--model.width=32``)
overrides the config: command line beats ``--config`` file beats
``--preset`` beats built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import config as config_mod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import DatasetFormatError, load_feature_dataset
from .experiments import (ABLATION_ROWS, ablation_experiment, benchmark_experiment, row_by_name,
                          toy_experiment, toy_summary)
from .toy import ToyConfig
from .train import TrainingDivergedError, evaluate, model_from_checkpoint, test_dataset, train

log = logging.getLogger("mintad")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--preset", default="desk", choices=sorted(config_mod.PRESETS),
                   help="starting point before the config file (default: desk)")


def _resolve_config(args, extra: list[str]) -> RunConfig:
    base = config_mod.preset(args.preset)
    bad = [a for a in extra if not (a.startswith("--") and "=" in a)]
    if bad:
        raise ConfigError(f"unrecognised arguments: {' '.join(bad)}")
    overrides = [a[2:] for a in extra]
    if args.config is not None:
        return config_mod.load(args.config, overrides, base)
    return config_mod.apply_overrides(base, overrides).validate()


def cmd_train(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        cfg = resume.config
    config_mod.save(cfg, out / "config.ini")
    res = train(cfg, resume=resume, stop_epoch=args.stop_epoch, log_path=out / "loss_log.csv")
    save_checkpoint(res.checkpoint, out / "checkpoint.ckpt")
    last = res.log[-1] if res.log else {}
    print(f"trained to epoch {res.checkpoint.epoch}; final L_total {last.get('total', float('nan')):.6g}")
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    return 0


def cmd_eval(args, extra) -> int:
    if extra:
        raise ConfigError(f"eval takes no config overrides: {' '.join(extra)}")
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    model = model_from_checkpoint(ckpt)
    dataset = load_feature_dataset(args.dataset) if args.dataset else test_dataset(cfg)
    out = Path(args.out or Path(args.checkpoint).parent / "eval")
    ev = evaluate(model, dataset, cfg, dataset_name=args.dataset_name, out_dir=out)
    for k, v in ev.metrics.items():
        print(f"{k}\t{v:.6f}")
    return 0


def cmd_benchmark(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    res = benchmark_experiment(cfg, _seeds(args.seeds), args.out or cfg.output_dir)
    for k, v in res["mean"].items():
        print(f"{k}\t{v:.6f}")
    return 0


def cmd_ablate(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    rows = [row_by_name(n) for n in args.rows.split(",")] if args.rows else ABLATION_ROWS
    table = ablation_experiment(cfg, _seeds(args.seeds), rows, args.out or cfg.output_dir)
    print("row\tadapter\tce\tprior\tquery\ti_auroc\tp_aupr")
    for e in table:
        r = e["row"]
        print(f"{r.name}\t{int(r.adapter)}\t{int(r.ce)}\t{int(r.prior)}\t{int(r.query)}"
              f"\t{e['i_auroc']:.4f}\t{e['p_aupr']:.4f}")
    return 0


def cmd_toy(args, extra) -> int:
    cfg = ToyConfig()
    known = {f.name: f.type for f in fields(ToyConfig)}
    for item in extra:
        if not (item.startswith("--") and "=" in item):
            raise ConfigError(f"unrecognised argument {item!r}")
        key, value = item[2:].split("=", 1)
        if key not in known or key in ("means", "single_mean", "bounds"):
            raise ConfigError(f"unknown or non-scalar toy key {key!r}")
        default = getattr(cfg, key)
        setattr(cfg, key, type(default)(value))
    results = toy_experiment(cfg, _seeds(args.seeds), args.out)
    for seed, res in results.items():
        for k, v in res.metrics.items():
            print(f"{seed}\t{k}\t{v:.6g}")
    print(json.dumps(toy_summary(results)))
    return 0


def cmd_inspect(args, extra) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    n_values = sum(a.size for a in ckpt.params.values())
    print(f"version: {ckpt.version}")
    print(f"epoch: {ckpt.epoch}")
    print(f"optimizer steps: {ckpt.optim_step}")
    print(f"rng: {json.dumps(ckpt.rng)}")
    print(f"tensors: {len(ckpt.params)} ({n_values} values)")
    if args.tensors:
        for name, arr in ckpt.params.items():
            print(f"  {name}\t{arr.dtype}\t{tuple(arr.shape)}")
    print("config:")
    print(config_mod.dumps(ckpt.config), end="")
    return 0


def _seeds(spec: str) -> list[int]:
    """'3' means seeds 0..2; '1,4,7' lists them."""
    if "," in spec:
        return [int(s) for s in spec.split(",") if s]
    return list(range(int(spec)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mintad", description="Class-aware unified anomaly detection toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the synthetic benchmark and write a checkpoint")
    _config_args(p)
    p.add_argument("--out", help="output directory (default: run.output_dir)")
    p.add_argument("--resume", help="checkpoint to continue from (its config is used)")
    p.add_argument("--stop-epoch", type=int, help="stop after this many epochs in total")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a dataset with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", help="MINTFEAT dataset file (default: the config's synthetic test split)")
    p.add_argument("--dataset-name", default="synthetic")
    p.add_argument("--out", help="output directory (default: <checkpoint dir>/eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="train + evaluate over several seeds")
    _config_args(p)
    p.add_argument("--seeds", default="3")
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("ablate", help="submodule ablation sweep")
    _config_args(p)
    p.add_argument("--seeds", default="3")
    p.add_argument("--rows", help="comma-separated subset of " + ",".join(r.name for r in ABLATION_ROWS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("toy", help="2-D decision-boundary experiment")
    p.add_argument("--seeds", default="5")
    p.add_argument("--out", default="runs/toy")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's header")
    p.add_argument("checkpoint")
    p.add_argument("--tensors", action="store_true", help="list every tensor")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except (ConfigError, CheckpointError, DatasetFormatError, TrainingDivergedError) as err:
        print(f"mintad: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
