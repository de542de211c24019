"""Command-line driver.

    flextune pretrain --config cfg.json [--seed N] [--out DIR]
    flextune select   --config cfg.json --checkpoint ckpt --strategy flex
                      [--pixel-unit] [--ratio N] [--workers N] [--out DIR]
    flextune sweep    --config cfg.json --checkpoint ckpt [--workers N]
    flextune retrieve --config cfg.json --source-checkpoint a
                      --tuned-checkpoint b [--k N]

Exit codes: 0 success, 2 config error, 3 data/checkpoint error,
4 runtime or numeric error. All emitted CSV/JSON files are byte-identical
across reruns with the same config, seed, and any worker count.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .architectures import build_network
from .config import STRATEGIES, ConfigError, load_config
from .data import DataError
from .evaluation import (RETRIEVAL_CSV_HEADER, SELECTION_CSV_HEADER,
                         SWEEP_CSV_HEADER, emit_csv, per_unit_sweep,
                         retrieval_csv_rows, retrieval_map,
                         selection_csv_rows, sweep_csv_rows)
from .network import CheckpointError, load_checkpoint, save_checkpoint
from .pipeline import pretrain, run_strategy, source_splits, target_splits
from .training import CostLedger

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _write_json(path, payload: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg, args) -> Path:
    out = args.out or cfg.output_dir
    if not out:
        raise ConfigError("no output directory: set output_dir or pass --out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_cfg(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def _expected_descriptor(cfg):
    return {"arch": build_network(cfg.architecture, cfg.input_shape(),
                                  cfg.num_classes()).descriptor()}["arch"]


def _ledger_json(ledger: CostLedger) -> dict:
    # wall-clock means are excluded so reruns are byte-identical
    d = ledger.as_dict()
    d.pop("c_one")
    d.pop("c_all")
    return d


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args)
    net, metrics = pretrain(cfg)
    save_checkpoint(net, out / "pretrained.ckpt")
    _write_json(out / "pretrain_metrics.json", metrics)
    print(f"pretrained {cfg.architecture}: test accuracy "
          f"{metrics['test_accuracy']:.4f} after {metrics['epochs']} epochs")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args)
    net = load_checkpoint(args.checkpoint, _expected_descriptor(cfg))
    ratio = args.ratio if args.ratio is not None else cfg.split.ratios[0]
    train, val, test = target_splits(cfg, ratio)
    pixel = args.pixel_unit or cfg.pixel_unit
    report = run_strategy(net, args.strategy, train, val, test, cfg,
                          pixel_unit=pixel)
    emit_csv(out / "selection.csv", SELECTION_CSV_HEADER,
             selection_csv_rows(report))
    _write_json(out / "ledger.json", _ledger_json(report.ledger))
    save_checkpoint(report.chosen_outcome.network, out / "chosen.ckpt")
    print(f"{args.strategy}: chose {report.chosen}, "
          f"val {report.chosen_outcome.val_accuracy:.4f}, "
          f"test {report.test_accuracy:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args)
    net = load_checkpoint(args.checkpoint, _expected_descriptor(cfg))
    splits = [(ratio, target_splits(cfg, ratio)) for ratio in cfg.split.ratios]
    table = per_unit_sweep(net, splits, cfg.train_config("finetune"),
                           workers=cfg.effective_workers())
    emit_csv(out / "sweep.csv", SWEEP_CSV_HEADER, sweep_csv_rows(table))
    print(f"sweep: {len(table.rows)} rows over ratios {cfg.split.ratios}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args)
    source_net = load_checkpoint(args.source_checkpoint)
    tuned_net = load_checkpoint(args.tuned_checkpoint)
    k = args.k if args.k is not None else cfg.retrieval_k

    _, source_val, _ = source_splits(cfg)
    _, _, target_test = target_splits(cfg, cfg.split.ratios[0])
    if k > len(source_val):
        raise ConfigError(f"k={k} exceeds source gallery size {len(source_val)}")
    source_feats = source_net.features_at(source_val.images)
    target_feats = tuned_net.features_at(target_test.images)
    result = retrieval_map(target_feats, target_test.labels,
                           source_feats, source_val.labels, k)
    emit_csv(out / "retrieval.csv", RETRIEVAL_CSV_HEADER,
             retrieval_csv_rows(result))
    _write_json(out / "retrieval_map.json",
                {"k": result.k, "map": round(result.map_at_k, 6)})
    print(f"mAP@{k} = {result.map_at_k:.4f} over {len(target_feats)} queries")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flextune",
        description="Single-unit fine-tuning with automatic unit selection")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment JSON config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")

    p = sub.add_parser("pretrain", help="train the source network from scratch")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("select", help="run a selection strategy or baseline")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--pixel-unit", action="store_true",
                   help="prepend the 1x1 channel-transform unit")
    p.add_argument("--ratio", type=int, help="images per class for training")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("sweep", help="per-unit accuracy sweep over ratios")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("retrieve", help="retrieval mAP@k against the source")
    common(p)
    p.add_argument("--source-checkpoint", required=True)
    p.add_argument("--tuned-checkpoint", required=True)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_retrieve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
