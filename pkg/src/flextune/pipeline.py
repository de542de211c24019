"""End-to-end experiment plumbing shared by the CLI and the test suite.

Wires together: source pretraining, target-domain construction (shift +
stratified subsampling), and strategy dispatch.
"""

from __future__ import annotations

import numpy as np

from .architectures import build_network, init_network
from .config import ConfigError, ExperimentConfig
from .data import SplitSpec, apply_shift, subsample_and_split
from .network import Network
from .seeds import child_seed
from .selection import (SelectionReport, attach_pixel_unit, baseline,
                        fast_flex_tune, faster_flex_tune, flex_tune)
from .training import CostLedger, evaluate_accuracy, fine_tune
from .selection import all_mask


def source_splits(cfg: ExperimentConfig):
    """Clean source-domain train/val/test splits for pretraining."""
    data = cfg.source_dataset()
    per_class = np.bincount(data.labels, minlength=data.classes)
    reserve = cfg.split.val_per_class + cfg.split.test_per_class
    train_pc = cfg.split.pretrain_per_class
    if train_pc is None:
        train_pc = int(per_class.min()) - reserve
    if train_pc < 1:
        raise ConfigError("not enough source samples for the requested splits")
    spec = SplitSpec(train_pc, cfg.split.val_per_class,
                     cfg.split.test_per_class,
                     seed=child_seed(cfg.seed, "source-split"))
    return subsample_and_split(data, spec)


def pretrain(cfg: ExperimentConfig):
    """Train the reference architecture from scratch on the clean source."""
    train, val, test = source_splits(cfg)
    net = build_network(cfg.architecture, train.images.shape[1:], train.classes)
    init_network(net, child_seed(cfg.seed, "init"))
    outcome = fine_tune(net, all_mask(net), train, val,
                        cfg.train_config("pretrain"))
    metrics = {
        "val_accuracy": outcome.val_accuracy,
        "test_accuracy": evaluate_accuracy(outcome.network, test),
        "epochs": outcome.epochs_trained,
    }
    return outcome.network, metrics


def target_splits(cfg: ExperimentConfig, ratio: int):
    """Shifted target-domain splits at one subsampling ratio (img/class)."""
    pool = cfg.target_pool()
    shifted = apply_shift(pool, cfg.shift_spec(), seed=child_seed(cfg.seed, "shift"))
    spec = SplitSpec(ratio, cfg.split.val_per_class, cfg.split.test_per_class,
                     seed=child_seed(cfg.seed, "target-split"))
    return subsample_and_split(shifted, spec)


def run_strategy(net: Network, strategy: str, train, val, test,
                 cfg: ExperimentConfig,
                 pixel_unit: bool = False) -> SelectionReport:
    if pixel_unit:
        net = attach_pixel_unit(net)
    tcfg = cfg.train_config("finetune")
    if strategy == "flex":
        return flex_tune(net, train, val, test, tcfg,
                         workers=cfg.effective_workers())
    if strategy == "fast-flex":
        return fast_flex_tune(net, train, val, test, tcfg)
    if strategy == "faster-flex":
        return faster_flex_tune(net, train, val, test, tcfg)
    return baseline(net, strategy, train, val, test, tcfg)
