"""Early-stopped fine-tuning loop, accuracy evaluation, cost ledger.

Training is Adam on shuffled mini-batches with validation accuracy checked
every ``eval_every`` epochs; the best snapshot is kept and restored. The
cost ledger counts epochs in two classes (single-unit vs full-network
backward) so the realized cost of each selection strategy can be compared
against its analytic complexity.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .layers import adam_step, softmax_cross_entropy
from .network import (Network, TrainableMask, apply_mask,
                      first_trainable_layer_index)
from .seeds import make_rng


@dataclass
class EarlyStopConfig:
    eval_every: int = 5
    patience: int = 3
    max_epochs: int = 150

    def __post_init__(self):
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be >= 1")
        if self.max_epochs < self.eval_every:
            raise ValueError("max_epochs must be >= eval_every")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be > 0 and batch_size >= 1")


@dataclass
class FineTuneOutcome:
    network: Network
    val_accuracy: float
    epochs_trained: int
    mask_kind: str


@dataclass
class CostLedger:
    single_unit_epochs: int = 0
    full_network_epochs: int = 0
    single_unit_runs: int = 0
    full_network_runs: int = 0
    c_one: float = 0.0  # mean wall-clock seconds per single-unit epoch
    c_all: float = 0.0  # mean wall-clock seconds per full-network epoch
    _t_one: float = field(default=0.0, repr=False)
    _t_all: float = field(default=0.0, repr=False)

    def record_epoch(self, single_unit_cost: bool, seconds: float):
        if single_unit_cost:
            self.single_unit_epochs += 1
            self._t_one += seconds
            self.c_one = self._t_one / self.single_unit_epochs
        else:
            self.full_network_epochs += 1
            self._t_all += seconds
            self.c_all = self._t_all / self.full_network_epochs

    def record_run(self, single_unit_cost: bool):
        if single_unit_cost:
            self.single_unit_runs += 1
        else:
            self.full_network_runs += 1

    def merge(self, other: "CostLedger"):
        """Field-wise sum; per-epoch means recomputed from totals."""
        self.single_unit_epochs += other.single_unit_epochs
        self.full_network_epochs += other.full_network_epochs
        self.single_unit_runs += other.single_unit_runs
        self.full_network_runs += other.full_network_runs
        self._t_one += other._t_one
        self._t_all += other._t_all
        self.c_one = self._t_one / max(self.single_unit_epochs, 1)
        self.c_all = self._t_all / max(self.full_network_epochs, 1)

    def as_dict(self) -> dict:
        return {
            "single_unit_epochs": self.single_unit_epochs,
            "full_network_epochs": self.full_network_epochs,
            "single_unit_runs": self.single_unit_runs,
            "full_network_runs": self.full_network_runs,
            "c_one": self.c_one,
            "c_all": self.c_all,
        }


def ledger_summary(ledger: CostLedger) -> dict:
    """Realized cost terms E_one*c_one and E_all*c_all for the experiment."""
    return {
        **ledger.as_dict(),
        "single_unit_cost": ledger.single_unit_epochs * ledger.c_one,
        "full_network_cost": ledger.full_network_epochs * ledger.c_all,
    }


def evaluate_accuracy(net: Network, data, k: int = 1,
                      chunk: int = 512) -> float:
    """Top-k accuracy; logit ties resolve toward the lower class index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(data.labels) == 0:
        raise ValueError("empty dataset")
    hits = 0
    for start in range(0, len(data.labels), chunk):
        images = data.images[start:start + chunk]
        labels = data.labels[start:start + chunk]
        logits = net.forward(images)
        topk = np.argsort(-logits, axis=1, kind="stable")[:, :k]
        hits += int((topk == labels[:, None]).any(axis=1).sum())
    return hits / len(data.labels)


def _run_epoch(net: Network, data, cfg: TrainConfig, rng, stop_layer: int):
    order = rng.permutation(len(data.labels))
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        caches = []
        logits = net.forward(data.images[idx], caches)
        loss, grad = softmax_cross_entropy(logits, data.labels[idx])
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite training loss")
        net.backward(caches, grad, down_to_layer=stop_layer)
        adam_step(net.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


def train_for_epochs(net: Network, mask: TrainableMask, train, cfg: TrainConfig,
                     ledger: CostLedger | None = None, epochs: int = 1) -> Network:
    """Plain training without early stopping or snapshots (mutates a clone)."""
    work = net.clone()
    for p in work.params:
        p.reset_opt_state()
    apply_mask(work, mask)
    stop_layer = first_trainable_layer_index(work)
    rng = make_rng(cfg.seed)
    for _ in range(epochs):
        t0 = time.perf_counter()
        _run_epoch(work, train, cfg, rng, stop_layer)
        if ledger is not None:
            ledger.record_epoch(mask.is_single_unit_cost,
                                time.perf_counter() - t0)
    return work


def fine_tune(net: Network, mask: TrainableMask, train, val,
              cfg: TrainConfig, ledger: CostLedger | None = None) -> FineTuneOutcome:
    """Early-stopped fine-tuning under a trainable mask.

    Keeps the best validation snapshot (the untouched starting network is
    itself the first snapshot, so the result never validates below the
    input). Stops after ``patience`` consecutive non-improving evaluations
    or at ``max_epochs``. The input network is never mutated.
    """
    if len(train.labels) == 0 or len(val.labels) == 0:
        raise ValueError("empty dataset")
    work = net.clone()
    for p in work.params:
        p.reset_opt_state()
    apply_mask(work, mask)
    stop_layer = first_trainable_layer_index(work)
    es = cfg.early_stop
    if ledger is not None:
        ledger.record_run(mask.is_single_unit_cost)

    rng = make_rng(cfg.seed)
    best_net = work.clone()
    best_acc = evaluate_accuracy(work, val)
    stale = 0
    epochs = 0
    while epochs < es.max_epochs:
        for _ in range(min(es.eval_every, es.max_epochs - epochs)):
            t0 = time.perf_counter()
            _run_epoch(work, train, cfg, rng, stop_layer)
            epochs += 1
            if ledger is not None:
                ledger.record_epoch(mask.is_single_unit_cost,
                                    time.perf_counter() - t0)
        acc = evaluate_accuracy(work, val)
        if acc > best_acc:
            best_acc = acc
            best_net = work.clone()
            stale = 0
        else:
            stale += 1
            if stale >= es.patience:
                break
    return FineTuneOutcome(best_net, best_acc, epochs, mask.kind)
