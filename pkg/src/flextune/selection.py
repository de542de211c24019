"""Unit-selection strategies: exhaustive, surgery-proxy, and one-epoch proxy.

All three strategies, plus the fixed baselines, return a SelectionReport
with comparable fields. Per-candidate seeds are derived from the run seed
and a canonical mask tag, so a baseline that trains the same mask as a
strategy candidate reproduces it exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .layers import Conv2D
from .network import (Network, TrainableMask, Unit, apply_mask, surgery,
                      trainable_param_count)
from .seeds import child_seed
from .training import (CostLedger, FineTuneOutcome, TrainConfig,
                       evaluate_accuracy, fine_tune, train_for_epochs)


@dataclass(frozen=True)
class CandidateId:
    """Which tuning strategy a trained model represents."""

    kind: str  # "unit" | "all" | "fc" | "ss" | "pixel"
    index: int | None = None

    def __str__(self):
        if self.kind == "unit":
            return f"unit{self.index}"
        if self.kind == "fc":
            return f"fc{self.index}"
        return self.kind


@dataclass
class SelectionReport:
    strategy: str
    candidates: list  # [(CandidateId, val_accuracy)], selection comparison set
    chosen: CandidateId
    chosen_outcome: FineTuneOutcome
    test_accuracy: float
    ledger: CostLedger
    proxy_accuracies: list | None = None  # a_1..a_L for the proxy strategies


def fc_unit_indices(net: Network) -> list[int]:
    """1-based indices of units containing a fully-connected layer."""
    return [i for i, u in enumerate(net.units, start=1)
            if any(l.spec()["kind"] == "dense" for l in u.layers)]


def unit_mask(net: Network, index: int) -> TrainableMask:
    kind = "pixel-unit" if net.units[index - 1].name == "pixel" else "single-unit"
    return TrainableMask(frozenset({index}), kind=kind)


def all_mask(net: Network) -> TrainableMask:
    return TrainableMask(frozenset(range(1, net.num_units + 1)), kind="all")


def fc_mask(net: Network, k: int) -> TrainableMask:
    fcs = fc_unit_indices(net)
    if not 1 <= k <= len(fcs):
        raise ValueError(f"fc({k}) requested but network has {len(fcs)} fc units")
    covered = fcs[-k:]
    if k == 1:
        return unit_mask(net, covered[0])
    return TrainableMask(frozenset(covered), kind="multi-unit")


def ss_mask(net: Network) -> TrainableMask:
    return TrainableMask(frozenset({net.num_units}),
                         include_scale_shift_everywhere=True, kind="scale-shift")


def _seed_tag(mask: TrainableMask) -> str:
    """Canonical tag over the covered parameter set, not the mask kind, so
    masks with identical coverage train identically across strategies."""
    tag = "u" + "-".join(str(i) for i in sorted(mask.unit_indices))
    if mask.include_scale_shift_everywhere:
        tag += "+ss"
    return tag


def _candidate_cfg(cfg: TrainConfig, mask: TrainableMask) -> TrainConfig:
    return TrainConfig(cfg.learning_rate, cfg.batch_size,
                       child_seed(cfg.seed, _seed_tag(mask)),
                       cfg.early_stop, cfg.beta1, cfg.beta2, cfg.eps)


def _candidate_id(net: Network, index: int) -> CandidateId:
    if net.units[index - 1].name == "pixel":
        return CandidateId("pixel")
    return CandidateId("unit", index)


def _trained_mask_count(net: Network, mask: TrainableMask) -> int:
    probe = net.clone()
    apply_mask(probe, mask)
    return trainable_param_count(probe)


def flex_tune(net: Network, train, val, test, cfg: TrainConfig,
              workers: int = 1) -> SelectionReport:
    """Exhaustive selection: L single-unit candidates plus the all-units one.

    Ties resolve toward fewer trainable parameters, then the lower unit
    index, with the all-units candidate last.
    """
    L = net.num_units
    cands = [(_candidate_id(net, i), unit_mask(net, i)) for i in range(1, L + 1)]
    cands.append((CandidateId("all"), all_mask(net)))

    def run(job):
        cid, mask = job
        ledger = CostLedger()
        outcome = fine_tune(net, mask, train, val, _candidate_cfg(cfg, mask),
                            ledger)
        return cid, mask, outcome, ledger

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, cands))
    else:
        results = [run(job) for job in cands]

    ledger = CostLedger()
    for _, _, _, lg in results:
        ledger.merge(lg)

    def sort_key(item):
        pos, (cid, mask, outcome, _) = item
        return (-outcome.val_accuracy, _trained_mask_count(net, mask),
                cid.kind == "all", pos)

    _, (chosen_cid, _, chosen_outcome, _) = min(enumerate(results), key=sort_key)
    test_acc = evaluate_accuracy(chosen_outcome.network, test)
    return SelectionReport(
        strategy="flex",
        candidates=[(cid, o.val_accuracy) for cid, _, o, _ in results],
        chosen=chosen_cid, chosen_outcome=chosen_outcome,
        test_accuracy=test_acc, ledger=ledger)


def _proxy_accuracies(base: Network, donor: Network, val) -> list[float]:
    """Validation accuracy of each single-unit surgery proxy (forward only)."""
    return [evaluate_accuracy(surgery(base, donor, i), val)
            for i in range(1, base.num_units + 1)]


def fast_flex_tune(net: Network, train, val, test,
                   cfg: TrainConfig) -> SelectionReport:
    """Train all-units once, rank units via surgery proxies, train the
    winner, then keep whichever of the two validates higher (ties favor
    the single-unit model)."""
    ledger = CostLedger()
    amask = all_mask(net)
    all_outcome = fine_tune(net, amask, train, val, _candidate_cfg(cfg, amask),
                            ledger)
    proxies = _proxy_accuracies(net, all_outcome.network, val)
    best = int(np.argmax(proxies)) + 1  # ties -> lowest index
    umask = unit_mask(net, best)
    unit_outcome = fine_tune(net, umask, train, val, _candidate_cfg(cfg, umask),
                             ledger)
    unit_cid = _candidate_id(net, best)
    if unit_outcome.val_accuracy >= all_outcome.val_accuracy:
        chosen_cid, chosen = unit_cid, unit_outcome
    else:
        chosen_cid, chosen = CandidateId("all"), all_outcome
    return SelectionReport(
        strategy="fast-flex",
        candidates=[(unit_cid, unit_outcome.val_accuracy),
                    (CandidateId("all"), all_outcome.val_accuracy)],
        chosen=chosen_cid, chosen_outcome=chosen,
        test_accuracy=evaluate_accuracy(chosen.network, test),
        ledger=ledger, proxy_accuracies=proxies)


def faster_flex_tune(net: Network, train, val, test,
                     cfg: TrainConfig) -> SelectionReport:
    """Rank units via proxies built from one epoch of all-units training,
    then fine-tune the winner; no all-units fallback."""
    ledger = CostLedger()
    amask = all_mask(net)
    one_epoch = train_for_epochs(net, amask, train, _candidate_cfg(cfg, amask),
                                 ledger, epochs=1)
    proxies = _proxy_accuracies(net, one_epoch, val)
    best = int(np.argmax(proxies)) + 1
    umask = unit_mask(net, best)
    outcome = fine_tune(net, umask, train, val, _candidate_cfg(cfg, umask),
                        ledger)
    cid = _candidate_id(net, best)
    return SelectionReport(
        strategy="faster-flex",
        candidates=[(cid, outcome.val_accuracy)],
        chosen=cid, chosen_outcome=outcome,
        test_accuracy=evaluate_accuracy(outcome.network, test),
        ledger=ledger, proxy_accuracies=proxies)


_BASELINE_MASKS = {
    "ft-fc": lambda net: fc_mask(net, 1),
    "ft-fc2": lambda net: fc_mask(net, 2),
    "ft-ss": ss_mask,
    "ft-all": all_mask,
}

_BASELINE_CIDS = {
    "ft-fc": CandidateId("fc", 1),
    "ft-fc2": CandidateId("fc", 2),
    "ft-ss": CandidateId("ss"),
    "ft-all": CandidateId("all"),
}


def baseline(net: Network, kind: str, train, val, test,
             cfg: TrainConfig) -> SelectionReport:
    """Single fixed-mask fine-tuning run: ft-fc, ft-fc2, ft-ss or ft-all."""
    if kind not in _BASELINE_MASKS:
        raise ValueError(f"unknown baseline {kind!r}")
    mask = _BASELINE_MASKS[kind](net)
    ledger = CostLedger()
    outcome = fine_tune(net, mask, train, val, _candidate_cfg(cfg, mask), ledger)
    cid = _BASELINE_CIDS[kind]
    if kind == "ft-fc":
        cid = _candidate_id(net, max(fc_unit_indices(net)))
    return SelectionReport(
        strategy=kind, candidates=[(cid, outcome.val_accuracy)],
        chosen=cid, chosen_outcome=outcome,
        test_accuracy=evaluate_accuracy(outcome.network, test), ledger=ledger)


def attach_pixel_unit(net: Network) -> Network:
    """Prepend an identity-initialized 1x1 channel-transform unit.

    The new unit becomes unit 1 (L grows by one) and the selection
    strategies treat it as an ordinary candidate. Freshly attached, the
    network is forward-equal to the original.
    """
    if len(net.input_shape) != 3:
        raise ValueError("pixel unit requires image input [c, h, w]")
    channels = net.input_shape[0]
    dtype = net.params[0].value.dtype if net.params else np.float32
    conv = Conv2D(channels, channels, kernel=1, dtype=dtype)
    conv.weight.value[...] = np.eye(channels, dtype=dtype).reshape(
        channels, channels, 1, 1)
    out = net.clone()
    out.units.insert(0, Unit("pixel", [conv]))
    return out
