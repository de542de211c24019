"""Retrieval metrics, per-unit sweep tables, and CSV emission.

AP@k normalizes by k (every query class has at least k relevant items in
the balanced datasets used here, so an all-match ranking scores 1.0).
Nearest neighbors use Euclidean distance with ties resolved toward the
lower source index.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import Network
from .selection import (CandidateId, _candidate_cfg, _candidate_id,
                        _trained_mask_count, all_mask, unit_mask)
from .training import CostLedger, TrainConfig, evaluate_accuracy, fine_tune


@dataclass
class RetrievalResult:
    per_query_ap: np.ndarray
    map_at_k: float
    k: int


def ap_at_k(query_label, neighbor_labels, k: int) -> float:
    """Average precision over the first k ranked neighbors."""
    if k < 1:
        raise ValueError("k must be >= 1")
    neighbor_labels = np.asarray(neighbor_labels)
    if len(neighbor_labels) < k:
        raise ValueError(f"need at least {k} neighbors, got {len(neighbor_labels)}")
    rel = (neighbor_labels[:k] == query_label).astype(np.float64)
    precision_at = np.cumsum(rel) / np.arange(1, k + 1)
    return float((rel * precision_at).sum() / k)


def retrieval_map(target_feats, target_labels, source_feats, source_labels,
                  k: int, chunk: int = 256) -> RetrievalResult:
    """mAP@k of target queries against the source gallery."""
    target_feats = np.asarray(target_feats, dtype=np.float64)
    source_feats = np.asarray(source_feats, dtype=np.float64)
    if target_feats.shape[1] != source_feats.shape[1]:
        raise ValueError(
            f"feature dims differ: {target_feats.shape[1]} vs {source_feats.shape[1]}")
    if k > len(source_feats):
        raise ValueError(f"k={k} exceeds source size {len(source_feats)}")
    source_labels = np.asarray(source_labels)
    s2 = (source_feats ** 2).sum(axis=1)
    aps = np.empty(len(target_feats))
    for start in range(0, len(target_feats), chunk):
        t = target_feats[start:start + chunk]
        d2 = (t ** 2).sum(axis=1)[:, None] + s2[None] - 2.0 * (t @ source_feats.T)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        for row, qlabel, idx in zip(order, target_labels[start:start + chunk],
                                    range(start, start + len(t))):
            aps[idx] = ap_at_k(qlabel, source_labels[row], k)
    return RetrievalResult(aps, float(aps.mean()), k)


def nearest_neighbors(target_feats, source_feats, k: int) -> np.ndarray:
    """Top-k source indices per target row (Euclidean, stable ties)."""
    target_feats = np.asarray(target_feats, dtype=np.float64)
    source_feats = np.asarray(source_feats, dtype=np.float64)
    s2 = (source_feats ** 2).sum(axis=1)
    d2 = ((target_feats ** 2).sum(axis=1)[:, None] + s2[None]
          - 2.0 * (target_feats @ source_feats.T))
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


@dataclass
class SweepRow:
    ratio: int  # images per class in the training split
    candidate: CandidateId
    val_accuracy: float
    test_accuracy: float
    epochs: int
    is_argmax: bool  # validation argmax within its ratio


@dataclass
class SweepTable:
    rows: list


def per_unit_sweep(pretrained: Network, splits_per_ratio, cfg: TrainConfig,
                   ledger: CostLedger | None = None,
                   workers: int = 1) -> SweepTable:
    """Fine-tune every unit plus all-units at each subsampling ratio.

    ``splits_per_ratio`` is a list of (ratio, (train, val, test)). Seeds
    and tie-breaking match flex_tune, so the argmax marker per ratio
    coincides with flex_tune's choice under the same config. Results are
    independent of the worker count.
    """
    if not splits_per_ratio:
        raise ValueError("at least one ratio required")
    L = pretrained.num_units
    rows = []
    for ratio, (train, val, test) in splits_per_ratio:
        masks = [unit_mask(pretrained, i) for i in range(1, L + 1)]
        masks.append(all_mask(pretrained))
        cids = [_candidate_id(pretrained, i) for i in range(1, L + 1)]
        cids.append(CandidateId("all"))

        def run(mask):
            lg = CostLedger()
            outcome = fine_tune(pretrained, mask, train, val,
                                _candidate_cfg(cfg, mask), lg)
            return outcome, lg

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, masks))
        else:
            results = [run(m) for m in masks]
        outcomes = [o for o, _ in results]
        if ledger is not None:
            for _, lg in results:
                ledger.merge(lg)
        best_pos = min(
            range(len(outcomes)),
            key=lambda p: (-outcomes[p].val_accuracy,
                           _trained_mask_count(pretrained, masks[p]),
                           cids[p].kind == "all", p))
        for pos, (cid, outcome) in enumerate(zip(cids, outcomes)):
            rows.append(SweepRow(
                ratio=ratio, candidate=cid,
                val_accuracy=outcome.val_accuracy,
                test_accuracy=evaluate_accuracy(outcome.network, test),
                epochs=outcome.epochs_trained,
                is_argmax=pos == best_pos))
    return SweepTable(rows)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def emit_csv(path, header: list[str], rows) -> None:
    """UTF-8 CSV, LF endings, floats at 6 decimals, fixed column order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


SWEEP_CSV_HEADER = ["ratio", "candidate", "val_acc", "test_acc", "epochs",
                    "is_argmax"]
RETRIEVAL_CSV_HEADER = ["query_index", "ap"]
SELECTION_CSV_HEADER = ["candidate", "val_acc", "chosen", "test_acc"]


def sweep_csv_rows(table: SweepTable):
    return [(r.ratio, str(r.candidate), r.val_accuracy, r.test_accuracy,
             r.epochs, r.is_argmax) for r in table.rows]


def retrieval_csv_rows(result: RetrievalResult):
    return [(i, float(ap)) for i, ap in enumerate(result.per_query_ap)]


def selection_csv_rows(report):
    return [(str(cid), acc, cid == report.chosen,
             report.test_accuracy if cid == report.chosen else "")
            for cid, acc in report.candidates]
