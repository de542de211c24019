"""Experiment configuration: one JSON document per experiment.

Every field has a default except the dataset and the output directory.
Unknown keys anywhere in the document are rejected. All randomness is
funneled through the single master ``seed``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .data import DataError, LabeledDataset, load_idx, shift_from_config, synth_dataset
from .seeds import child_seed
from .training import EarlyStopConfig, TrainConfig


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


STRATEGIES = ("flex", "fast-flex", "faster-flex", "ft-fc", "ft-fc2",
              "ft-ss", "ft-all")

_DATASET_KEYS = {
    "synthetic": {"type", "n", "classes", "channels", "image_size"},
    "idx": {"type", "images", "labels"},
}
_SPLIT_KEYS = {"ratios", "val_per_class", "test_per_class", "pretrain_per_class"}
_TRAIN_KEYS = {"learning_rate", "batch_size", "eval_every", "patience",
               "max_epochs", "beta1", "beta2", "eps"}
_TOP_KEYS = {"seed", "output_dir", "architecture", "dataset", "shift",
             "split", "train", "strategies", "workers", "retrieval_k",
             "pixel_unit"}


def _check_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class SplitConfig:
    ratios: list = field(default_factory=lambda: [30])
    val_per_class: int = 30
    test_per_class: int = 50
    pretrain_per_class: int | None = None


@dataclass
class ExperimentConfig:
    dataset: dict
    output_dir: str | None = None
    seed: int = 0
    architecture: str = "mnist4"
    shift: dict = field(default_factory=lambda: {"kind": "identity"})
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    strategies: list = field(default_factory=lambda: ["flex"])
    workers: int = 0  # 0 -> FLEXTUNE_WORKERS env var or 1
    retrieval_k: int = 10
    pixel_unit: bool = False

    def effective_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        return int(os.environ.get("FLEXTUNE_WORKERS", "1"))

    def shift_spec(self):
        try:
            return shift_from_config(self.shift)
        except DataError as exc:
            raise ConfigError(str(exc)) from exc

    def input_shape(self) -> tuple:
        if self.dataset["type"] == "synthetic":
            size = self.dataset.get("image_size", 16)
            return (self.dataset.get("channels", 1), size, size)
        # shape of idx data is only known after loading; MNIST-style default
        return (1, 28, 28)

    def num_classes(self) -> int:
        return self.dataset.get("classes", 10)

    def source_dataset(self) -> LabeledDataset:
        return self._load_dataset("source-data")

    def target_pool(self) -> LabeledDataset:
        return self._load_dataset("target-data")

    def _load_dataset(self, tag: str) -> LabeledDataset:
        ds = self.dataset
        if ds["type"] == "synthetic":
            return synth_dataset(child_seed(self.seed, tag),
                                 n=ds.get("n", 7000),
                                 classes=ds.get("classes", 10),
                                 channels=ds.get("channels", 1),
                                 size=ds.get("image_size", 16))
        return load_idx(ds["images"], ds["labels"])

    def train_config(self, seed_tag: str) -> TrainConfig:
        t = self.train
        return TrainConfig(t.learning_rate, t.batch_size,
                           child_seed(self.seed, seed_tag),
                           t.early_stop, t.beta1, t.beta2, t.eps)


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "config")
    if "dataset" not in doc:
        raise ConfigError("missing required field: dataset")
    ds = doc["dataset"]
    if not isinstance(ds, dict) or ds.get("type") not in _DATASET_KEYS:
        raise ConfigError("dataset.type must be 'synthetic' or 'idx'")
    _check_keys(ds, _DATASET_KEYS[ds["type"]], "dataset")
    if ds["type"] == "idx" and not ("images" in ds and "labels" in ds):
        raise ConfigError("idx dataset requires images and labels paths")

    split_doc = doc.get("split", {})
    _check_keys(split_doc, _SPLIT_KEYS, "split")
    split = SplitConfig(**split_doc)
    if isinstance(split.ratios, int):
        split.ratios = [split.ratios]

    train_doc = dict(doc.get("train", {}))
    _check_keys(train_doc, _TRAIN_KEYS, "train")
    es = EarlyStopConfig(train_doc.pop("eval_every", 5),
                         train_doc.pop("patience", 3),
                         train_doc.pop("max_epochs", 150))
    try:
        train = TrainConfig(early_stop=es, **train_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc

    strategies = doc.get("strategies", ["flex"])
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; choose from {STRATEGIES}")

    cfg = ExperimentConfig(
        dataset=ds,
        output_dir=doc.get("output_dir"),
        seed=int(doc.get("seed", 0)),
        architecture=doc.get("architecture", "mnist4"),
        shift=doc.get("shift", {"kind": "identity"}),
        split=split,
        train=train,
        strategies=list(strategies),
        workers=int(doc.get("workers", 0)),
        retrieval_k=int(doc.get("retrieval_k", 10)),
        pixel_unit=bool(doc.get("pixel_unit", False)),
    )
    cfg.shift_spec()  # validate eagerly
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)
