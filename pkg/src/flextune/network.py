"""Network-as-units abstraction: masks, surgery, features, checkpoints.

A Network is an ordered composition of Units (blocks of layers) applied
first-to-last. Surgery builds proxy networks by transplanting one unit's
parameters from a donor network; masks decide which parameters the
optimizer may touch.

Checkpoint byte layout (little-endian throughout):
    magic        8 bytes  b"FLEXTUN1"
    version      uint32   (currently 1)
    desc_len     uint32
    descriptor   desc_len bytes of UTF-8 JSON (architecture + unit names)
    blobs        raw float32 parameter data, unit by unit, layer by layer,
                 each layer's params in declaration order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .layers import Layer, layer_from_spec

_MAGIC = b"FLEXTUN1"
_VERSION = 1


class CheckpointError(IOError):
    """Malformed, truncated or mismatched checkpoint file."""


@dataclass
class Unit:
    """A contiguous block of layers, the granularity of fine-tuning."""

    name: str
    layers: list[Layer]

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params)


@dataclass
class TrainableMask:
    """Which parameters fine-tuning may change.

    ``kind`` drives epoch-cost bookkeeping: masks whose backward pass must
    traverse the whole network (all-units, multi-unit, scale-shift,
    pixel-unit) are costed as full-network epochs.
    """

    unit_indices: frozenset = frozenset()
    include_scale_shift_everywhere: bool = False
    kind: str = "single-unit"

    VALID_KINDS = ("single-unit", "multi-unit", "all", "scale-shift",
                   "pixel-unit")

    def __post_init__(self):
        if self.kind not in self.VALID_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")

    @property
    def is_single_unit_cost(self) -> bool:
        return self.kind == "single-unit"


class Network:
    """Ordered unit composition with a final classification layer."""

    def __init__(self, units: list[Unit], input_shape: tuple, num_classes: int):
        self.units = list(units)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes

    # -- structure ---------------------------------------------------------

    @property
    def num_units(self) -> int:
        return len(self.units)

    @property
    def layers(self):
        return [layer for u in self.units for layer in u.layers]

    @property
    def params(self):
        return [p for u in self.units for p in u.params]

    def descriptor(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "units": [{"name": u.name,
                       "layers": [l.spec() for l in u.layers]}
                      for u in self.units],
        }

    @classmethod
    def from_descriptor(cls, desc: dict, dtype=np.float32) -> "Network":
        units = [Unit(u["name"], [layer_from_spec(s, dtype) for s in u["layers"]])
                 for u in desc["units"]]
        return cls(units, tuple(desc["input_shape"]), desc["num_classes"])

    def clone(self) -> "Network":
        """Deep copy of architecture and parameter values (fresh opt state)."""
        dtype = self.params[0].value.dtype if self.params else np.float32
        net = Network.from_descriptor(self.descriptor(), dtype=dtype)
        for dst, src in zip(net.params, self.params):
            dst.value[...] = src.value
            dst.trainable = src.trainable
        return net

    # -- execution ---------------------------------------------------------

    def forward(self, batch: np.ndarray, caches: list | None = None) -> np.ndarray:
        """Full composition; optionally records per-layer caches for backward."""
        x = batch
        for layer in self.layers:
            x, cache = layer.forward(x)
            if caches is not None:
                caches.append(cache)
        return x

    def backward(self, caches: list, grad: np.ndarray,
                 down_to_layer: int = 0) -> np.ndarray | None:
        """Backpropagate, stopping after the layer at index ``down_to_layer``."""
        layers = self.layers
        for idx in range(len(layers) - 1, down_to_layer - 1, -1):
            grad = layers[idx].backward(caches[idx], grad)
        return grad

    def features_at(self, batch: np.ndarray, depth: int | None = None) -> np.ndarray:
        """Activations after unit ``depth`` (default penultimate), flattened."""
        if depth is None:
            depth = self.num_units - 1
        if not 0 <= depth <= self.num_units:
            raise ValueError(f"depth {depth} out of range 0..{self.num_units}")
        x = batch
        for unit in self.units[:depth]:
            for layer in unit.layers:
                x, _ = layer.forward(x)
        return x.reshape(x.shape[0], -1)


def network_forward(net: Network, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def surgery(base: Network, donor: Network, unit_index: int) -> Network:
    """Proxy network: base everywhere except unit ``unit_index`` (1-based),
    whose parameters are copied by value from the donor. Inputs untouched."""
    if json.dumps(base.descriptor()) != json.dumps(donor.descriptor()):
        raise ValueError("surgery requires architecturally identical networks")
    if not 1 <= unit_index <= base.num_units:
        raise ValueError(f"unit index {unit_index} out of range 1..{base.num_units}")
    out = base.clone()
    for dst, src in zip(out.units[unit_index - 1].params,
                        donor.units[unit_index - 1].params):
        dst.value[...] = src.value
    return out


def apply_mask(net: Network, mask: TrainableMask):
    """Set trainable=True exactly on the parameters the mask covers."""
    for idx in mask.unit_indices:
        if not 1 <= idx <= net.num_units:
            raise ValueError(f"mask unit index {idx} out of range 1..{net.num_units}")
    for i, unit in enumerate(net.units, start=1):
        covered_unit = i in mask.unit_indices
        for layer in unit.layers:
            covered = covered_unit
            if mask.include_scale_shift_everywhere and layer.spec()["kind"] == "scaleshift":
                covered = True
            for p in layer.params:
                p.trainable = covered


def trainable_param_count(net: Network) -> int:
    return sum(p.value.size for p in net.params if p.trainable)


def first_trainable_layer_index(net: Network) -> int:
    """Index of the shallowest layer holding a trainable param (len if none)."""
    for idx, layer in enumerate(net.layers):
        if any(p.trainable for p in layer.params):
            return idx
    return len(net.layers)


def save_checkpoint(net: Network, path):
    desc = json.dumps({"arch": net.descriptor()}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(desc)))
        fh.write(desc)
        for p in net.params:
            fh.write(np.ascontiguousarray(
                p.value, dtype="<f4").tobytes())


def load_checkpoint(path, expected_descriptor: dict | None = None) -> Network:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version, desc_len = struct.unpack_from("<II", raw, 8)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    try:
        desc = json.loads(raw[off:off + desc_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt descriptor") from exc
    arch = desc["arch"]
    if expected_descriptor is not None and \
            json.dumps(arch, sort_keys=True) != json.dumps(expected_descriptor, sort_keys=True):
        raise CheckpointError(f"{path}: architecture descriptor mismatch")
    net = Network.from_descriptor(arch)
    off += desc_len
    for p in net.params:
        nbytes = p.value.size * 4
        blob = raw[off:off + nbytes]
        if len(blob) != nbytes:
            raise CheckpointError(f"{path}: truncated parameter payload")
        p.value[...] = np.frombuffer(blob, dtype="<f4").reshape(p.value.shape)
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    return net
