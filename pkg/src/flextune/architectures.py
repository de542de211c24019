"""Reference network builders.

Two small convnets mirror the medium-scale setups this package targets:
``mnist4`` (2 conv + 2 fc layers, one layer per unit) and ``cifar7``
(5 conv + 2 fc). Each conv/fc layer carries a per-channel ScaleShift so
the scale-and-shift baseline has parameters to tune at every level.
"""

from __future__ import annotations

import numpy as np

from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU, ScaleShift, init_params
from .network import Network, Unit
from .seeds import child_seed, make_rng


def _mnist4(input_shape, num_classes, dtype):
    c, h, w = input_shape
    hidden = 64
    flat = 16 * (h // 4) * (w // 4)
    return Network([
        Unit("conv1", [Conv2D(c, 8, 3, padding=1, dtype=dtype),
                       ScaleShift(8, dtype=dtype), ReLU(), MaxPool2D(2, 2)]),
        Unit("conv2", [Conv2D(8, 16, 3, padding=1, dtype=dtype),
                       ScaleShift(16, dtype=dtype), ReLU(), MaxPool2D(2, 2)]),
        Unit("fc1", [Flatten(), Dense(flat, hidden, dtype=dtype),
                     ScaleShift(hidden, dtype=dtype), ReLU()]),
        Unit("fc2", [Dense(hidden, num_classes, dtype=dtype)]),
    ], input_shape, num_classes)


def _cifar7(input_shape, num_classes, dtype):
    c, h, w = input_shape
    hidden = 96
    flat = 64 * (h // 8) * (w // 8)
    return Network([
        Unit("conv1", [Conv2D(c, 16, 3, padding=1, dtype=dtype),
                       ScaleShift(16, dtype=dtype), ReLU()]),
        Unit("conv2", [Conv2D(16, 16, 3, padding=1, dtype=dtype),
                       ScaleShift(16, dtype=dtype), ReLU(), MaxPool2D(2, 2)]),
        Unit("conv3", [Conv2D(16, 32, 3, padding=1, dtype=dtype),
                       ScaleShift(32, dtype=dtype), ReLU()]),
        Unit("conv4", [Conv2D(32, 32, 3, padding=1, dtype=dtype),
                       ScaleShift(32, dtype=dtype), ReLU(), MaxPool2D(2, 2)]),
        Unit("conv5", [Conv2D(32, 64, 3, padding=1, dtype=dtype),
                       ScaleShift(64, dtype=dtype), ReLU(), MaxPool2D(2, 2)]),
        Unit("fc1", [Flatten(), Dense(flat, hidden, dtype=dtype),
                     ScaleShift(hidden, dtype=dtype), ReLU()]),
        Unit("fc2", [Dense(hidden, num_classes, dtype=dtype)]),
    ], input_shape, num_classes)


ARCHITECTURES = {"mnist4": _mnist4, "cifar7": _cifar7}


def build_network(name: str, input_shape, num_classes: int,
                  dtype=np.float32) -> Network:
    if name not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {name!r}; "
                         f"available: {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[name](tuple(input_shape), num_classes, dtype)


def init_network(net: Network, seed: int):
    """Seed-deterministic He initialization, one child stream per layer."""
    for idx, layer in enumerate(net.layers):
        init_params(layer, make_rng(child_seed(seed, "init", idx)))
    return net
