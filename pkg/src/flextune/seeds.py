"""Seed derivation and RNG construction.

All randomness in the package flows through numpy's Philox counter-based
generator, so identical seeds give identical draw sequences on every
platform. Child seeds are derived by hashing, never by consuming draws,
which keeps independent components (candidates, images) decoupled.
"""

import hashlib

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Return a Philox-backed generator for the given 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def child_seed(seed: int, *tags) -> int:
    """Derive a stable 64-bit sub-seed from a base seed and string-able tags."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")
