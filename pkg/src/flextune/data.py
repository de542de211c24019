"""Datasets, synthetic domain shifts, stratified subsampling and splits.

Images travel as float32 arrays [n, channels, height, width] with values
in [0, 1]; every shift leaves labels untouched and clamps its output back
into [0, 1]. Per-image randomness is keyed by (seed, image index) so
results do not depend on iteration or worker order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .seeds import child_seed, make_rng


class DataError(ValueError):
    """Malformed input files or inconsistent dataset requests."""


@dataclass
class LabeledDataset:
    images: np.ndarray  # float32 [n, c, h, w], values in [0, 1]
    labels: np.ndarray  # int64 [n]
    classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError("images/labels count mismatch")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx], self.classes)


# --------------------------------------------------------------------------
# IDX ingestion

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 * (1 + ndim):
        raise DataError(f"{path}: truncated IDX header")
    got = struct.unpack_from(">I", raw, 0)[0]
    if got != magic:
        raise DataError(f"{path}: bad IDX magic {got:#010x}, expected {magic:#010x}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    payload = raw[4 * (1 + ndim):]
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise DataError(f"{path}: payload of {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label pair (big-endian, MNIST-style)."""
    images = _read_idx(images_path, _IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, _IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataError("images/labels count mismatch between IDX files")
    n, h, w = images.shape
    pixels = (images.astype(np.float32) / 255.0).reshape(n, 1, h, w)
    classes = int(labels.max()) + 1 if n else 0
    return LabeledDataset(pixels, labels.astype(np.int64), classes)


# --------------------------------------------------------------------------
# Synthetic digit images

_DIGIT_FONT = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00010 00100 01000 11111",
    "11111 00010 00100 00010 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]

IMAGE_SIZE = 16


def _glyph_templates():
    out = []
    for rows in _DIGIT_FONT:
        bits = np.array([[int(ch) for ch in row] for row in rows.split()],
                        dtype=np.float32)
        out.append(np.kron(bits, np.ones((2, 2), dtype=np.float32)))  # 14x10
    return out


_TEMPLATES = _glyph_templates()


def _smooth_field(rng, size) -> np.ndarray:
    coarse = rng.random((4, 4)).astype(np.float32)
    return np.kron(coarse, np.ones((size // 4, size // 4), dtype=np.float32))


def synth_dataset(seed: int, n: int, classes: int = 10, channels: int = 1,
                  size: int = IMAGE_SIZE) -> LabeledDataset:
    """Procedural digit-glyph dataset: class-balanced and deterministic.

    Channel layout for channels=3: glyph, a class-independent smooth
    distractor field, and a half glyph / half second-distractor blend, so
    that channel recombinations genuinely scramble the label signal.
    """
    if classes > len(_TEMPLATES):
        raise DataError(f"at most {len(_TEMPLATES)} classes supported")
    if n < classes:
        raise DataError("need at least one sample per class")
    labels = np.arange(n, dtype=np.int64) % classes
    rng = make_rng(child_seed(seed, "synth-order"))
    rng.shuffle(labels)
    images = np.zeros((n, channels, size, size), dtype=np.float32)
    gh, gw = _TEMPLATES[0].shape
    for i in range(n):
        r = make_rng(child_seed(seed, "synth-image", i))
        glyph = _TEMPLATES[labels[i]] * r.uniform(0.7, 1.0)
        oy = (size - gh) // 2 + r.integers(-1, 2)
        ox = (size - gw) // 2 + r.integers(-2, 3)
        canvas = np.zeros((size, size), dtype=np.float32)
        canvas[oy:oy + gh, ox:ox + gw] = glyph
        canvas += r.normal(0.0, 0.05, canvas.shape).astype(np.float32)
        canvas = np.clip(canvas, 0.0, 1.0)
        if channels == 1:
            images[i, 0] = canvas
        else:
            distractor = _smooth_field(r, size) * 0.8
            distractor2 = _smooth_field(r, size) * 0.8
            images[i, 0] = canvas
            images[i, 1] = distractor
            images[i, 2] = np.clip(0.5 * canvas + 0.5 * distractor2, 0.0, 1.0)
    return LabeledDataset(images, labels, classes)


# --------------------------------------------------------------------------
# Domain shifts

@dataclass
class Identity:
    pass


@dataclass
class Blur:
    sigma: float = 1.0


@dataclass
class Noise:
    sigma: float = 0.2


@dataclass
class Occlude:
    box_fraction: float = 0.25
    random_location: bool = True


@dataclass
class AffineFixed:
    rotation_deg: float = 0.0
    scale: float = 1.0
    translate: tuple = (0.0, 0.0)


@dataclass
class AffineRandom:
    rotation_range: tuple = (-25.0, 25.0)
    scale_range: tuple = (0.8, 1.2)
    translate_range: tuple = (-2.0, 2.0)


@dataclass
class ChannelMix:
    matrix: list = field(default_factory=lambda: np.eye(3).tolist())
    offset: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class ChannelPermGamma:
    """Nonlinear channel scramble: permutation followed by pointwise gamma."""
    perm: list = field(default_factory=lambda: [1, 2, 0])
    gamma: list = field(default_factory=lambda: [0.5, 2.0, 1.0])


_SHIFT_KINDS = {
    "identity": Identity,
    "blur": Blur,
    "noise": Noise,
    "occlude": Occlude,
    "affine_fixed": AffineFixed,
    "affine_random": AffineRandom,
    "channel_mix": ChannelMix,
    "channel_perm_gamma": ChannelPermGamma,
}


def shift_from_config(cfg: dict):
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in _SHIFT_KINDS:
        raise DataError(f"unknown shift kind {kind!r}")
    cls = _SHIFT_KINDS[kind]
    valid = set(cls.__dataclass_fields__)
    unknown = set(cfg) - valid
    if unknown:
        raise DataError(f"unknown shift parameters for {kind}: {sorted(unknown)}")
    for key in ("translate", "rotation_range", "scale_range", "translate_range"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    return cls(**cfg)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return (k / k.sum()).astype(np.float32)


def _blur_image(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable convolution with zero padding, per channel
    radius = len(kernel) // 2
    out = np.zeros_like(img)
    c, h, w = img.shape
    padded = np.pad(img, ((0, 0), (radius, radius), (0, 0)))
    tmp = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        tmp += kv * padded[:, i:i + h, :]
    padded = np.pad(tmp, ((0, 0), (0, 0), (radius, radius)))
    for i, kv in enumerate(kernel):
        out += kv * padded[:, :, i:i + w]
    return out


def _affine_sample(img: np.ndarray, rotation_deg: float, scale: float,
                   translate) -> np.ndarray:
    """Inverse-map bilinear resampling around the image center, zero pad."""
    c, h, w = img.shape
    theta = np.deg2rad(rotation_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ty, tx = translate
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    # invert p' = scale * R (p - center) + center + t
    dy = (yy - cy - ty) / scale
    dx = (xx - cx - tx) / scale
    src_y = cos_t * dy + sin_t * dx + cy
    src_x = -sin_t * dy + cos_t * dx + cx
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = (src_y - y0).astype(np.float32)
    fx = (src_x - x0).astype(np.float32)
    out = np.zeros_like(img)
    for dy_i, dx_i, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                            (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        ys, xs = y0 + dy_i, x0 + dx_i
        valid = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        ysc = np.clip(ys, 0, h - 1)
        xsc = np.clip(xs, 0, w - 1)
        out += img[:, ysc, xsc] * (wgt * valid)[None]
    return out


def apply_shift(data: LabeledDataset, spec, seed: int = 0) -> LabeledDataset:
    """Transform images per the shift spec; labels untouched, pixels clamped."""
    images = data.images
    n, c, h, w = images.shape
    if isinstance(spec, Identity):
        return LabeledDataset(images.copy(), data.labels.copy(), data.classes)
    if isinstance(spec, Blur):
        kernel = _gaussian_kernel(spec.sigma)
        out = np.stack([_blur_image(img, kernel) for img in images])
    elif isinstance(spec, Noise):
        out = images.copy()
        for i in range(n):
            r = make_rng(child_seed(seed, "noise", i))
            out[i] += r.normal(0.0, spec.sigma, out[i].shape).astype(np.float32)
    elif isinstance(spec, Occlude):
        out = images.copy()
        side = max(1, int(round(np.sqrt(spec.box_fraction) * min(h, w))))
        for i in range(n):
            if spec.random_location:
                r = make_rng(child_seed(seed, "occlude", i))
                oy = int(r.integers(0, h - side + 1))
                ox = int(r.integers(0, w - side + 1))
            else:
                oy, ox = (h - side) // 2, (w - side) // 2
            out[i, :, oy:oy + side, ox:ox + side] = 0.0
    elif isinstance(spec, AffineFixed):
        out = np.stack([
            _affine_sample(img, spec.rotation_deg, spec.scale, spec.translate)
            for img in images])
    elif isinstance(spec, AffineRandom):
        out = np.empty_like(images)
        for i in range(n):
            r = make_rng(child_seed(seed, "affine", i))
            rot = r.uniform(*spec.rotation_range)
            sc = r.uniform(*spec.scale_range)
            ty = r.uniform(*spec.translate_range)
            tx = r.uniform(*spec.translate_range)
            out[i] = _affine_sample(images[i], rot, sc, (ty, tx))
    elif isinstance(spec, ChannelMix):
        m = np.asarray(spec.matrix, dtype=np.float32)
        b = np.asarray(spec.offset, dtype=np.float32)
        if m.shape != (c, c) or b.shape != (c,):
            raise DataError(f"channel mix expects {c}x{c} matrix and {c}-offset")
        out = np.einsum("ij,njhw->nihw", m, images) + b[None, :, None, None]
    elif isinstance(spec, ChannelPermGamma):
        perm = list(spec.perm)
        gamma = np.asarray(spec.gamma, dtype=np.float32)
        if sorted(perm) != list(range(c)) or gamma.shape != (c,):
            raise DataError(f"perm/gamma must cover all {c} channels")
        out = images[:, perm] ** gamma[None, :, None, None]
    else:
        raise DataError(f"unsupported shift spec {type(spec).__name__}")
    return LabeledDataset(np.clip(out, 0.0, 1.0).astype(np.float32),
                          data.labels.copy(), data.classes)


# --------------------------------------------------------------------------
# Splits

@dataclass
class SplitSpec:
    train_per_class: int
    val_per_class: int
    test_per_class: int
    seed: int = 0


def subsample_and_split(data: LabeledDataset, split: SplitSpec):
    """Disjoint stratified (train, val, test) splits.

    Val and test are carved out first, so varying ``train_per_class`` (the
    subsampling ratio) never changes which samples they contain.
    """
    train_idx, val_idx, test_idx = [], [], []
    for cls in range(data.classes):
        pool = np.flatnonzero(data.labels == cls)
        need = split.train_per_class + split.val_per_class + split.test_per_class
        if len(pool) < need:
            raise DataError(
                f"class {cls}: {len(pool)} samples available, {need} requested")
        r = make_rng(child_seed(split.seed, "split", cls))
        pool = pool[r.permutation(len(pool))]
        val_idx.append(pool[:split.val_per_class])
        test_idx.append(pool[split.val_per_class:
                             split.val_per_class + split.test_per_class])
        off = split.val_per_class + split.test_per_class
        train_idx.append(pool[off:off + split.train_per_class])
    return (data.subset(np.sort(np.concatenate(train_idx))),
            data.subset(np.sort(np.concatenate(val_idx))),
            data.subset(np.sort(np.concatenate(test_idx))))
