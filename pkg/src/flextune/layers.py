"""Minimal deterministic layer zoo with manual backpropagation.

Dense, Conv2D, ReLU, MaxPool2D, Flatten and per-channel ScaleShift, plus
softmax cross-entropy and an Adam step. Gradients are always accumulated
into every parameter; the ``trainable`` flag is enforced only inside
``adam_step``, so freezing/unfreezing never requires rebuilding anything.

Everything runs in float32 by default; layers accept ``dtype=np.float64``
for tight gradient checking in tests.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Input shape incompatible with a layer."""


class Param:
    """A trainable tensor with its gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "m", "v", "trainable", "step_count")

    def __init__(self, value: np.ndarray, trainable: bool = True):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)
        self.trainable = trainable
        self.step_count = 0

    def reset_opt_state(self):
        self.grad[...] = 0
        self.m[...] = 0
        self.v[...] = 0
        self.step_count = 0


class Layer:
    """Base class: subclasses implement forward/backward and shape rules."""

    params: list[Param]

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def _shape_error(self, got, expected_desc):
        raise ShapeError(
            f"{type(self).__name__}: input shape {tuple(got)} incompatible "
            f"({expected_desc})"
        )


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, dtype=np.float32):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Param(np.zeros((in_dim, out_dim), dtype=dtype))
        self.bias = Param(np.zeros(out_dim, dtype=dtype))
        self.params = [self.weight, self.bias]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            self._shape_error(x.shape, f"expected [n, {self.in_dim}]")
        y = x @ self.weight.value + self.bias.value
        return y, x

    def backward(self, cache, grad_out):
        x = cache
        if grad_out.shape != (x.shape[0], self.out_dim):
            self._shape_error(grad_out.shape, "grad_out mismatches forward output")
        self.weight.grad += x.T @ grad_out
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value.T

    def out_shape(self, in_shape):
        return (self.out_dim,)

    def spec(self):
        return {"kind": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim}


class Conv2D(Layer):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int = 0, dtype=np.float32):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.weight = Param(np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype))
        self.bias = Param(np.zeros(out_ch, dtype=dtype))
        self.params = [self.weight, self.bias]

    def _out_hw(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def _im2col(self, xp, oh, ow):
        n, c = xp.shape[:2]
        k, s = self.kernel, self.stride
        cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i:i + s * oh:s, j:j + s * ow:s]
        return cols

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            self._shape_error(x.shape, f"expected [n, {self.in_ch}, h, w]")
        n, _, h, w = x.shape
        oh, ow = self._out_hw(h, w)
        if oh < 1 or ow < 1:
            self._shape_error(x.shape, "spatial extent smaller than kernel")
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = self._im2col(xp, oh, ow)
        flat = cols.reshape(n, self.in_ch * self.kernel ** 2, oh * ow)
        wmat = self.weight.value.reshape(self.out_ch, -1)
        y = np.matmul(wmat[None], flat).reshape(n, self.out_ch, oh, ow)
        y += self.bias.value[None, :, None, None]
        return y, (flat, xp.shape, (oh, ow))

    def backward(self, cache, grad_out):
        flat, xp_shape, (oh, ow) = cache
        n = flat.shape[0]
        k, s, p = self.kernel, self.stride, self.padding
        g = grad_out.reshape(n, self.out_ch, oh * ow)
        wmat = self.weight.value.reshape(self.out_ch, -1)
        self.weight.grad += np.einsum("nop,nip->oi", g, flat).reshape(
            self.weight.value.shape)
        self.bias.grad += g.sum(axis=(0, 2))
        gflat = np.matmul(wmat.T[None], g)
        gcols = gflat.reshape(n, self.in_ch, k, k, oh, ow)
        gxp = np.zeros(xp_shape, dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += gcols[:, :, i, j]
        if p:
            return gxp[:, :, p:-p, p:-p]
        return gxp

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            self._shape_error(in_shape, f"expected {self.in_ch} channels")
        oh, ow = self._out_hw(h, w)
        return (self.out_ch, oh, ow)

    def spec(self):
        return {"kind": "conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kernel": self.kernel, "stride": self.stride,
                "padding": self.padding}


class ReLU(Layer):
    def __init__(self):
        self.params = []

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, grad_out):
        return grad_out * cache

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def spec(self):
        return {"kind": "relu"}


class MaxPool2D(Layer):
    def __init__(self, window: int = 2, stride: int = 2):
        self.window = window
        self.stride = stride
        self.params = []

    def forward(self, x):
        if x.ndim != 4:
            self._shape_error(x.shape, "expected [n, c, h, w]")
        n, c, h, w = x.shape
        k, s = self.window, self.stride
        oh, ow = (h - k) // s + 1, (w - k) // s + 1
        if oh < 1 or ow < 1:
            self._shape_error(x.shape, "spatial extent smaller than window")
        stack = np.empty((n, c, k * k, oh, ow), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                stack[:, :, i * k + j] = x[:, :, i:i + s * oh:s, j:j + s * ow:s]
        arg = stack.argmax(axis=2)
        y = np.take_along_axis(stack, arg[:, :, None], axis=2)[:, :, 0]
        return y, (arg, x.shape)

    def backward(self, cache, grad_out):
        arg, x_shape = cache
        n, c, h, w = x_shape
        k, s = self.window, self.stride
        oh, ow = grad_out.shape[2:]
        gstack = np.zeros((n, c, k * k, oh, ow), dtype=grad_out.dtype)
        np.put_along_axis(gstack, arg[:, :, None], grad_out[:, :, None], axis=2)
        gx = np.zeros(x_shape, dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + s * oh:s, j:j + s * ow:s] += gstack[:, :, i * k + j]
        return gx

    def out_shape(self, in_shape):
        c, h, w = in_shape
        k, s = self.window, self.stride
        return (c, (h - k) // s + 1, (w - k) // s + 1)

    def spec(self):
        return {"kind": "maxpool2d", "window": self.window, "stride": self.stride}


class Flatten(Layer):
    def __init__(self):
        self.params = []

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache)

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def spec(self):
        return {"kind": "flatten"}


class ScaleShift(Layer):
    """Per-channel affine y = gamma * x + beta, identity at creation.

    Works on both conv maps [n, c, h, w] (channel axis 1) and dense
    outputs [n, c].
    """

    def __init__(self, channels: int, dtype=np.float32):
        self.channels = channels
        self.scale = Param(np.ones(channels, dtype=dtype))
        self.shift = Param(np.zeros(channels, dtype=dtype))
        self.params = [self.scale, self.shift]

    def _bshape(self, ndim):
        return (1, self.channels) + (1,) * (ndim - 2)

    def forward(self, x):
        if x.ndim not in (2, 4) or x.shape[1] != self.channels:
            self._shape_error(x.shape, f"expected channel axis of {self.channels}")
        b = self._bshape(x.ndim)
        return x * self.scale.value.reshape(b) + self.shift.value.reshape(b), x

    def backward(self, cache, grad_out):
        x = cache
        axes = tuple(i for i in range(x.ndim) if i != 1)
        self.scale.grad += (grad_out * x).sum(axis=axes)
        self.shift.grad += grad_out.sum(axis=axes)
        return grad_out * self.scale.value.reshape(self._bshape(x.ndim))

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def spec(self):
        return {"kind": "scaleshift", "channels": self.channels}


_LAYER_KINDS = {
    "dense": lambda s, dtype: Dense(s["in_dim"], s["out_dim"], dtype=dtype),
    "conv2d": lambda s, dtype: Conv2D(s["in_ch"], s["out_ch"], s["kernel"],
                                      s["stride"], s["padding"], dtype=dtype),
    "relu": lambda s, dtype: ReLU(),
    "maxpool2d": lambda s, dtype: MaxPool2D(s["window"], s["stride"]),
    "flatten": lambda s, dtype: Flatten(),
    "scaleshift": lambda s, dtype: ScaleShift(s["channels"], dtype=dtype),
}


def layer_from_spec(spec: dict, dtype=np.float32) -> Layer:
    kind = spec.get("kind")
    if kind not in _LAYER_KINDS:
        raise ValueError(f"unknown layer kind: {kind!r}")
    return _LAYER_KINDS[kind](spec, dtype)


def init_params(layer: Layer, rng: np.random.Generator):
    """He fan-in initialization for weights, zero biases, identity ScaleShift."""
    if isinstance(layer, Dense):
        std = np.sqrt(2.0 / layer.in_dim)
        layer.weight.value[...] = rng.normal(
            0.0, std, layer.weight.value.shape).astype(layer.weight.value.dtype)
        layer.bias.value[...] = 0
    elif isinstance(layer, Conv2D):
        fan_in = layer.in_ch * layer.kernel ** 2
        std = np.sqrt(2.0 / fan_in)
        layer.weight.value[...] = rng.normal(
            0.0, std, layer.weight.value.shape).astype(layer.weight.value.dtype)
        layer.bias.value[...] = 0
    elif isinstance(layer, ScaleShift):
        layer.scale.value[...] = 1
        layer.shift.value[...] = 0


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, classes = logits.shape
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.log(probs[np.arange(n), labels] + 1e-45).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, grad.astype(logits.dtype)


def adam_step(params: list[Param], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update over trainable params; zeroes every grad afterwards."""
    for p in params:
        if not np.isfinite(p.grad).all():
            raise FloatingPointError("non-finite gradient in adam_step")
        if p.trainable:
            p.step_count += 1
            t = p.step_count
            p.m[...] = beta1 * p.m + (1 - beta1) * p.grad
            p.v[...] = beta2 * p.v + (1 - beta2) * p.grad ** 2
            mhat = p.m / (1 - beta1 ** t)
            vhat = p.v / (1 - beta2 ** t)
            p.value -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.value.dtype)
        p.grad[...] = 0
