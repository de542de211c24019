import numpy as np
import pytest

from flextune.architectures import build_network, init_network
from flextune.data import SplitSpec, subsample_and_split, synth_dataset
from flextune.seeds import make_rng
from flextune.selection import all_mask
from flextune.training import TrainConfig, fine_tune

SOURCE_SEED = 0
TARGET_SEED = 99
PRETRAIN_SEED = 7

# permutation-heavy, invertible, row-stochastic: keeps pixels in [0, 1]
# so the closed-form inverse recovers inputs exactly (no clamping loss)
CHANNEL_MIX_MATRIX = [[0.15, 0.70, 0.15],
                      [0.70, 0.15, 0.15],
                      [0.15, 0.15, 0.70]]


def pretrain_reference(channels: int):
    """Pretrained 4-unit reference net on clean synthetic digits."""
    data = synth_dataset(SOURCE_SEED, 4000, channels=channels)
    train, val, test = subsample_and_split(data, SplitSpec(300, 30, 50, seed=1))
    net = build_network("mnist4", (channels, 16, 16), 10)
    init_network(net, 1)
    outcome = fine_tune(net, all_mask(net), train, val,
                        TrainConfig(seed=PRETRAIN_SEED))
    return outcome.network, (train, val, test)


@pytest.fixture(scope="session")
def source_1ch():
    return pretrain_reference(channels=1)


@pytest.fixture(scope="session")
def source_3ch():
    return pretrain_reference(channels=3)


@pytest.fixture(scope="session")
def target_pool_1ch():
    # 400/class: enough for the 300/class ratio plus 30 val + 50 test
    return synth_dataset(TARGET_SEED, 4000, channels=1)


@pytest.fixture(scope="session")
def target_pool_3ch():
    return synth_dataset(TARGET_SEED, 3000, channels=3)


def finite_difference_grad(f, x, h=1e-3):
    """Central finite differences of a scalar function, elementwise."""
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / denom


def layer_grad_rel_err(layer, x, probe, h=1e-3):
    """Norm-based relative error between the analytic and finite-difference
    gradient of the linear probe loss sum(probe * layer(x)), taken over the
    concatenated (input, parameters) gradient vector."""
    _, cache = layer.forward(x)
    for p in layer.params:
        p.grad[...] = 0.0
    gx = layer.backward(cache, probe.astype(x.dtype))

    def loss():
        out, _ = layer.forward(x)
        return float(np.sum(out.astype(np.float64) * probe))

    analytic = [np.ravel(gx)]
    numeric = [np.ravel(finite_difference_grad(loss, x, h))]
    for p in layer.params:
        analytic.append(np.ravel(p.grad.copy()))
        numeric.append(np.ravel(finite_difference_grad(loss, p.value, h)))
    return rel_err(np.concatenate(analytic), np.concatenate(numeric))


def _kink_safe(rng, shape, dtype, margin=0.05):
    """Values bounded away from zero (ReLU kinks) by at least ``margin``."""
    mags = rng.uniform(margin, 1.5, size=shape)
    signs = rng.choice([-1.0, 1.0], size=shape)
    return (mags * signs).astype(dtype)


def _tie_free(rng, shape, dtype, spread=4.0):
    """Distinct, well-separated values (no max-pool ties within 2h)."""
    n = int(np.prod(shape))
    vals = np.linspace(-spread / 2, spread / 2, n)
    vals[np.abs(vals) < 0.05] += 0.1  # also clear of zero for safety
    return vals[rng.permutation(n)].reshape(shape).astype(dtype)


def random_layer_instances(kind, count, dtype, seed=0):
    """Yield (layer, input) pairs with finite-difference-safe inputs."""
    from flextune.layers import (Conv2D, Dense, Flatten, MaxPool2D, ReLU,
                                 ScaleShift, init_params)
    from flextune.seeds import child_seed

    for i in range(count):
        rng = make_rng(child_seed(seed, "grad-instance", kind, i))
        batch = int(rng.integers(2, 5))
        if kind == "dense":
            nin, nout = int(rng.integers(3, 7)), int(rng.integers(2, 6))
            layer = Dense(nin, nout, dtype=dtype)
            init_params(layer, rng)
            layer.bias.value[...] = rng.normal(size=nout) * 0.1
            x = rng.normal(size=(batch, nin)).astype(dtype)
        elif kind == "conv2d":
            cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            k = int(rng.choice([1, 3]))
            stride = int(rng.choice([1, 2]))
            pad = int(rng.choice([0, 1])) if k == 3 else 0
            size = int(rng.integers(5, 9))
            layer = Conv2D(cin, cout, k, stride=stride, padding=pad,
                           dtype=dtype)
            init_params(layer, rng)
            layer.bias.value[...] = rng.normal(size=cout) * 0.1
            x = rng.normal(size=(batch, cin, size, size)).astype(dtype)
        elif kind == "relu":
            n = int(rng.integers(3, 12))
            layer = ReLU()
            x = _kink_safe(rng, (batch, n), dtype)
        elif kind == "maxpool":
            c = int(rng.integers(1, 3))
            size = int(rng.choice([4, 6, 8]))
            layer = MaxPool2D(2, 2)
            x = _tie_free(rng, (batch, c, size, size), dtype)
        elif kind == "flatten":
            c = int(rng.integers(1, 3))
            layer = Flatten()
            x = rng.normal(size=(batch, c, 3, 3)).astype(dtype)
        elif kind == "scaleshift":
            c = int(rng.integers(2, 6))
            layer = ScaleShift(c, dtype=dtype)
            layer.scale.value[...] = rng.uniform(0.5, 1.5, size=c)
            layer.shift.value[...] = rng.normal(size=c) * 0.3
            if rng.random() < 0.5:
                x = rng.normal(size=(batch, c)).astype(dtype)
            else:
                x = rng.normal(size=(batch, c, 4, 4)).astype(dtype)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        probe = make_rng(child_seed(seed, "grad-probe", kind, i)).normal(
            size=layer.forward(x)[0].shape)
        yield layer, x, probe


LAYER_KINDS = ("dense", "conv2d", "relu", "maxpool", "flatten", "scaleshift")
