"""MLP building blocks with hand-written backward passes.

Every layer works on arrays whose last axis is the feature axis; any leading
axes are treated as batch axes (``maxpool_set`` reduces the second-to-last
axis). ``forward`` returns ``(output, cache)`` and ``backward`` consumes the
cache, returning ``(input_grad, {param_name: grad})``.
"""
import math

import numpy as np

from ..errors import InvalidArgumentError, StateError


class ParamStore:
    """Named parameter arrays plus non-trainable buffers and a train/eval flag."""

    def __init__(self, params=None, buffers=None, mode="train"):
        self.params = dict(params or {})
        self.buffers = dict(buffers or {})
        self.mode = mode

    def __getitem__(self, name):
        if name in self.params:
            return self.params[name]
        return self.buffers[name]

    def __contains__(self, name):
        return name in self.params or name in self.buffers

    @property
    def training(self):
        return self.mode == "train"

    def n_params(self):
        return sum(a.size for a in self.params.values())

    def flat(self):
        return np.concatenate([self.params[k].ravel() for k in self.params])

    def copy(self):
        return ParamStore(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.mode,
        )

    def astype(self, dtype):
        return ParamStore(
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.mode,
        )

    def with_params(self, params):
        return ParamStore(params, self.buffers, self.mode)

    def arrays(self):
        out = dict(self.params)
        out.update(self.buffers)
        return out


def _need(cache):
    if cache is None:
        raise StateError("backward called without a cached forward pass")
    return cache


def _flat2(a):
    return a.reshape(-1, a.shape[-1])


def _check_width(x, width, name):
    if x.shape[-1] != width:
        raise InvalidArgumentError(f"{name}: expected last axis {width}, got {x.shape}")


class Layer:
    kind = None

    def init(self, rng, dtype=np.float32):
        return {}

    def buffers(self, dtype=np.float32):
        return {}


class Linear(Layer):
    kind = "linear"

    def __init__(self, name, fan_in, fan_out, init="kaiming", omega0=30.0):
        if fan_in < 1 or fan_out < 1:
            raise InvalidArgumentError("fan_in and fan_out must be >= 1")
        self.name, self.fan_in, self.fan_out = name, fan_in, fan_out
        self.init_scheme, self.omega0 = init, omega0

    def init(self, rng, dtype=np.float32):
        if self.init_scheme == "siren_first":
            bound = 1.0 / self.fan_in
        elif self.init_scheme == "siren":
            bound = math.sqrt(6.0 / self.fan_in) / self.omega0
        else:
            bound = math.sqrt(6.0 / self.fan_in)
        W = rng.uniform(-bound, bound, size=(self.fan_out, self.fan_in))
        if self.init_scheme == "kaiming":
            b = np.zeros(self.fan_out)
        else:
            bb = 1.0 / math.sqrt(self.fan_in)
            b = rng.uniform(-bb, bb, size=self.fan_out)
        return {f"{self.name}.W": W.astype(dtype), f"{self.name}.b": b.astype(dtype)}

    def forward(self, store, x):
        _check_width(x, self.fan_in, self.name)
        return x @ store[f"{self.name}.W"].T + store[f"{self.name}.b"], x

    def backward(self, store, cache, dy):
        x = _need(cache)
        W = store[f"{self.name}.W"]
        g2 = _flat2(dy)
        grads = {f"{self.name}.W": g2.T @ _flat2(x), f"{self.name}.b": g2.sum(axis=0)}
        return dy @ W, grads


class Sine(Linear):
    """``sin(omega0 * (x W^T + b))``."""

    kind = "sine"

    def __init__(self, name, fan_in, fan_out, omega0=30.0, first=False):
        if not omega0 > 0:
            raise InvalidArgumentError("omega0 must be > 0")
        super().__init__(name, fan_in, fan_out, init="siren_first" if first else "siren", omega0=omega0)

    def forward(self, store, x):
        pre, _ = Linear.forward(self, store, x)
        arg = self.omega0 * pre
        return np.sin(arg), (x, arg)

    def backward(self, store, cache, dy):
        x, arg = _need(cache)
        return Linear.backward(self, store, x, dy * (self.omega0 * np.cos(arg)))


def sine_forward(x, W, b, omega0=30.0):
    x, W, b = np.asarray(x), np.asarray(W), np.asarray(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise InvalidArgumentError(f"shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return np.sin(omega0 * (x @ W.T + b))


class ReLU(Layer):
    kind = "relu"

    def forward(self, store, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, store, cache, dy):
        return dy * _need(cache), {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, store, x):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        y[~pos] = e / (1.0 + e)
        return y, y

    def backward(self, store, cache, dy):
        y = _need(cache)
        return dy * y * (1.0 - y), {}


class BatchNorm(Layer):
    """Batch normalization over every leading axis."""

    kind = "batchnorm"

    def __init__(self, name, width, momentum=0.1, eps=1e-5):
        self.name, self.width, self.momentum, self.eps = name, width, momentum, eps

    def init(self, rng, dtype=np.float32):
        return {f"{self.name}.gamma": np.ones(self.width, dtype), f"{self.name}.beta": np.zeros(self.width, dtype)}

    def buffers(self, dtype=np.float32):
        return {f"{self.name}.running_mean": np.zeros(self.width, dtype), f"{self.name}.running_var": np.ones(self.width, dtype)}

    def forward(self, store, x):
        _check_width(x, self.width, self.name)
        gamma, beta = store[f"{self.name}.gamma"], store[f"{self.name}.beta"]
        if not store.training:
            mean, var = store[f"{self.name}.running_mean"], store[f"{self.name}.running_var"]
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv
            return xhat * gamma + beta, ("eval", xhat, inv)
        x2 = _flat2(x)
        n = x2.shape[0]
        mean = x2.mean(axis=0)
        xc = x - mean
        var = (_flat2(xc) ** 2).mean(axis=0)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        m = self.momentum
        rm, rv = f"{self.name}.running_mean", f"{self.name}.running_var"
        unbiased = var * (n / (n - 1)) if n > 1 else var
        store.buffers[rm] = ((1 - m) * store.buffers[rm] + m * mean).astype(store.buffers[rm].dtype)
        store.buffers[rv] = ((1 - m) * store.buffers[rv] + m * unbiased).astype(store.buffers[rv].dtype)
        return xhat * gamma + beta, ("train", xhat, inv)

    def backward(self, store, cache, dy):
        cache = _need(cache)
        gamma = store[f"{self.name}.gamma"]
        mode, xhat, inv = cache
        dy2, xh2 = _flat2(dy), _flat2(xhat)
        n = dy2.shape[0]
        grads = {f"{self.name}.gamma": (dy2 * xh2).sum(axis=0), f"{self.name}.beta": dy2.sum(axis=0)}
        if mode == "eval":
            return dy * (inv * gamma), grads
        dxhat = dy * gamma
        dx = (inv / n) * (n * dxhat - _flat2(dxhat).sum(axis=0) - xhat * (_flat2(dxhat) * xh2).sum(axis=0))
        return dx, grads


def maxpool_set(rows):
    """Elementwise maximum over a set of equal-width rows."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise InvalidArgumentError("maxpool_set needs a non-empty (rows, width) array")
    return rows.max(axis=0)


class MaxPoolSet(Layer):
    """Max over the row axis (second to last); permutation invariant."""

    kind = "maxpool_set"

    def forward(self, store, x):
        if x.ndim < 2 or x.shape[-2] == 0:
            raise InvalidArgumentError("maxpool_set needs at least one row")
        idx = np.argmax(x, axis=-2)
        return np.take_along_axis(x, idx[..., None, :], axis=-2)[..., 0, :], (x.shape, idx)

    def backward(self, store, cache, dy):
        shape, idx = _need(cache)
        dx = np.zeros(shape, dtype=dy.dtype)
        np.put_along_axis(dx, idx[..., None, :], dy[..., None, :], axis=-2)
        return dx, {}


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, rng, dtype=np.float32):
        out = {}
        for layer in self.layers:
            out.update(layer.init(rng, dtype))
        return out

    def buffers(self, dtype=np.float32):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers(dtype))
        return out

    def forward(self, store, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(store, x)
            caches.append(c)
        return x, caches

    def backward(self, store, cache, dy):
        grads = {}
        for layer, c in zip(reversed(self.layers), reversed(_need(cache))):
            dy, g = layer.backward(store, c, dy)
            grads.update(g)
        return dy, grads


def add_grads(total, more):
    for k, v in more.items():
        total[k] = total[k] + v if k in total else v
    return total
