"""Named parameter store plus small layer helpers shared by the network
modules. Weights initialize uniform in ±sqrt(6/(fan_in+fan_out)), biases at
zero; every tensor is registered under a dotted name so checkpoints and the
optimizer can address them stably.
"""

import numpy as np

from . import autodiff as ad


class ParamError(Exception):
    pass


class Params:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._store = {}

    def add(self, name, array):
        if name in self._store:
            raise ParamError(f"duplicate parameter name '{name}'")
        self._store[name] = ad.tensor(np.asarray(array, dtype=self.dtype),
                                      requires_grad=True)

    def __getitem__(self, name):
        try:
            return self._store[name]
        except KeyError:
            raise ParamError(f"unknown parameter '{name}'") from None

    def __contains__(self, name):
        return name in self._store

    def names(self):
        return sorted(self._store)

    def items(self):
        return [(n, self._store[n]) for n in self.names()]

    def zero_grad(self):
        for t in self._store.values():
            t.grad = None

    def total_size(self):
        return sum(t.size for t in self._store.values())

    def set_value(self, name, array):
        t = self[name]
        arr = np.asarray(array, dtype=t.data.dtype)
        if arr.shape != t.data.shape:
            raise ParamError(
                f"parameter '{name}': shape {arr.shape} != {t.data.shape}")
        t.data = np.ascontiguousarray(arr)


def glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def add_linear(params, rng, name, n_in, n_out):
    params.add(name + ".w", glorot(rng, (n_in, n_out), n_in, n_out))
    params.add(name + ".b", np.zeros(n_out))


def linear(params, name, x):
    """x (N,Ci) -> (N,Co) affine transform."""
    w = params[name + ".w"]
    b = params[name + ".b"]
    y = ad.matmul(x, w)
    return ad.add(y, ad.broadcast_to(ad.reshape(b, (1, -1)), y.shape))


def add_conv(params, rng, name, k, c_in, c_out):
    params.add(name + ".w",
               glorot(rng, (k, k, c_in, c_out), k * k * c_in, k * k * c_out))
    params.add(name + ".b", np.zeros(c_out))


def conv(params, name, x, stride):
    return ad.conv2d(x, params[name + ".w"], params[name + ".b"], stride=stride)


def mlp(params, prefix, x, n_layers, relu_last=False):
    """Stack of linear layers prefix.0 .. prefix.<n-1>, relu between."""
    for i in range(n_layers):
        x = linear(params, f"{prefix}.{i}", x)
        if relu_last or i + 1 < n_layers:
            x = ad.relu(x)
    return x


def add_mlp(params, rng, prefix, widths):
    """Register linears for consecutive width pairs: widths[0]->...->widths[-1]."""
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        add_linear(params, rng, f"{prefix}.{i}", a, b)
