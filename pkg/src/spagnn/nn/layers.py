"""Parameter initialisers and forward functions for MLPs, GRU cells and convolutions.

Layers are plain functions reading weights from a :class:`ParamStore` under a
name prefix. A linear layer computes ``x @ weight + bias`` with ``weight`` of
shape (n_in, n_out).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .params import ParamStore
from .tensor import Tensor, as_tensor, concat, conv2d, relu, sigmoid, tanh

__all__ = [
    "init_linear",
    "linear",
    "init_mlp",
    "mlp",
    "mlp_forward_backward",
    "init_gru",
    "gru_cell",
    "init_conv",
    "conv",
]


def init_linear(store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 2.0) -> None:
    store.add(f"{name}.weight", rng.normal(0.0, np.sqrt(gain / n_in), size=(n_in, n_out)))
    store.add(f"{name}.bias", np.zeros(n_out))


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    w = store[f"{name}.weight"]
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"{name}: expected {w.shape[0]} input features, got {x.shape[-1]}")
    return x @ w + store[f"{name}.bias"]


def init_mlp(store: ParamStore, name: str, sizes: Sequence[int], rng: np.random.Generator, out_gain: float = 1.0) -> None:
    """Create ``len(sizes) - 1`` linear layers named ``{name}.0``, ``{name}.1``, ..."""
    n = len(sizes) - 1
    for i in range(n):
        init_linear(store, f"{name}.{i}", sizes[i], sizes[i + 1], rng, gain=2.0 if i < n - 1 else out_gain)


def mlp(store: ParamStore, name: str, x, n_layers: int | None = None) -> Tensor:
    """ReLU hidden layers, linear output."""
    x = as_tensor(x)
    if n_layers is None:
        n_layers = 0
        while f"{name}.{n_layers}.weight" in store:
            n_layers += 1
    for i in range(n_layers):
        x = linear(store, f"{name}.{i}", x)
        if i < n_layers - 1:
            x = relu(x)
    return x


def mlp_forward_backward(store: ParamStore, name: str, x, grad_out=None):
    """Run an MLP and, if ``grad_out`` is given, back-propagate it.

    Parameter gradients accumulate into the store. Returns the output array
    and the gradient with respect to ``x`` (None without ``grad_out``).
    """
    xt = Tensor(np.asarray(x, dtype=float), requires_grad=grad_out is not None)
    y = mlp(store, name, xt)
    if grad_out is None:
        return y.data, None
    y.backward(np.asarray(grad_out, dtype=float))
    return y.data, xt.grad


def init_gru(store: ParamStore, name: str, n_in: int, n_hidden: int, rng: np.random.Generator) -> None:
    n_cat = n_in + n_hidden
    scale = 1.0 / np.sqrt(n_cat)
    for gate in ("update", "reset", "candidate"):
        store.add(f"{name}.{gate}.weight", rng.uniform(-scale, scale, size=(n_cat, n_hidden)))
        store.add(f"{name}.{gate}.bias", np.zeros(n_hidden))


def gru_cell(store: ParamStore, name: str, x, h) -> Tensor:
    """GRU update.

    z = sigmoid(W_z [x, h] + b_z), r = sigmoid(W_r [x, h] + b_r),
    c = tanh(W_c [x, r*h] + b_c), h' = (1 - z) * h + z * c.
    """
    x, h = as_tensor(x), as_tensor(h)
    n_hidden = store[f"{name}.update.bias"].shape[0]
    if h.shape[-1] != n_hidden or x.shape[:-1] != h.shape[:-1]:
        raise ValueError(f"{name}: incompatible input {x.shape} and hidden {h.shape}")
    xh = concat([x, h], axis=-1)
    z = sigmoid(linear(store, f"{name}.update", xh))
    r = sigmoid(linear(store, f"{name}.reset", xh))
    c = tanh(linear(store, f"{name}.candidate", concat([x, r * h], axis=-1)))
    return (1.0 - z) * h + z * c


def init_conv(store: ParamStore, name: str, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, gain: float = 2.0) -> None:
    fan_in = c_in * kernel * kernel
    store.add(f"{name}.weight", rng.normal(0.0, np.sqrt(gain / fan_in), size=(c_out, c_in, kernel, kernel)))
    store.add(f"{name}.bias", np.zeros(c_out))


def conv(store: ParamStore, name: str, x, stride: int = 1, padding: int = 0) -> Tensor:
    return conv2d(as_tensor(x), store[f"{name}.weight"], store[f"{name}.bias"], stride=stride, padding=padding)
