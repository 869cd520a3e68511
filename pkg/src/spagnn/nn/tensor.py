"""A small reverse-mode autodiff tensor over float64 numpy arrays."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "as_tensor",
    "custom_op",
    "concat",
    "stack",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "softplus",
    "gather",
    "scatter_max",
    "conv2d",
    "global_max_pool",
    "where_const",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in a dynamically recorded computation graph.

    Leaves created with ``requires_grad=True`` accumulate into ``.grad`` when
    :meth:`backward` is called on a scalar downstream of them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @staticmethod
    def _result(data, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._result(
            self.data + other.data, (self, other), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b))
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._result(
            x * y, (self, other), lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape))
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._result(
            x / y,
            (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, power: float):
        x = self.data
        return Tensor._result(x**power, (self,), lambda g: (g * power * x ** (power - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def backward(g):
            if y.ndim == 1:
                gx = np.multiply.outer(g, y)
                gy = np.tensordot(x, g, axes=(tuple(range(x.ndim - 1)), tuple(range(g.ndim))))
                return gx, gy
            gx = g @ np.swapaxes(y, -1, -2)
            gy = np.swapaxes(x, -1, -2) @ g
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

        return Tensor._result(x @ y, (self, other), backward)

    def __getitem__(self, index):
        shape = self.shape

        def backward(g):
            out = np.zeros(shape)
            np.add.at(out, index, g)
            return (out,)

        return Tensor._result(self.data[index], (self,), backward)

    # -- shape and reductions ---------------------------------------------
    def reshape(self, *shape):
        old = self.shape
        return Tensor._result(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._result(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(inputs: Sequence[Tensor], data: np.ndarray, backward: Callable) -> Tensor:
    """Wrap a numpy computation with a hand-written vector-Jacobian product.

    ``backward(g)`` must return one gradient (or None) per input.
    """
    return Tensor._result(data, [as_tensor(t) for t in inputs], backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def where_const(mask: np.ndarray, x: Tensor, fill: float = 0.0) -> Tensor:
    """Select ``x`` where ``mask`` holds and a constant elsewhere."""
    return Tensor._result(np.where(mask, x.data, fill), (x,), lambda g: (np.where(mask, g, 0.0),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor._result(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor._result(t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return Tensor._result(e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    d = x.data
    return Tensor._result(np.log(d), (x,), lambda g: (g / d,))


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)
    return Tensor._result(r, (x,), lambda g: (0.5 * g / r,))


def softplus(x: Tensor) -> Tensor:
    d = x.data
    return Tensor._result(np.logaddexp(0.0, d), (x,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * d)),))


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``x`` selected by an integer index array (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return Tensor._result(x.data[index], (x,), backward)


def scatter_max(messages: Tensor, destination, node_count: int) -> Tensor:
    """Feature-wise maximum of incoming messages per destination node.

    Nodes without incoming messages receive zeros. The gradient of each
    output feature flows to the lowest-index edge attaining the maximum.
    """
    messages = as_tensor(messages)
    dest = np.asarray(destination, dtype=np.int64)
    n_edges = messages.shape[0]
    if dest.shape != (n_edges,):
        raise ValueError("destination must hold one node id per message")
    if n_edges and (dest.min() < 0 or dest.max() >= node_count):
        raise IndexError("destination id out of range")
    feat_shape = messages.shape[1:]
    m = messages.data
    out = np.full((node_count,) + feat_shape, -np.inf)
    np.maximum.at(out, dest, m)
    has_input = np.isfinite(out[(slice(None),) + (0,) * len(feat_shape)]) if n_edges else np.zeros(node_count, bool)
    out[~has_input] = 0.0

    edge_ids = np.arange(n_edges).reshape((-1,) + (1,) * len(feat_shape))
    candidate = np.where(m == out[dest], edge_ids, n_edges)
    winner = np.full((node_count,) + feat_shape, n_edges)
    np.minimum.at(winner, dest, candidate)

    def backward(g):
        grad = np.zeros_like(m)
        valid = winner < n_edges
        feat_idx = np.nonzero(valid)
        grad[(winner[valid],) + feat_idx[1:]] += g[valid]
        return (grad,)

    return Tensor._result(out, (messages,), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of (B, C, H, W) input with (O, C, kh, kw) weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4 or xd.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    B, C, H, W = xd.shape
    O, _, kh, kw = weight.shape
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ValueError("input smaller than kernel")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # column matrix laid out (C*kh*kw, B*Ho*Wo)
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(C * kh * kw, B * Ho * Wo)
    wmat = weight.data.reshape(O, -1)
    out = wmat @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    if squeeze:
        out = out[0]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g4 = g[None] if squeeze else g
        g2 = g4.transpose(1, 0, 2, 3).reshape(O, -1)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(C, kh, kw, B, Ho, Wo)
            dxp = np.zeros((C, B) + xp.shape[2:])
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, i, j]
            gx = dxp[:, :, padding:padding + H, padding:padding + W].transpose(1, 0, 2, 3)
            gx = gx[0] if squeeze else np.ascontiguousarray(gx)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return Tensor._result(out, parents, backward)


def global_max_pool(x: Tensor) -> Tensor:
    """Max over the two trailing (spatial) axes; ties route to the first cell."""
    shape = x.shape
    flat = x.data.reshape(shape[:-2] + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        grad = np.zeros_like(flat)
        np.put_along_axis(grad, idx[..., None], g[..., None], axis=-1)
        return (grad.reshape(shape),)

    return Tensor._result(out, (x,), backward)
