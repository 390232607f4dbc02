"""Minimal reverse-mode autodiff over numpy float64 arrays.

A ``Tensor`` wraps an ndarray and records a closure that routes the
output gradient back to its parents. ``backward()`` walks the graph in
reverse topological order (iteratively, so long sequential graphs don't
hit the recursion limit). Graphs are pruned at constants: nodes only
keep parents that require gradients.
"""

from __future__ import annotations

import numpy as np

_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _tracked(t: "Tensor") -> bool:
    # Whether gradients should flow into this node at all.
    return t.requires_grad or bool(t._parents)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        # Skip constants entirely; never mutate an incoming array in place.
        if not (self.requires_grad or self._parents):
            return
        if self.grad is None:
            self.grad = np.asarray(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() expects a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- graph construction helper ------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        grad_parents = tuple(p for p in parents if p.requires_grad or p._parents)
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if grad_parents or out.requires_grad:
            out._parents = grad_parents
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)

        def bw(g):
            if _tracked(self):
                self._accumulate(_unbroadcast(g, self.data.shape))
            if _tracked(other):
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._make(self.data + other.data, (self, other), bw)

    __radd__ = __add__

    def __mul__(self, other):
        other = _as_tensor(other)

        def bw(g):
            if _tracked(self):
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if _tracked(other):
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(self.data * other.data, (self, other), bw)

    __rmul__ = __mul__

    def __neg__(self):
        def bw(g):
            self._accumulate(-g)

        return Tensor._make(-self.data, (self,), bw)

    def __sub__(self, other):
        other = _as_tensor(other)

        def bw(g):
            if _tracked(self):
                self._accumulate(_unbroadcast(g, self.data.shape))
            if _tracked(other):
                other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._make(self.data - other.data, (self, other), bw)

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __truediv__(self, other):
        other = _as_tensor(other)

        def bw(g):
            if _tracked(self):
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if _tracked(other):
                other._accumulate(_unbroadcast(-g * self.data / other.data**2, other.data.shape))

        return Tensor._make(self.data / other.data, (self, other), bw)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")

        def bw(g):
            self._accumulate(g * p * self.data ** (p - 1))

        return Tensor._make(self.data**p, (self,), bw)

    def __matmul__(self, other):
        other = _as_tensor(other)

        def bw(g):
            a, b = self.data, other.data
            g = np.asarray(g)
            if _tracked(self):
                if b.ndim == 1:
                    ga = g[..., None] * b
                else:
                    ga = _unbroadcast(np.matmul(g, b.swapaxes(-1, -2)), a.shape)
                self._accumulate(ga)
            if _tracked(other):
                if a.ndim == 1 and b.ndim == 1:
                    gb = a * g
                elif b.ndim == 1:
                    gb = (a * g[..., None]).reshape(-1, a.shape[-1]).sum(axis=0)
                elif a.ndim == 1:
                    gb = _unbroadcast(a[:, None] * g[..., None, :], b.shape)
                else:
                    gb = _unbroadcast(np.matmul(a.swapaxes(-1, -2), g), b.shape)
                other._accumulate(gb)

        return Tensor._make(self.data @ other.data, (self, other), bw)

    # -- elementwise functions ------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bw(g):
            self._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), bw)

    def log(self):
        def bw(g):
            self._accumulate(g / self.data)

        return Tensor._make(np.log(self.data), (self,), bw)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bw(g):
            self._accumulate(g * (1.0 - out_data**2))

        return Tensor._make(out_data, (self,), bw)

    def abs(self):
        def bw(g):
            self._accumulate(g * np.sign(self.data))

        return Tensor._make(np.abs(self.data), (self,), bw)

    def gelu(self):
        # tanh-form GELU, numpy only. The derivative is cached at forward
        # time so the backward is a single multiply.
        x = self.data
        x2 = x * x
        th = np.tanh(_GELU_C * x * (1.0 + _GELU_A * x2))
        half_1p_th = 0.5 * (1.0 + th)
        out_data = x * half_1p_th
        deriv = half_1p_th + (0.5 * _GELU_C) * x * (1.0 - th * th) * (1.0 + 3.0 * _GELU_A * x2)

        def bw(g):
            self._accumulate(g * deriv)

        return Tensor._make(out_data, (self,), bw)

    def clip(self, lo: float, hi: float):
        inside = (self.data > lo) & (self.data < hi)

        def bw(g):
            self._accumulate(g * inside)

        return Tensor._make(np.clip(self.data, lo, hi), (self,), bw)

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def bw(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape))
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(gg, self.data.shape))

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape manipulation ----------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]

        def bw(g):
            self._accumulate(g.reshape(self.data.shape))

        return Tensor._make(self.data.reshape(shape), (self,), bw)

    def swapaxes(self, a: int, b: int):
        def bw(g):
            self._accumulate(g.swapaxes(a, b))

        return Tensor._make(self.data.swapaxes(a, b), (self,), bw)

    def __getitem__(self, idx):
        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)

        return Tensor._make(self.data[idx], (self,), bw)

    # -- fused ops ---------------------------------------------------------

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            self._accumulate((g - dot) * out_data)

        return Tensor._make(out_data, (self,), bw)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw
    )


def where_mask(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where a constant 0/1 condition holds, else ``b``."""
    c = np.asarray(cond, dtype=np.float64)
    return a * c + b * (1.0 - c)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Fused into a single graph node; the backward applies the standard
    layer-norm gradient identity instead of composing primitive ops.
    """
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def bw(g):
        if _tracked(gain):
            axes = tuple(range(g.ndim - 1))
            gain._accumulate((g * xhat).sum(axis=axes))
        if _tracked(bias):
            bias._accumulate(g.sum(axis=tuple(range(g.ndim - 1))))
        if _tracked(x):
            dxhat = g * gain.data
            term = dxhat.mean(axis=-1, keepdims=True)
            term_hat = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (dxhat - term - xhat * term_hat))

    return Tensor._make(out_data, (x, gain, bias), bw)
