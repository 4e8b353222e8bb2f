"""Minimal reverse-mode autodiff over (batch, channels, height, width) arrays.

The op set is closed: conv2d (1x1 and 3x3, stride 1, same padding), group
normalization, sigmoid / tanh / SiLU, nearest 2x up/down resampling, channel
concat and softmax attention across the batch axis.  Anything else raises
``UnsupportedOpError`` when the graph is built, including Python arithmetic
on tensors.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

OPS = frozenset({"conv2d", "group_norm", "sigmoid", "tanh", "silu", "resample", "concat", "attention"})


class UnsupportedOpError(TypeError):
    """An operation outside the supported set was requested."""


class Tensor:
    """A value in the graph plus its gradient slot."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, value, requires_grad: bool = False, parents: Sequence["Tensor"] = (), backward_fn=None, op=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Tensor":
        """Same value, cut from the graph: nothing upstream receives gradient through it."""
        return Tensor(self.value, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate d(out)/d(leaf) * grad into every reachable leaf's ``grad``."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.value)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.value.shape:
            raise ValueError(f"grad shape {grad.shape} != value shape {self.value.shape}")
        order, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen or not node.requires_grad:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                stack.extend((p, False) for p in node.parents)

        visit(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:  # leaf
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, gp in zip(node.parents, node.backward_fn(g)):
                if gp is None or not p.requires_grad:
                    continue
                pending[id(p)] = gp if id(p) not in pending else pending[id(p)] + gp

    def _unsupported(self, *args, **kw):
        raise UnsupportedOpError("arithmetic on tensors is outside the supported op set")

    __add__ = __radd__ = __sub__ = __rsub__ = __mul__ = __rmul__ = __truediv__ = __matmul__ = __neg__ = __pow__ = _unsupported

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _node(op: str, value, parents, backward_fn) -> Tensor:
    if op not in OPS:
        raise UnsupportedOpError(f"op {op!r} is not supported; available: {sorted(OPS)}")
    return Tensor(value, parents=parents, backward_fn=backward_fn, op=op)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---- ops ----


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero 'same' padding; w is (Cout, Cin, k, k), k in {1, 3}."""
    x, w = _as_tensor(x), _as_tensor(w)
    k = w.shape[2]
    if w.value.ndim != 4 or k not in (1, 3) or w.shape[3] != k:
        raise UnsupportedOpError(f"conv2d supports 1x1 and 3x3 kernels, got weight {w.shape}")
    if x.value.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"input {x.shape} does not match weight {w.shape}")
    B, C, H, W = x.shape
    xv, wv = x.value, w.value
    if k == 1:
        out = np.einsum("bchw,oc->bohw", xv, wv[:, :, 0, 0], optimize=True)
        patches = None
    else:
        xp = np.pad(xv, ((0, 0), (0, 0), (1, 1), (1, 1)))
        patches = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (B, C, H, W, 3, 3)
        out = np.tensordot(patches, wv, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        b = _as_tensor(b)
        out = out + b.value[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        if k == 1:
            gx = np.einsum("bohw,oc->bchw", g, wv[:, :, 0, 0], optimize=True)
            gw = np.einsum("bohw,bchw->oc", g, xv, optimize=True)[:, :, None, None]
        else:
            gw = np.tensordot(g, patches, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, 3, 3)
            gxp = np.zeros((B, C, H + 2, W + 2))
            for i in range(3):
                for j in range(3):
                    gxp[:, :, i : i + H, j : j + W] += np.einsum("bohw,oc->bchw", g, wv[:, :, i, j], optimize=True)
            gx = gxp[:, :, 1:-1, 1:-1]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _node("conv2d", out, parents, back)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    B, C, H, W = x.shape
    if C % groups:
        raise ValueError(f"{C} channels not divisible into {groups} groups")
    xg = x.value.reshape(B, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(B, C, H, W)
    out = xhat * gamma.value[None, :, None, None] + beta.value[None, :, None, None]

    def back(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxh = (g * gamma.value[None, :, None, None]).reshape(B, groups, -1)
        xh = xhat.reshape(B, groups, -1)
        gx = inv * (gxh - gxh.mean(axis=2, keepdims=True) - xh * (gxh * xh).mean(axis=2, keepdims=True))
        return gx.reshape(B, C, H, W), gg, gb

    return _node("group_norm", out, (x, gamma, beta), back)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _node("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.value)
    return _node("tanh", t, (x,), lambda g: (g * (1 - t * t),))


def silu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _node("silu", x.value * s, (x,), lambda g: (g * s * (1 + x.value * (1 - s)),))


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling (each pixel becomes a 2x2 block)."""
    x = _as_tensor(x)
    out = x.value.repeat(2, axis=2).repeat(2, axis=3)
    B, C, H, W = x.shape

    def back(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return _node("resample", out, (x,), back)


def downsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x downsampling (keeps the top-left pixel of each 2x2 block)."""
    x = _as_tensor(x)
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"downsample2x needs even sizes, got {H}x{W}")
    out = np.ascontiguousarray(x.value[:, :, ::2, ::2])

    def back(g):
        gx = np.zeros((B, C, H, W))
        gx[:, :, ::2, ::2] = g
        return (gx,)

    return _node("resample", out, (x,), back)


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along channels."""
    xs = [_as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[1] for x in xs])[:-1]
    out = np.concatenate([x.value for x in xs], axis=1)
    return _node("concat", out, xs, lambda g: np.split(g, sizes, axis=1))


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Per-pixel softmax attention across the batch axis (the views).

    out[a, :, p] = sum_b softmax_b(q[a, :, p] . k[b, :, p] / sqrt(C)) v[b, :, p].
    No positional term, so permuting the batch permutes the output.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if not (q.shape == k.shape and q.shape[0] == v.shape[0] and q.shape[2:] == v.shape[2:]):
        raise ValueError(f"attention shapes differ: {q.shape}, {k.shape}, {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[1])
    s = np.einsum("achw,bchw->abhw", q.value, k.value, optimize=True) * scale
    s = s - s.max(axis=1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=1, keepdims=True)
    out = np.einsum("abhw,bchw->achw", a, v.value, optimize=True)

    def back(g):
        gv = np.einsum("abhw,achw->bchw", a, g, optimize=True)
        ga = np.einsum("achw,bchw->abhw", g, v.value, optimize=True)
        gs = a * (ga - (a * ga).sum(axis=1, keepdims=True)) * scale
        gq = np.einsum("abhw,bchw->achw", gs, k.value, optimize=True)
        gk = np.einsum("abhw,achw->bchw", gs, q.value, optimize=True)
        return gq, gk, gv

    return _node("attention", out, (q, k, v), back)


_REGISTRY = {
    "conv2d": conv2d,
    "group_norm": group_norm,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "silu": silu,
    "upsample2x": upsample2x,
    "downsample2x": downsample2x,
    "concat": concat,
    "attention": attention,
}


def apply(name: str, *args, **kw) -> Tensor:
    """Build a node by op name; unknown names raise ``UnsupportedOpError``."""
    fn = _REGISTRY.get(name)
    if fn is None:
        raise UnsupportedOpError(f"op {name!r} is not supported; available: {sorted(_REGISTRY)}")
    return fn(*args, **kw)
