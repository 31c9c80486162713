"""Minimal reverse-mode autodiff on numpy arrays.

Only the operations needed by the score models and the section classifier are
implemented. Every op checks its output for NaN/Inf and raises NonFiniteError
naming the op. Storage dtype is float32 by default; float64 graphs are used
for finite-difference verification.
"""
from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None, op="leaf"):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        # leaf parameters keep a persistent zero-filled gradient slot
        self.grad = np.zeros_like(self.data) if (requires_grad and not _parents) else None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op {op!r}")


def _make(data, parents, backward_fn, op):
    _check_finite(data, op)
    return Tensor(data, _parents=parents, _backward_fn=backward_fn, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out_data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out_data, (a, b), bwd, "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out_data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out_data, (a, b), bwd, "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out_data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(out_data, (a, b), bwd, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(out_data, (a, b), bwd, "matmul")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # gradient at exactly 0 is 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)  # sign(0) = 0, matching the relu tie rule
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out_data = np.asarray(a.data.mean(), dtype=a.data.dtype)

    def bwd(g):
        return (np.full_like(a.data, g / n),)

    return _make(out_data, (a,), bwd, "mean_all")


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out_data, (a,), bwd, "sum_axis")


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _make(out_data, (a,), bwd, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _make(out_data, (a,), bwd, "transpose")


def concat(tensors: list, axis: int = 0) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(out_data, tuple(tensors), bwd, "concat")


def select(a: Tensor, index: int, axis: int) -> Tensor:
    """Pick one slice along `axis` (the axis is removed)."""
    out_data = np.take(a.data, index, axis=axis)

    def bwd(g):
        full = np.zeros_like(a.data)
        slicer = [slice(None)] * a.data.ndim
        slicer[axis] = index
        full[tuple(slicer)] = g
        return (full,)

    return _make(out_data, (a,), bwd, "select")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _make(y, (a,), bwd, "softmax")


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv_std
    out_data = xhat * gamma.data + beta.data

    def bwd(g):
        g_beta = _unbroadcast(g, beta.data.shape)
        g_gamma = _unbroadcast(g * xhat, gamma.data.shape)
        g_xhat = g * gamma.data
        m1 = g_xhat.mean(axis=-1, keepdims=True)
        m2 = (g_xhat * xhat).mean(axis=-1, keepdims=True)
        g_a = (g_xhat - m1 - xhat * m2) * inv_std
        return g_a, g_gamma, g_beta

    return _make(out_data, (a, gamma, beta), bwd, "layer_norm")


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return _make(a.data.copy(), (a,), lambda g: (g,), "dropout_id")
    keep = rng.random(a.data.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=a.data.dtype)
    mask = keep.astype(a.data.dtype) * scale

    def bwd(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bwd, "dropout")


def bce_with_logits(z: Tensor, targets) -> Tensor:
    """Per-element binary cross entropy of sigmoid(z) against targets in {0,1}.

    Computed in logits form: max(z,0) - z*t + log1p(exp(-|z|)), stable for any
    finite z.
    """
    t = np.asarray(targets, dtype=z.data.dtype)
    zd = z.data
    out_data = np.maximum(zd, 0.0) - zd * t + np.log1p(np.exp(-np.abs(zd)))

    def bwd(g):
        sig = np.empty_like(zd)
        pos = zd >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-zd[pos]))
        ez = np.exp(zd[~pos])
        sig[~pos] = ez / (1.0 + ez)
        return (g * (sig - t),)

    return _make(out_data, (z,), bwd, "bce_with_logits")


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Per-example softmax cross entropy; logits (B, C), labels int (B,)."""
    lab = np.asarray(labels, dtype=np.int64)
    zd = logits.data
    m = zd.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(zd - m).sum(axis=-1))
    picked = zd[np.arange(zd.shape[0]), lab]
    out_data = lse - picked

    def bwd(g):
        p = np.exp(zd - m)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(zd.shape[0]), lab] -= 1.0
        return (p * g[:, None],)

    return _make(out_data, (logits,), bwd, "cross_entropy_logits")


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; gradients accumulate into leaves."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo: list = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            # leaf: accumulate into the persistent slot
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(f"non-finite gradient flowing into op {parent.op!r} from {node.op!r}")
            if parent._backward_fn is None:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg
            else:
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
