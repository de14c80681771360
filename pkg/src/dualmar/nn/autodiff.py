"""Reverse-mode automatic differentiation over small dense arrays.

The model graphs in this package are fixed and small, so the engine favors
exactness and checkability over generality: every primitive has a hand-written
backward rule, arrays are rank 2 or below, and all randomness (dropout) comes
from an explicit generator.  float64 is the default dtype; float32 is accepted
and kept (constants are coerced to the operand dtype rather than promoted).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeMismatch

Array = np.ndarray


def _as_array(value, dtype) -> Array:
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim > 2:
        raise ShapeMismatch(f"rank {arr.ndim} array not supported")
    return arr


class Tensor:
    """A node in the computation graph: value, gradient slot, backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64,
                 _parents: tuple = (), _backward: Callable[[Array], None] | None = None):
        self.data = _as_array(data, dtype if not isinstance(data, np.ndarray) else data.dtype)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Backpropagate from a scalar output through the whole graph."""
        if self.data.size != 1:
            raise ShapeMismatch("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # Operator sugar; the named functions below do the work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def constant(value, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False)


def _coerce(other, like: Tensor) -> Tensor:
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=like.dtype), requires_grad=False)


def _needs_graph(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    out = grad
    while out.ndim > len(shape):
        out = out.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and out.shape[axis] != 1:
            out = out.sum(axis=axis, keepdims=True)
    return out.reshape(shape)


def _binary(a: Tensor, b, forward, da, db) -> Tensor:
    a_t = a if isinstance(a, Tensor) else None
    if a_t is None:
        raise TypeError("first operand must be a Tensor")
    b_t = _coerce(b, a_t)
    data = forward(a_t.data, b_t.data)
    out = Tensor(data, _parents=(a_t, b_t))

    def backward(grad: Array) -> None:
        if a_t.requires_grad or a_t._parents:
            a_t._accumulate(_unbroadcast(da(grad, a_t.data, b_t.data, data), a_t.data.shape))
        if b_t.requires_grad or b_t._parents:
            b_t._accumulate(_unbroadcast(db(grad, a_t.data, b_t.data, data), b_t.data.shape))

    out._backward = backward if _needs_graph(a_t, b_t) else None
    return out


def add(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y, z: g,
                   lambda g, x, y, z: g)


def sub(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y, z: g,
                   lambda g, x, y, z: -g)


def mul(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y, z: g * y,
                   lambda g, x, y, z: g * x)


def div(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y, z: g / y,
                   lambda g, x, y, z: -g * x / (y * y))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch("matmul expects rank-2 operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    out = Tensor(data, _parents=(a, b))

    def backward(grad: Array) -> None:
        if a.requires_grad or a._parents:
            a._accumulate(grad @ b.data.T)
        if b.requires_grad or b._parents:
            b._accumulate(a.data.T @ grad)

    out._backward = backward if _needs_graph(a, b) else None
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T, _parents=(a,))

    def backward(grad: Array) -> None:
        a._accumulate(grad.T)

    out._backward = backward if _needs_graph(a) else None
    return out


def _unary(a: Tensor, forward, dfn) -> Tensor:
    data = forward(a.data)
    out = Tensor(data, _parents=(a,))

    def backward(grad: Array) -> None:
        a._accumulate(grad * dfn(a.data, data))

    out._backward = backward if _needs_graph(a) else None
    return out


def tanh(a: Tensor) -> Tensor:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def relu(a: Tensor) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(x.dtype))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    return _unary(a, lambda x: np.where(x > 0, x, slope * x),
                  lambda x, y: np.where(x > 0, 1.0, slope).astype(x.dtype))


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logistic(a: Tensor) -> Tensor:
    return _unary(a, _sigmoid, lambda x, y: y * (1.0 - y))


def exp(a: Tensor) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y)


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along axis 1; rows sum to one."""
    if a.data.ndim != 2:
        raise ShapeMismatch("row_softmax expects a rank-2 array")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=1, keepdims=True)
    out = Tensor(w, _parents=(a,))

    def backward(grad: Array) -> None:
        inner = (grad * w).sum(axis=1, keepdims=True)
        a._accumulate(w * (grad - inner))

    out._backward = backward if _needs_graph(a) else None
    return out


def masked_row_softmax(a: Tensor, mask: Array) -> Tensor:
    """Row softmax restricted to True mask entries; masked-out weights are zero.

    Rows with an empty mask produce an all-zero row.
    """
    if a.data.shape != mask.shape:
        raise ShapeMismatch("mask shape must match scores")
    mask = mask.astype(bool)
    any_row = mask.any(axis=1, keepdims=True)
    masked = np.where(mask, a.data, -np.inf)
    rowmax = np.where(any_row, masked.max(axis=1, keepdims=True), 0.0)
    e = np.where(mask, np.exp(np.where(mask, masked - rowmax, 0.0)), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    w = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    out = Tensor(w, _parents=(a,))

    def backward(grad: Array) -> None:
        inner = (grad * w).sum(axis=1, keepdims=True)
        ga = w * (grad - inner)
        ga[~mask] = 0.0
        a._accumulate(ga)

    out._backward = backward if _needs_graph(a) else None
    return out


def masked_neighbor_weighted_sum(scores: Tensor, mask: Array, values: Tensor) -> Tensor:
    """Per-row attention over masked neighbors: softmax(scores | mask) @ values."""
    return matmul(masked_row_softmax(scores, mask), values)


def dropout(a: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: scales kept entries by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ShapeMismatch(f"dropout rate {rate} outside [0, 1)")
    if not train or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=a.dtype)
    data = a.data * keep * scale
    out = Tensor(data, _parents=(a,))

    def backward(grad: Array) -> None:
        a._accumulate(grad * keep * scale)

    out._backward = backward if _needs_graph(a) else None
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, _parents=tuple(tensors))
    widths = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def backward(grad: Array) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                sl = (slice(None), slice(lo, hi)) if axis == 1 else (slice(lo, hi), slice(None))
                t._accumulate(grad[sl])

    out._backward = backward if _needs_graph(*tensors) else None
    return out


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows by index; backward scatter-adds into the source rows."""
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]
    out = Tensor(data, _parents=(a,))

    def backward(grad: Array) -> None:
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, grad)
        a._accumulate(ga)

    out._backward = backward if _needs_graph(a) else None
    return out


def segment_sum(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id into one output row per segment."""
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape[0] != a.data.shape[0]:
        raise ShapeMismatch("one segment id per row required")
    data = np.zeros((num_segments, a.data.shape[1]), dtype=a.dtype)
    np.add.at(data, seg, a.data)
    out = Tensor(data, _parents=(a,))

    def backward(grad: Array) -> None:
        a._accumulate(grad[seg])

    out._backward = backward if _needs_graph(a) else None
    return out


def segment_softmax(scores: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of a column of scores within each segment.

    `scores` is (n, 1); the result is (n, 1) with each segment's entries
    summing to one.  The per-segment max is treated as a constant shift.
    """
    if scores.data.ndim != 2 or scores.data.shape[1] != 1:
        raise ShapeMismatch("segment_softmax expects an (n, 1) score column")
    seg = np.asarray(segments, dtype=np.int64)
    seg_max = np.full((num_segments, 1), -np.inf, dtype=scores.dtype)
    np.maximum.at(seg_max, seg, scores.data)
    shifted = sub(scores, constant(seg_max[seg], dtype=scores.dtype))
    e = exp(shifted)
    denom = segment_sum(e, seg, num_segments)
    return div(e, gather_rows(denom, seg))


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.dtype)
    out = Tensor(data, _parents=(a,))

    def backward(grad: Array) -> None:
        a._accumulate(np.full_like(a.data, float(grad)))

    out._backward = backward if _needs_graph(a) else None
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return mul(sum_all(a), 1.0 / n)


def binary_cross_entropy(pred: Tensor, target) -> Tensor:
    """Elementwise BCE on probabilities, clamped away from {0, 1}."""
    t = _coerce(target, pred).data
    eps = np.finfo(pred.dtype).tiny ** 0.5
    p = np.clip(pred.data, eps, 1.0 - eps)
    data = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    out = Tensor(data, _parents=(pred,))

    def backward(grad: Array) -> None:
        pred._accumulate(grad * (p - t) / (p * (1.0 - p)))

    out._backward = backward if _needs_graph(pred) else None
    return out


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Elementwise BCE of logistic(logits) against target, fused for stability.

    Uses max(z, 0) - z t + log(1 + exp(-|z|)), finite for any |z| <= 50 and
    far beyond.
    """
    t = _coerce(target, logits).data
    z = logits.data
    data = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(data, _parents=(logits,))

    def backward(grad: Array) -> None:
        logits._accumulate(grad * (_sigmoid(z) - t))

    out._backward = backward if _needs_graph(logits) else None
    return out


def sigmoid_array(x: Array) -> Array:
    """Plain-array logistic for code outside the graph."""
    return _sigmoid(np.asarray(x, dtype=np.float64))
