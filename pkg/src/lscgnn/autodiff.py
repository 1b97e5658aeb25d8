"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation the encoders and losses need lives here as a
module-level function taking and returning :class:`Tensor`. Operations record
their inputs and a backward rule on the output tensor; ``backward(loss)``
replays those records in reverse topological order (the tape) and accumulates
gradients into every leaf that has ``requires_grad`` set.

All reductions that merge rows by index (``scatter_sum``, the backward of
``gather_rows``, the softmax denominators) accumulate in ascending index
order, so repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


# Gradient recording is on unless a no_grad() block is active. One training
# run owns one logical thread, so a module-level flag is sufficient.
_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording inside its block."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    Tensors produced by operations carry references to their inputs and a
    backward rule; leaf tensors carry neither. ``grad`` stays ``None`` until
    a backward pass deposits into it, and repeated backward passes without
    zeroing accumulate.
    """

    __slots__ = ("values", "requires_grad", "grad", "_inputs", "_backward_rule")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._inputs = ()
        self._backward_rule = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _record(out: Tensor, inputs, rule):
    """Attach a backward rule if recording is on and any input needs grads."""
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = tuple(inputs)
        out._backward_rule = rule
    return out


def build_tape(loss: Tensor) -> list:
    """Ordered list of recorded operations reachable from ``loss``.

    Topological: every operation's inputs appear before it. Iterative
    post-order traversal in recorded input order keeps the tape
    deterministic for a given forward graph.
    """
    tape = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            tape.append(node)
            continue
        if id(node) in seen or node._backward_rule is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp in reversed(node._inputs):
            stack.append((inp, False))
    return tape


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar. Grad buffers are accumulated, not overwritten:
    callers are expected to zero grads between steps (adam_step does this).
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = build_tape(loss)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.values)
    loss.grad = loss.grad + np.ones_like(loss.values)
    for node in reversed(tape):
        grads = node._backward_rule(node.grad)
        for inp, g in zip(node._inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.array(g, dtype=np.float64)  # own a copy
            else:
                inp.grad += g


def _sorted_add_at(out: np.ndarray, index: np.ndarray, rows: np.ndarray) -> None:
    """out[index] += rows, accumulating in ascending index order.

    Equal indices are reduced left to right after a stable sort, so the
    result is bit-reproducible regardless of input order.
    """
    if index.size == 0:
        return
    if np.all(index[:-1] <= index[1:]):
        idx_sorted, rows_sorted = index, rows
    else:
        order = np.argsort(index, kind="stable")
        idx_sorted, rows_sorted = index[order], rows[order]
    starts = np.concatenate([[0], np.nonzero(np.diff(idx_sorted))[0] + 1])
    sums = np.add.reduceat(rows_sorted, starts, axis=0)
    out[idx_sorted[starts]] += sums


# ---------------------------------------------------------------------------
# elementwise and linear-algebra operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = Tensor(a.values @ b.values)

    def rule(g):
        da = g @ b.values.T if a.requires_grad else None
        db = a.values.T @ g if b.requires_grad else None
        return da, db

    return _record(out, (a, b), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.values + b.values)
    return _record(out, (a, b), lambda g: (g, g))


def add_bias(mat: Tensor, vec: Tensor) -> Tensor:
    """Add a 1-d bias vector to every row of a 2-d matrix."""
    if mat.values.ndim != 2 or vec.values.ndim != 1 or mat.shape[1] != vec.shape[0]:
        raise ShapeError(f"add_bias shapes incompatible: {mat.shape} + {vec.shape}")
    out = Tensor(mat.values + vec.values)
    return _record(out, (mat, vec), lambda g: (g, g.sum(axis=0)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.values * c)
    return _record(out, (x,), lambda g: (g * c,))


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if slope < 0:
        raise ValueError(f"leaky_relu slope must be >= 0, got {slope}")
    factor = np.where(x.values > 0, 1.0, slope)
    out = Tensor(x.values * factor)
    return _record(out, (x,), lambda g: (g * factor,))


def elu(x: Tensor) -> Tensor:
    pos = x.values > 0
    expm1 = np.expm1(np.minimum(x.values, 0.0))
    out = Tensor(np.where(pos, x.values, expm1))
    factor = np.where(pos, 1.0, expm1 + 1.0)
    return _record(out, (x,), lambda g: (g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    # Stable in both tails: 1/(1+e^-x) for x>=0, e^x/(1+e^x) otherwise.
    v = x.values
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                 np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Tensor(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.values.shape
    out = Tensor(x.values.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(orig),))


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two matrices row by row: (N,Fa),(N,Fb) -> (N,Fa+Fb)."""
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_rows shapes incompatible: {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.values, b.values], axis=1))
    split = a.shape[1]
    return _record(out, (a, b), lambda g: (g[:, :split], g[:, split:]))


def gather_rows(x: Tensor, index) -> Tensor:
    """Select rows of a matrix by integer index (duplicates allowed)."""
    index = np.asarray(index, dtype=np.int64)
    if x.values.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix, got shape {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise IndexError(f"gather_rows index out of range for {x.shape[0]} rows")
    out = Tensor(x.values[index])

    def rule(g):
        dx = np.zeros_like(x.values)
        _sorted_add_at(dx, index, g)
        return (dx,)

    return _record(out, (x,), rule)


def scatter_sum(rows: Tensor, index, num_rows: int) -> Tensor:
    """Sum rows into ``num_rows`` buckets by destination index.

    Rows with equal destinations are accumulated in ascending index order so
    the result is bit-reproducible.
    """
    index = np.asarray(index, dtype=np.int64)
    if rows.values.ndim != 2:
        raise ShapeError(f"scatter_sum needs a matrix, got shape {rows.shape}")
    if index.shape[0] != rows.shape[0]:
        raise ShapeError(f"scatter_sum index length {index.shape[0]} != rows {rows.shape[0]}")
    if index.size and (index.min() < 0 or index.max() >= num_rows):
        raise IndexError(f"scatter_sum index out of range for {num_rows} rows")
    acc = np.zeros((num_rows, rows.shape[1]), dtype=np.float64)
    _sorted_add_at(acc, index, rows.values)
    out = Tensor(acc)
    return _record(out, (rows,), lambda g: (g[index],))


def scale_rows(mat: Tensor, coef: Tensor) -> Tensor:
    """Multiply row i of ``mat`` by scalar coef[i]."""
    if mat.values.ndim != 2 or coef.values.ndim != 1 or mat.shape[0] != coef.shape[0]:
        raise ShapeError(f"scale_rows shapes incompatible: {mat.shape} * {coef.shape}")
    out = Tensor(mat.values * coef.values[:, None])

    def rule(g):
        dm = g * coef.values[:, None] if mat.requires_grad else None
        dc = (g * mat.values).sum(axis=1) if coef.requires_grad else None
        return dm, dc

    return _record(out, (mat, coef), rule)


def rows_dot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner products of two equally shaped matrices -> vector."""
    if a.shape != b.shape or a.values.ndim != 2:
        raise ShapeError(f"rows_dot shapes incompatible: {a.shape} vs {b.shape}")
    out = Tensor((a.values * b.values).sum(axis=1))

    def rule(g):
        da = g[:, None] * b.values if a.requires_grad else None
        db = g[:, None] * a.values if b.requires_grad else None
        return da, db

    return _record(out, (a, b), rule)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.values.sum())
    return _record(out, (x,), lambda g: (np.full_like(x.values, float(g)),))


def segment_softmax(scores: Tensor, segments) -> Tensor:
    """Softmax of a score vector within each segment.

    Entry i belongs to segment ``segments[i]``; outputs within one segment
    are positive and sum to 1. Scores are max-shifted per segment before
    exponentiation for stability.
    """
    segments = np.asarray(segments, dtype=np.int64)
    v = scores.values
    if v.ndim != 1 or segments.shape != v.shape:
        raise ShapeError(f"segment_softmax needs matching vectors, got {v.shape} and {segments.shape}")
    if v.size == 0:
        raise ValueError("segment_softmax of an empty score vector")
    nseg = int(segments.max()) + 1
    if np.all(segments[:-1] <= segments[1:]):
        perm = None
        seg_sorted = segments
    else:
        perm = np.argsort(segments, kind="stable")
        seg_sorted = segments[perm]
    starts = np.concatenate([[0], np.nonzero(np.diff(seg_sorted))[0] + 1])
    occupied = seg_sorted[starts]

    def seg_sum(vec):
        acc = np.zeros(nseg)
        acc[occupied] = np.add.reduceat(vec if perm is None else vec[perm], starts)
        return acc

    seg_max = np.full(nseg, -np.inf)
    seg_max[occupied] = np.maximum.reduceat(v if perm is None else v[perm], starts)
    e = np.exp(v - seg_max[segments])
    denom = seg_sum(e)
    alpha = e / denom[segments]
    out = Tensor(alpha)

    def rule(g):
        # Per segment: d_s = alpha * (g - sum_seg(g * alpha))
        weighted = seg_sum(g * alpha)
        return (alpha * (g - weighted[segments]),)

    return _record(out, (scores,), rule)


# ---------------------------------------------------------------------------
# losses


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy from raw logits, computed stably.

    Per element: softplus(logit) - target * logit, where
    softplus(x) = max(x, 0) + log1p(exp(-|x|)). Targets must be exactly 0/1.
    """
    if logits.shape != targets.shape:
        raise ShapeError(f"bce_with_logits shapes differ: {logits.shape} vs {targets.shape}")
    t = targets.values
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("bce_with_logits targets must be binary 0/1")
    x = logits.values
    softplus = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    n = x.size
    out = Tensor((softplus - t * x).sum() / n)

    def rule(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (float(g) * (s - t) / n, None)

    return _record(out, (logits, targets), rule)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of (N,C) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.values
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ShapeError(f"softmax_cross_entropy needs (N,C) logits and (N,) labels, "
                         f"got {x.shape} and {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= x.shape[1]):
        raise IndexError("label index out of range")
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    n = x.shape[0]
    rows = np.arange(n)
    out = Tensor((lse - shifted[rows, labels]).sum() / n)

    def rule(g):
        softmax = np.exp(shifted)
        softmax /= softmax.sum(axis=1, keepdims=True)
        softmax[rows, labels] -= 1.0
        return (float(g) * softmax / n,)

    return _record(out, (logits,), rule)


def mse_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean of elementwise squared differences; gradient flows to both sides."""
    if a.shape != b.shape:
        raise ShapeError(f"mse_mean shapes differ: {a.shape} vs {b.shape}")
    diff = a.values - b.values
    n = diff.size
    out = Tensor((diff * diff).sum() / n)

    def rule(g):
        d = (2.0 * float(g) / n) * diff
        da = d if a.requires_grad else None
        db = -d if b.requires_grad else None
        return da, db

    return _record(out, (a, b), rule)
