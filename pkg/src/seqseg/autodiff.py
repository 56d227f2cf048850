"""Minimal reverse-mode differentiation on float64 arrays.

Operations executed inside an active ``Tape`` context are recorded as nodes;
``backward`` replays the tape once in reverse and accumulates gradients into
every tensor that requires them. The operator set is exactly what the
segmentation layers need -- no broadcasting beyond the shapes documented on
each op, float64 only, CPU only.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class EmptyReductionError(ValueError):
    """Reduction over zero rows."""


class Tensor:
    """Dense float64 array with an optional gradient slot.

    ``data`` is treated as immutable once the tensor participates in a
    recorded graph; only ``grad`` (and optimizer-driven parameter updates
    between steps) may change.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None  # set when an op on a tape produced this
        self.tape: Optional["Tape"] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the entries."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Small amount of sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return smul(self, -1.0)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Node:
    """One recorded operation: op kind, operand tensors, saved backward."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn

    @property
    def input_ids(self):
        return tuple(t.node_id for t in self.inputs)


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of operations for one forward pass.

    Nodes appear in execution order, so every node's inputs precede it and a
    single reverse sweep visits each node exactly once.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
            backward_fn: Callable) -> Tensor:
    """Wrap ``out_data``; record a node if a tape is active and grads flow."""
    out = Tensor(out_data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if _ACTIVE_TAPES and out.requires_grad:
        tape = _ACTIVE_TAPES[-1]
        out.node_id = len(tape.nodes)
        out.tape = tape
        tape.nodes.append(Node(op, tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` for every tensor on the tape.

    Repeated calls without clearing gradients accumulate further
    contributions (each call propagates exactly one unit seed).
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if loss.tape is not tape or loss.node_id is None:
        raise ValueError("loss is not an operation result on this tape")

    # Per-call upstream accumulation, flushed into .grad at the end so that
    # stale gradients from earlier calls are never re-propagated.
    flowing: dict[int, np.ndarray] = {loss.node_id: np.ones((), dtype=np.float64)}
    leaf_grads: dict[int, tuple[Tensor, np.ndarray]] = {}

    for node in reversed(tape.nodes):
        up = flowing.pop(node.output.node_id, None)
        if up is None:
            continue
        key = id(node.output)
        if node.output.requires_grad:
            tens, acc = leaf_grads.get(key, (node.output, None))
            leaf_grads[key] = (tens, up if acc is None else acc + up)
        need = tuple(t.requires_grad for t in node.inputs)
        grads = node.backward_fn(up, need)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if t.node_id is not None and t.tape is tape:
                prev = flowing.get(t.node_id)
                flowing[t.node_id] = g if prev is None else prev + g
            else:
                key = id(t)
                tens, acc = leaf_grads.get(key, (t, None))
                leaf_grads[key] = (tens, g if acc is None else acc + g)

    for tens, g in leaf_grads.values():
        tens.grad = g.copy() if tens.grad is None else tens.grad + g


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; gradients dA = dOut @ B^T, dB = A^T @ dOut."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data

    def back(up, need):
        return (up @ bd.T if need[0] else None,
                ad.T @ up if need[1] else None)

    return _record("matmul", (a, b), ad @ bd, back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def back(up, need):
        return (up if need[0] else None, up if need[1] else None)

    return _record("add", (a, b), a.data + b.data, back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")

    def back(up, need):
        return (up if need[0] else None, -up if need[1] else None)

    return _record("sub", (a, b), a.data - b.data, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data

    def back(up, need):
        return (up * bd if need[0] else None, up * ad if need[1] else None)

    return _record("mul", (a, b), ad * bd, back)


def smul(x: Tensor, c: float) -> Tensor:
    """Multiply by a python float constant."""

    def back(up, need):
        return (up * c,)

    return _record("smul", (x,), x.data * c, back)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x[..., C] + v[C] (bias broadcast over leading axes)."""
    c = v.data.shape[-1]
    if v.data.ndim != 1 or x.data.shape[-1] != c:
        raise ShapeError(f"add_rowvec shape mismatch: {x.data.shape} + {v.data.shape}")

    def back(up, need):
        gv = up.reshape(-1, c).sum(axis=0) if need[1] else None
        return (up if need[0] else None, gv)

    return _record("add_rowvec", (x, v), x.data + v.data, back)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """x[R, C] scaled row-wise by s[R, 1] (or s[R])."""
    sd = s.data.reshape(-1, 1)
    if x.data.ndim != 2 or sd.shape[0] != x.data.shape[0]:
        raise ShapeError(f"scale_rows shape mismatch: {x.data.shape} * {s.data.shape}")
    xd = x.data
    s_shape = s.data.shape

    def back(up, need):
        gx = up * sd if need[0] else None
        gs = (up * xd).sum(axis=1).reshape(s_shape) if need[1] else None
        return (gx, gs)

    return _record("scale_rows", (x, s), xd * sd, back)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); subgradient at 0 is 0."""
    mask = x.data > 0.0

    def back(up, need):
        return (up * mask,)

    return _record("relu", (x,), np.where(mask, x.data, 0.0), back)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the final axis; backward splits the gradient."""
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeError(
            f"concat_last leading-shape mismatch: {a.data.shape} vs {b.data.shape}")
    c1 = a.data.shape[-1]

    def back(up, need):
        return (up[..., :c1] if need[0] else None,
                up[..., c1:] if need[1] else None)

    return _record("concat_last", (a, b), np.concatenate([a.data, b.data], axis=-1), back)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """x[..., start:stop]; backward zero-pads back to the input shape."""
    shape = x.data.shape

    def back(up, need):
        g = np.zeros(shape, dtype=np.float64)
        g[..., start:stop] = up
        return (g,)

    return _record("slice_last", (x,), np.ascontiguousarray(x.data[..., start:stop]), back)


def vstack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors with equal column counts along axis 0."""
    cols = {t.data.shape[-1] for t in tensors}
    if len(cols) != 1 or any(t.data.ndim != 2 for t in tensors):
        raise ShapeError(f"vstack needs 2-D operands with equal widths, got "
                         f"{[t.data.shape for t in tensors]}")
    counts = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + counts)

    def back(up, need):
        return tuple(up[offsets[i]:offsets[i + 1]] if need[i] else None
                     for i in range(len(counts)))

    return _record("vstack", tuple(tensors), np.concatenate([t.data for t in tensors], axis=0), back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def back(up, need):
        return (up.reshape(old),)

    return _record("reshape", (x,), x.data.reshape(shape), back)


def max_reduce_rows(x: Tensor) -> Tensor:
    """Per-column max of a K x C tensor; gradient routes to the argmax row.

    Ties break toward the lowest row index.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"max_reduce_rows expects 2-D input, got {x.data.shape}")
    k, c = x.data.shape
    if k == 0:
        raise EmptyReductionError("max_reduce_rows over zero rows")
    arg = np.argmax(x.data, axis=0)  # first occurrence == lowest index
    cols = np.arange(c)

    def back(up, need):
        g = np.zeros((k, c), dtype=np.float64)
        g[arg, cols] = up
        return (g,)

    return _record("max_reduce_rows", (x,), x.data[arg, cols], back)


def segment_max_rows(x: Tensor, counts: np.ndarray) -> Tensor:
    """Per-column max over consecutive row segments of x[M, C].

    ``counts`` gives the segment lengths (sum == M). Empty segments produce a
    zero row and receive no gradient; ties break toward the lowest row.
    """
    counts = np.asarray(counts, dtype=np.int64)
    m = counts.shape[0]
    c = x.data.shape[1]
    if int(counts.sum()) != x.data.shape[0]:
        raise ShapeError(f"segment lengths sum to {int(counts.sum())}, "
                         f"but input has {x.data.shape[0]} rows")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    out = np.zeros((m, c), dtype=np.float64)
    arg_rows = np.full((m, c), -1, dtype=np.int64)
    for j in range(m):
        n = counts[j]
        if n == 0:
            continue
        seg = x.data[starts[j]:starts[j] + n]
        out[j] = seg.max(axis=0)
        arg_rows[j] = starts[j] + np.argmax(seg, axis=0)
    cols = np.broadcast_to(np.arange(c), (m, c))
    valid = arg_rows >= 0
    vr, vc = arg_rows[valid], cols[valid]
    in_shape = x.data.shape

    def back(up, need):
        g = np.zeros(in_shape, dtype=np.float64)
        np.add.at(g, (vr, vc), up[valid])
        return (g,)

    return _record("segment_max_rows", (x,), out, back)


def softmax_last(x: Tensor) -> Tensor:
    """Stable softmax over the final axis; analytic Jacobian in backward."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_last requires finite input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(up, need):
        dot = (up * y).sum(axis=-1, keepdims=True)
        return (y * (up - dot),)

    return _record("softmax_last", (x,), y, back)


def gather_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of x[N, C] by an int index array; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    n, c = x.data.shape

    def back(up, need):
        g = np.zeros((n, c), dtype=np.float64)
        np.add.at(g, idx, up)
        return (g,)

    return _record("gather_rows", (x,), x.data[idx], back)


def weighted_gather_sum(x: Tensor, indices: np.ndarray, weights: np.ndarray) -> Tensor:
    """out[i] = sum_j weights[i, j] * x[indices[i, j]].

    ``indices`` and ``weights`` are constant (n, k) arrays; only x is
    differentiated.
    """
    idx = np.asarray(indices, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if idx.shape != w.shape or idx.ndim != 2:
        raise ShapeError(f"indices {idx.shape} and weights {w.shape} must be equal 2-D")
    n, k = idx.shape
    m, c = x.data.shape
    out = (x.data[idx] * w[:, :, None]).sum(axis=1)

    def back(up, need):
        g = np.zeros((m, c), dtype=np.float64)
        np.add.at(g, idx.reshape(-1), (w[:, :, None] * up[:, None, :]).reshape(-1, c))
        return (g,)

    return _record("weighted_gather_sum", (x,), out, back)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    shape = x.data.shape

    def back(up, need):
        return (np.full(shape, float(up), dtype=np.float64),)

    return _record("sum_all", (x,), np.asarray(x.data.sum()), back)
