"""Tape-based reverse-mode autodiff over dense numpy arrays.

Primitives are sized for a small encoder-decoder transformer: elementwise
arithmetic, matmul with broadcasting batch dims, softmax/log-softmax,
layer norm, embedding lookup, gathers, reductions, and a composite
scaled-dot-product attention. Tensors hold float32 data by default;
float64 is available for gradient checks. Ops never mutate operand
arrays, and recorded traces replay bit-for-bit, so a step is
reproducible after optimizer updates swap parameter data out.

Single-threaded by design: one active tape, no locking.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError

FLOAT_DTYPES = (np.float32, np.float64)
MASK_PENALTY = -1e9


class Tensor:
    """A dense array plus grad bookkeeping. Data is treated as immutable."""

    __slots__ = ("data", "grad", "requires_grad", "creator")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.creator: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"


class Node:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "output", "forward_fn", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 forward_fn: Callable[[], np.ndarray],
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.forward_fn = forward_fn
        self.backward_fn = backward_fn


class Tape:
    """Ordered trace of primitive applications; list order is topological."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self) -> bool:
        """Re-run every recorded forward; True iff all outputs match bit-for-bit."""
        for node in self.nodes:
            again = node.forward_fn()
            if not np.array_equal(again, node.output.data, equal_nan=True):
                return False
        return True


_TAPE_STACK: list[Tape] = []


@contextlib.contextmanager
def tape():
    t = Tape()
    _TAPE_STACK.append(t)
    try:
        yield t
    finally:
        _TAPE_STACK.pop()


def is_recording() -> bool:
    return bool(_TAPE_STACK)


def astensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _register(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
              forward_fn: Callable[[], np.ndarray],
              backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor(out_data)
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, inputs, out, forward_fn, backward_fn)
        out.creator = node
        _TAPE_STACK[-1].nodes.append(node)
    return out


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into .grad for every reached requires_grad leaf.

    Walks the recording tape in reverse creation order. Leaves listed in
    `params` but never reached by the loss get an explicit zero gradient.
    Must run inside the tape that recorded the loss.
    """
    if loss.data.shape != ():
        raise InvalidArgumentError("backward expects a scalar loss")
    if loss.creator is None:
        raise InvalidArgumentError("loss was not produced by recorded primitives")
    if not _TAPE_STACK:
        raise InvalidArgumentError("backward must run inside the recording tape")
    current = _TAPE_STACK[-1]

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(current.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for tensor, g in zip(node.inputs, in_grads):
            if g is None or not tensor.requires_grad:
                continue
            seen = grads.get(id(tensor))
            grads[id(tensor)] = g if seen is None else seen + g
        if node.output.requires_grad and node.output.creator is node:
            node.output.grad = g_out

    leaves = {id(t): t for n in current.nodes for t in n.inputs
              if t.requires_grad and t.creator is None}
    for t in leaves.values():
        g = grads.get(id(t))
        t.grad = np.zeros_like(t.data) if g is None else g.astype(t.dtype, copy=False)
    if params is not None:
        for t in params:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def add(a, b) -> Tensor:
    a = astensor(a)
    b = astensor(b, like=a)
    data = a.data + b.data

    def fwd():
        return a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _register("add", data, (a, b), fwd, bwd)


def sub(a, b) -> Tensor:
    a = astensor(a)
    b = astensor(b, like=a)
    data = a.data - b.data

    def fwd():
        return a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _register("sub", data, (a, b), fwd, bwd)


def mul(a, b) -> Tensor:
    a = astensor(a)
    b = astensor(b, like=a)
    data = a.data * b.data

    def fwd():
        return a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _register("mul", data, (a, b), fwd, bwd)


def neg(a: Tensor) -> Tensor:
    def fwd():
        return -a.data

    def bwd(g):
        return (-g,)

    return _register("neg", -a.data, (a,), fwd, bwd)


def scale(a: Tensor, s: float) -> Tensor:
    """a * s for a python scalar s, folded as a constant."""
    c = a.dtype.type(s)

    def fwd():
        return a.data * c

    def bwd(g):
        return (g * c,)

    return _register("scale", a.data * c, (a,), fwd, bwd)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        data = np.log(a.data)

    def fwd():
        with np.errstate(divide="ignore"):
            return np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _register("log", data, (a,), fwd, bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def fwd():
        return np.exp(a.data)

    def bwd(g):
        return (g * data,)

    return _register("exp", data, (a,), fwd, bwd)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def fwd():
        return np.maximum(a.data, 0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _register("relu", data, (a,), fwd, bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def fwd():
        return a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _register("reshape", data, (a,), fwd, bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))

    def fwd():
        return np.ascontiguousarray(a.data.transpose(axes))

    def bwd(g):
        return (g.transpose(inv),)

    return _register("transpose", data, (a,), fwd, bwd)


def mT(a: Tensor) -> Tensor:
    """Transpose the last two axes."""
    if a.data.ndim < 2:
        raise InvalidArgumentError("mT needs at least 2 dims")
    axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    return transpose(a, axes)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def fwd():
        return a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)

    return _register("sum", data, (a,), fwd, bwd)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise InvalidArgumentError("matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise InvalidArgumentError(
            f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def fwd():
        return a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _register("matmul", data, (a, b), fwd, bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: table (V, d), integer ids of any shape -> (*ids.shape, d)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("embedding id out of range")

    def fwd():
        return table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _register("embedding", table.data[ids], (table,), fwd, bwd)


def index_axis(a: Tensor, i: int, axis: int = -1) -> Tensor:
    """Select index i along one axis, dropping that axis."""
    data = np.take(a.data, i, axis=axis)

    def fwd():
        return np.take(a.data, i, axis=axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[axis] = i
        ga[tuple(sl)] = g
        return (ga,)

    return _register("index_axis", data, (a,), fwd, bwd)


def gather_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[...] = a[..., idx[...]] with idx shaped like a.shape[:-1]."""
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise InvalidArgumentError(
            f"gather_last index shape {idx.shape} does not match {a.shape[:-1]}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[-1]):
        raise IndexError("gather_last index out of range")
    grid = tuple(np.indices(idx.shape)) + (idx,)

    def fwd():
        return a.data[grid]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, grid, g)
        return (ga,)

    return _register("gather_last", a.data[grid], (a,), fwd, bwd)


# ---------------------------------------------------------------------------
# normalizations and losses


def _check_softmax_input(x: Tensor, axis: int) -> None:
    if x.size == 0 or x.shape[axis] == 0:
        raise InvalidArgumentError("softmax input is empty")
    if not np.isfinite(x.data).all():
        raise InvalidArgumentError("softmax input has non-finite entries")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax. Internally float64 so outputs sum to 1 within ~1e-7."""
    _check_softmax_input(x, axis)

    def compute():
        x64 = x.data.astype(np.float64, copy=False)
        e = np.exp(x64 - x64.max(axis=axis, keepdims=True))
        return (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype, copy=False)

    data = compute()

    def bwd(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _register("softmax", data, (x,), compute, bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_softmax_input(x, axis)

    def compute():
        x64 = x.data.astype(np.float64, copy=False)
        shifted = x64 - x64.max(axis=axis, keepdims=True)
        ls = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        return ls.astype(x.dtype, copy=False)

    data = compute()

    def bwd(g):
        return (g - np.exp(data) * g.sum(axis=axis, keepdims=True),)

    return _register("log_softmax", data, (x,), compute, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise InvalidArgumentError("layer_norm gain/bias must have shape (d,)")

    def compute():
        mu = x.data.mean(axis=-1, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
        xhat = (x.data - mu) * inv
        return xhat * gain.data + bias.data, xhat, inv

    data, xhat, inv = compute()

    def fwd():
        return compute()[0]

    def bwd(g):
        gx_hat = g * gain.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gx_hat - m1 - xhat * m2)
        axes = tuple(range(g.ndim - 1))
        return gx.astype(x.dtype, copy=False), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _register("layer_norm", data, (x, gain, bias), fwd, bwd)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q kT / sqrt(d) + penalty) v with an additive -1e9 mask.

    q (..., T, d), k (..., S, d), v (..., S, dv); boolean mask broadcastable
    to (..., T, S) marks disallowed positions.
    """
    if q.data.ndim < 2 or k.data.ndim < 2 or v.data.ndim < 2:
        raise InvalidArgumentError("attention operands need at least 2 dims")
    if q.shape[-1] != k.shape[-1]:
        raise InvalidArgumentError(
            f"attention query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise InvalidArgumentError(
            f"attention key/value counts differ: {k.shape} vs {v.shape}")
    scores = scale(matmul(q, mT(k)), 1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, scores.shape)
        except ValueError as e:
            raise InvalidArgumentError(f"attention mask shape mismatch: {e}") from e
        penalty = Tensor((mask * MASK_PENALTY).astype(q.dtype))
        scores = add(scores, penalty)
    return matmul(softmax(scores, axis=-1), v)


def cross_entropy(logprobs: Tensor, target: int) -> Tensor:
    """Negative log-likelihood of one target id under a log-prob vector."""
    if logprobs.data.ndim != 1:
        raise InvalidArgumentError("cross_entropy expects a 1-D log-prob vector")
    target = int(target)
    if target < 0 or target >= logprobs.shape[0]:
        raise IndexError(f"cross_entropy target {target} out of range")

    def fwd():
        return np.asarray(-logprobs.data[target], dtype=logprobs.dtype)

    def bwd(g):
        gl = np.zeros_like(logprobs.data)
        gl[target] = -g
        return (gl,)

    return _register("cross_entropy", fwd(), (logprobs,), fwd, bwd)
