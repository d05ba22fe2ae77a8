"""Reverse-mode automatic differentiation over float32 numpy arrays.

A Tensor wraps a C-contiguous float32 ndarray. While a Tape is active (used
as a context manager), every op whose inputs require gradients records a node
holding the op's inputs, output and a backward closure. backward(loss, tape)
walks the recorded nodes exactly once in reverse execution order (execution
order is topological by construction, and cycles cannot be recorded) and
accumulates gradients into the .grad of every leaf that requires them.

Reductions accumulate in float64 and cast the result back to float32.
Tensors are treated as immutable once created; optimizers may rewrite
parameter .data between tapes but never while a tape referencing them is
still to be walked.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "Tensor", "Tape", "backward", "add", "sub", "mul", "neg", "matmul",
    "relu", "leaky_relu", "elu", "log", "sqrt", "square", "absolute",
    "sum", "mean", "transpose", "reshape", "pad1d",
]

# Extra finiteness assertions on every op output and gradient. Costs a pass
# over the data per op; meant for debugging, not the hot path.
DEBUG_CHECKS = bool(os.environ.get("SSCODEC_DEBUG_CHECKS"))


class Tensor:
    """Float32 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar; scalars are wrapped as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("divide by a python scalar, not a Tensor")
        return mul(self, 1.0 / float(scalar))


class _Node:
    __slots__ = ("out", "inputs", "backward_fn", "name")

    def __init__(self, out, inputs, backward_fn, name):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name


_TAPES: list = []


class Tape:
    """Ordered record of differentiable op applications."""

    def __init__(self):
        self._nodes = []
        self._produced = set()

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self

    def backward(self, loss):
        backward(loss, self)

    def __len__(self):
        return len(self._nodes)


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _check(arr):
    if DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite values in op result")
    return arr


def record(out: Tensor, inputs, backward_fn, name: str = ""):
    """Attach `out` to the active tape if any input requires gradients.

    backward_fn(grad_out) must return per-input gradients aligned with
    `inputs` (None for inputs that do not need one). Ops call this on every
    forward; recording only happens under an active tape.
    """
    _check(out.data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._nodes.append(_Node(out, tuple(inputs), backward_fn, name))
        tape._produced.add(id(out))
    return out


def backward(loss: Tensor, tape: Tape):
    """Accumulate d(loss)/d(leaf) into leaf.grad for the tape's graph."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    keep = {id(loss): loss}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node.out), None)
        keep.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None:
                continue
            _check(gi)
            if id(t) in tape._produced:
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
                keep[id(t)] = t
            elif t.requires_grad:
                t.grad = gi if t.grad is None else t.grad + gi


def _coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float32))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(g.astype(np.float32, copy=False))


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    out = Tensor(a.data + b.data)
    na, nb = a.requires_grad, b.requires_grad
    if not (na or nb):
        return _checked(out)

    def bwd(g):
        return (_unbroadcast(g, a.shape) if na else None,
                _unbroadcast(g, b.shape) if nb else None)

    return record(out, (a, b), bwd, "add")


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    out = Tensor(a.data - b.data)
    na, nb = a.requires_grad, b.requires_grad
    if not (na or nb):
        return _checked(out)

    def bwd(g):
        return (_unbroadcast(g, a.shape) if na else None,
                _unbroadcast(-g, b.shape) if nb else None)

    return record(out, (a, b), bwd, "sub")


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    out = Tensor(a.data * b.data)
    na, nb = a.requires_grad, b.requires_grad
    if not (na or nb):
        return _checked(out)
    ad, bd = a.data, b.data

    def bwd(g):
        return (_unbroadcast(g * bd, a.shape) if na else None,
                _unbroadcast(g * ad, b.shape) if nb else None)

    return record(out, (a, b), bwd, "mul")


def neg(a):
    a = _coerce(a)
    out = Tensor(-a.data)
    if not a.requires_grad:
        return _checked(out)
    return record(out, (a,), lambda g: (-g,), "neg")


def matmul(a: Tensor, b: Tensor):
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    na, nb = a.requires_grad, b.requires_grad
    if not (na or nb):
        return _checked(out)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ bd.T if na else None
        gb = ad.T @ g if nb else None
        return (ga, gb)

    return record(out, (a, b), bwd, "matmul")


def _checked(out):
    _check(out.data)
    return out


# ---------------------------------------------------------------------------
# activations and pointwise functions


def relu(a: Tensor):
    a = _coerce(a)
    out = Tensor(np.maximum(a.data, 0.0))
    if not a.requires_grad:
        return _checked(out)
    mask = a.data > 0

    def bwd(g):
        return (np.where(mask, g, 0.0).astype(np.float32),)

    return record(out, (a,), bwd, "relu")


def leaky_relu(a: Tensor, slope: float = 0.2):
    a = _coerce(a)
    out = Tensor(np.where(a.data > 0, a.data, np.float32(slope) * a.data))
    if not a.requires_grad:
        return _checked(out)
    mask = a.data > 0

    def bwd(g):
        return (np.where(mask, g, np.float32(slope) * g).astype(np.float32),)

    return record(out, (a,), bwd, "leaky_relu")


def elu(a: Tensor, alpha: float = 1.0):
    a = _coerce(a)
    al = np.float32(alpha)
    neg_part = al * np.expm1(a.data, where=a.data <= 0, out=np.zeros_like(a.data))
    out_data = np.where(a.data > 0, a.data, neg_part)
    out = Tensor(out_data)
    if not a.requires_grad:
        return _checked(out)
    # d/dx elu = 1 for x > 0, alpha * exp(x) = elu(x) + alpha otherwise
    pos = a.data > 0
    slope = np.where(pos, np.float32(1.0), out_data + al).astype(np.float32)

    def bwd(g):
        return (g * slope,)

    return record(out, (a,), bwd, "elu")


def log(a: Tensor):
    a = _coerce(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(a.data))
    if not a.requires_grad:
        return _checked(out)
    ad = a.data

    def bwd(g):
        return ((g / ad).astype(np.float32),)

    return record(out, (a,), bwd, "log")


def sqrt(a: Tensor):
    a = _coerce(a)
    root = np.sqrt(a.data)
    out = Tensor(root)
    if not a.requires_grad:
        return _checked(out)

    def bwd(g):
        # subgradient 0 at exactly 0 keeps zero inputs from producing inf
        gi = np.zeros_like(root)
        np.divide(g, 2.0 * root, out=gi, where=root > 0)
        return (gi,)

    return record(out, (a,), bwd, "sqrt")


def square(a: Tensor):
    a = _coerce(a)
    out = Tensor(a.data * a.data)
    if not a.requires_grad:
        return _checked(out)
    ad = a.data

    def bwd(g):
        return ((2.0 * g * ad).astype(np.float32),)

    return record(out, (a,), bwd, "square")


def absolute(a: Tensor):
    a = _coerce(a)
    out = Tensor(np.abs(a.data))
    if not a.requires_grad:
        return _checked(out)
    sign = np.sign(a.data)

    def bwd(g):
        return ((g * sign).astype(np.float32),)

    return record(out, (a,), bwd, "abs")


# ---------------------------------------------------------------------------
# reductions


def sum(a: Tensor, axis=None):
    a = _coerce(a)
    out_data = np.asarray(a.data.sum(axis=axis, dtype=np.float64), dtype=np.float32)
    out = Tensor(out_data)
    if not a.requires_grad:
        return _checked(out)
    shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(np.float32),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).astype(np.float32),)

    return record(out, (a,), bwd, "sum")


def mean(a: Tensor, axis=None):
    a = _coerce(a)
    out_data = np.asarray(a.data.mean(axis=axis, dtype=np.float64), dtype=np.float32)
    out = Tensor(out_data)
    if not a.requires_grad:
        return _checked(out)
    shape = a.shape
    count = a.data.size if axis is None else shape[axis]
    inv = np.float32(1.0 / count)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g * inv, shape).astype(np.float32),)
        return (np.broadcast_to(np.expand_dims(g * inv, axis), shape).astype(np.float32),)

    return record(out, (a,), bwd, "mean")


# ---------------------------------------------------------------------------
# shape ops


def transpose(a: Tensor):
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    out = Tensor(np.ascontiguousarray(a.data.T))
    if not a.requires_grad:
        return _checked(out)

    def bwd(g):
        return (np.ascontiguousarray(g.T),)

    return record(out, (a,), bwd, "transpose")


def reshape(a: Tensor, shape):
    a = _coerce(a)
    out = Tensor(a.data.reshape(shape))
    if not a.requires_grad:
        return _checked(out)
    orig = a.shape

    def bwd(g):
        return (np.ascontiguousarray(g.reshape(orig)),)

    return record(out, (a,), bwd, "reshape")


def pad1d(a: Tensor, left: int, right: int):
    """Zero-pad the last axis."""
    a = _coerce(a)
    if left < 0 or right < 0:
        raise ValueError("padding must be non-negative")
    width = [(0, 0)] * (a.data.ndim - 1) + [(left, right)]
    out = Tensor(np.pad(a.data, width))
    if not a.requires_grad:
        return _checked(out)
    t = a.shape[-1]

    def bwd(g):
        return (np.ascontiguousarray(g[..., left:left + t]),)

    return record(out, (a,), bwd, "pad1d")
