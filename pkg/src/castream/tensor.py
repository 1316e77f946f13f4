"""Dense tensors with reverse-mode autodiff on an explicit gradient tape.

Tensors wrap row-major numpy arrays. Operations executed while a GradTape
is active are recorded in execution order; replaying the records in reverse
propagates gradients to every ``requires_grad`` leaf. Tensors are treated as
immutable once written, a tape is single-threaded, and independent tapes may
run in parallel threads (the active-tape stack is thread-local).
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import DimensionError, MaskError, NonFiniteError

DEFAULT_DTYPE = np.float64


class _TapeState(threading.local):
    def __init__(self):
        self.stack = []


_TAPES = _TapeState()

# NaN/Inf scan after every op. On by default; training configs may disable
# it for speed via set_checked(False).
_CHECKED = [True]


def set_checked(flag: bool) -> bool:
    """Toggle the post-op finiteness scan. Returns the previous setting."""
    prev = _CHECKED[0]
    _CHECKED[0] = bool(flag)
    return prev


class checked_mode:
    """Context manager that sets checked mode for the enclosed block."""

    def __init__(self, flag: bool):
        self.flag = flag
        self.prev = None

    def __enter__(self):
        self.prev = set_checked(self.flag)
        return self

    def __exit__(self, *exc):
        set_checked(self.prev)
        return False


class Tensor:
    """A dense real array with an optional gradient slot.

    ``requires_grad`` marks trainable leaves; intermediate results are
    tracked by the active tape and never carry the flag themselves.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow(other, -1.0))
        return mul(self, _wrap(1.0 / other, self.dtype))

    def __rtruediv__(self, other):
        return mul(_wrap(other, self.dtype), pow(self, -1.0))

    def __pow__(self, exponent):
        return pow(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        if self.data.ndim != 2:
            raise DimensionError(f"T property needs a 2-d tensor, got shape {self.shape}")
        return swapaxes(self, 0, 1)


class GradTape:
    """Ordered record of primitive ops with what backward needs saved.

    Usage::

        with GradTape() as tape:
            loss = model_forward(...)
        tape.backward(loss)   # accumulates into .grad of requires_grad leaves
    """

    def __init__(self):
        self._records = []  # (out_id, inputs tuple, backward fn)
        self._tracked = set()
        self._leaves = {}

    def __enter__(self):
        _TAPES.stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.stack.pop()
        assert popped is self
        return False

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def record(self, out: Tensor, inputs, backward_fn):
        self._records.append((id(out), inputs, backward_fn))
        self._tracked.add(id(out))
        for t in inputs:
            if t.requires_grad:
                self._leaves[id(t)] = t

    def gradient(self, output: Tensor, sources) -> list:
        """Gradients of a scalar output w.r.t. the given source tensors.

        Returns numpy arrays (zeros where no path exists). Does not touch
        the ``.grad`` slots.
        """
        acc = self._run_backward(output)
        return [acc.get(id(s), np.zeros_like(s.data)) for s in sources]

    def backward(self, output: Tensor):
        """Accumulate d(output)/d(leaf) into ``.grad`` of every leaf."""
        acc = self._run_backward(output)
        for tid, leaf in self._leaves.items():
            if tid in acc:
                if leaf.grad is None:
                    leaf.grad = acc[tid]
                else:
                    leaf.grad = leaf.grad + acc[tid]

    def _run_backward(self, output: Tensor) -> dict:
        if output.data.size != 1:
            raise DimensionError(
                f"backward needs a scalar output, got shape {output.shape}"
            )
        acc = {id(output): np.ones_like(output.data)}
        for out_id, inputs, backward_fn in reversed(self._records):
            g = acc.get(out_id)
            if g is None:
                continue
            grads = backward_fn(g)
            for t, gt in zip(inputs, grads):
                if gt is None or not self._tracks(t):
                    continue
                tid = id(t)
                if tid in acc:
                    acc[tid] = acc[tid] + gt
                else:
                    acc[tid] = gt
        return acc


def _active_tape():
    return _TAPES.stack[-1] if _TAPES.stack else None


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _scan(arr: np.ndarray, opname: str):
    if _CHECKED[0] and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{opname} produced non-finite values")


def _emit(out_data: np.ndarray, inputs, backward_fn, opname: str) -> Tensor:
    _scan(out_data, opname)
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# primitive ops ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(out, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(out, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _emit(out, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def pow(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a.data**p
    ad = a.data

    def backward(g):
        return (g * p * ad ** (p - 1.0),)

    return _emit(out, (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _emit(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _emit(out, (a,), backward, "log")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable in both tails: never exponentiates a positive argument.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _emit(out, (a,), backward, "sigmoid")


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), finite for every finite input.

    Unlike log(sigmoid(x)) composed from primitives, this never produces
    -inf when the sigmoid underflows, so survival products of extremely
    confident probabilities stay differentiable.
    """
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    sig_neg = _sigmoid(-x)

    def backward(g):
        return (g * sig_neg,)

    return _emit(out, (a,), backward, "log_sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _emit(out, (a,), backward, "tanh")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _emit(out, (a,), backward, "relu")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs 2-d (or batched) operands, got {a.shape} x {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _emit(out, (a, b), backward, "matmul")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), _wrap(1.0 / n, a.dtype))


def cumsum(a: Tensor, axis: int) -> Tensor:
    out = np.cumsum(a.data, axis=axis)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _emit(out, (a,), backward, "cumsum")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    orig = a.shape

    def backward(g):
        return (g.reshape(orig),)

    return _emit(out, (a,), backward, "reshape")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = a.data.swapaxes(ax1, ax2)

    def backward(g):
        return (g.swapaxes(ax1, ax2),)

    return _emit(out, (a,), backward, "swapaxes")


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    if np.isscalar(out) or out.ndim == 0:
        out = np.asarray(out)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(out, (a,), backward, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        grads = []
        offset = 0
        for n in sizes:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + n)
            grads.append(g[tuple(sl)])
            offset += n
        return tuple(grads)

    return _emit(out, tuple(tensors), backward, "concat")


def softmax(a: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Numerically stable softmax with optional boolean visibility mask.

    Masked-out positions get weight exactly 0 and receive no gradient.
    A row with no visible position raises MaskError (never a silent NaN).
    """
    if a.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis, shape {a.shape}")
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            mask = np.broadcast_to(mask, x.shape)
        visible = mask.any(axis=axis)
        if not visible.all():
            bad = np.argwhere(~visible)[0].tolist()
            raise MaskError(f"softmax row {bad} is fully masked")
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _emit(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape[axis] == 0:
        raise DimensionError(f"log_softmax over an empty axis, shape {a.shape}")
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _emit(out, (a,), backward, "log_softmax")


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def constant(data, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))
