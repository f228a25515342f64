"""Reverse-mode automatic differentiation over numpy arrays.

The engine is deliberately small: a ``Tensor`` wraps a contiguous float
array, a ``Tape`` records every operation that touches a tape-bound
tensor, and ``Tape.backward`` replays the records once in reverse to
accumulate gradients.  Tensors created without a tape act as constants;
operations on constants are plain numpy calls with no recording
overhead, which keeps evaluation passes cheap.

Training runs in float32.  Gradient checking may construct float64
tensors to keep finite-difference noise below the comparison tolerance;
every operation preserves the dtype of its inputs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array plus an optional tape binding.

    ``data`` is always C-contiguous (row-major).  A tensor constructed
    with a tape is a leaf whose gradient can be queried after backward;
    a tensor without a tape is a constant and receives zero gradient.
    """

    __slots__ = ("data", "tape")

    def __init__(self, data, tape: "Tape | None" = None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        bound = "tape" if self.tape is not None else "const"
        return f"Tensor(shape={self.shape}, {bound})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


class Gradients:
    """Gradient buffers from one backward pass, keyed by tensor identity."""

    def __init__(self, grads: dict[int, np.ndarray], holders: list[Tensor]):
        self._grads = grads
        # keep the tensors alive so id() keys cannot be recycled
        self._holders = holders

    def wrt(self, t: Tensor) -> np.ndarray:
        """Gradient of the loss with respect to ``t`` (zeros if t never
        participated in the recorded computation)."""
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros(t.shape, dtype=t.dtype)
        return g


class Tape:
    """Records operations in execution order for one backward pass."""

    __slots__ = ("_records",)

    def __init__(self):
        # each record: (output tensor, input tensors, backward callable)
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> Gradients:
        """Accumulate d(loss)/d(tensor) for every tensor on this tape.

        The records are traversed exactly once, in reverse recording
        order (execution order is already topological).
        """
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
        holders: list[Tensor] = [loss]
        for out, inputs, backward_fn in reversed(self._records):
            g_out = grads.get(id(out))
            if g_out is None:
                continue  # this operation did not feed the loss
            for t, g_in in zip(inputs, backward_fn(g_out)):
                if g_in is None or t.tape is None:
                    continue  # constants take no gradient
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g_in
                else:
                    grads[key] = g_in
                    holders.append(t)
        return Gradients(grads, holders)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=like.dtype if like is not None else np.float32)
    return Tensor(arr)


def _joint_tape(*tensors: Tensor) -> "Tape | None":
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands were recorded on different tapes")
    return tape


def _emit(tape, out_data, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(out_data, tape)
    if tape is not None:
        tape._records.append((out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    tape = _joint_tape(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(tape, out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    tape = _joint_tape(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(tape, out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    tape = _joint_tape(a, b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(tape, out, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    tape = _joint_tape(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _emit(tape, out, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return (-g,)

    return _emit(a.tape, -a.data, (a,), backward)


def power(a, p) -> Tensor:
    """Elementwise ``a ** p`` for a fixed python exponent."""
    a = _as_tensor(a)
    p = float(p)
    out = a.data**p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return _emit(a.tape, out, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _emit(a.tape, out, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _emit(a.tape, out, (a,), backward)


def absolute(a) -> Tensor:
    """Elementwise absolute value; subgradient 0 at 0."""
    a = _as_tensor(a)
    out = np.abs(a.data)

    def backward(g):
        return (g * np.sign(a.data),)

    return _emit(a.tape, out, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return _emit(a.tape, out, (a,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner),)

    return _emit(a.tape, out, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-d or higher operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    tape = _joint_tape(a, b)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from err

    def backward(g):
        ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return _emit(tape, out, (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = np.reshape(a.data, shape)

    def backward(g):
        return (np.reshape(g, a.shape),)

    return _emit(a.tape, out, (a,), backward)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _emit(a.tape, out, (a,), backward)


def select(a, axis: int, index: int) -> Tensor:
    """Pick one index along ``axis``, dropping that axis."""
    a = _as_tensor(a)
    key = [slice(None)] * a.ndim
    key[axis] = index
    key = tuple(key)
    out = a.data[key]

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return _emit(a.tape, out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    tape = _joint_tape(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=axis))

    return _emit(tape, out, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# reductions and normalization


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(a.tape, out, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype),)

    return _emit(a.tape, out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; rejects NaN input."""
    a = _as_tensor(a)
    if np.isnan(a.data).any():
        raise ValueError("softmax input contains NaN")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _emit(a.tape, out, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance,
    then apply an elementwise affine transform."""
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    x = _as_tensor(x)
    gain = _as_tensor(gain, like=x)
    bias = _as_tensor(bias, like=x)
    tape = _joint_tape(x, gain, bias)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        ghat = g * gain.data
        m1 = np.mean(ghat, axis=-1, keepdims=True)
        m2 = np.mean(ghat * xhat, axis=-1, keepdims=True)
        gx = inv * (ghat - m1 - xhat * m2)
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _emit(tape, out, (x, gain, bias), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``.

    ``logits`` has shape (batch, classes); ``labels`` is an integer array
    of shape (batch,).
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-d, got {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label id outside [0, n_classes)")
    shifted = logits.data - np.max(logits.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / np.sum(e, axis=1, keepdims=True)
    picked = shifted[np.arange(n), labels] - np.log(np.sum(e, axis=1))
    out = np.asarray(-np.mean(picked), dtype=logits.dtype)

    def backward(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return _emit(logits.tape, out, (logits,), backward)


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-3) -> float:
    """Compare the taped gradient of ``f`` at ``x`` against central finite
    differences.

    Returns the maximum over elements of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    ``f`` must map a single tensor to a scalar tensor; any other inputs
    should be closed over as constants.
    """
    x = _as_tensor(x)
    tape = Tape()
    leaf = Tensor(x.data.copy(), tape)
    analytic = tape.backward(f(leaf)).wrt(leaf).astype(np.float64)

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        f_plus = f(Tensor(bumped.reshape(x.shape))).item()
        bumped[i] = flat[i] - step
        f_minus = f(Tensor(bumped.reshape(x.shape))).item()
        numeric[i] = (f_plus - f_minus) / (2.0 * step)
    numeric = numeric.reshape(x.shape)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
