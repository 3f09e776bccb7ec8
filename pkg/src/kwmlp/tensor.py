"""Dense tensors with tape-based reverse-mode differentiation.

Operations only record themselves when a :class:`Tape` is active *and* at
least one operand requires a gradient, so plain inference never pays for
bookkeeping::

    with Tape() as tape:
        loss = tsum(gelu(matmul(x, w)))
    tape.backward(loss)      # w.grad now holds d loss / d w

Arrays are numpy ``float32`` by default; pass ``dtype=np.float64`` when
constructing leaves to run the exact same code in double precision (used
by :func:`grad_check`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Misuse of the tape: non-scalar or detached loss, double backward."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        arr = np.asarray(arr, dtype=dtype)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ----------------------------------------------------------------------------
# tape


@dataclass
class Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_active: list["Tape"] = []


class Tape:
    """Ordered log of differentiable operations.

    Records are appended in execution order, so operands always precede the
    operations that consume them and a single reverse sweep suffices.
    """

    def __init__(self):
        self.records: list[Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def reset(self) -> None:
        self.records.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape (detached from parameters)")
        if self.consumed:
            raise TapeError("backward already ran on this tape; call reset() first")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(r.output) for r in self.records}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in produced:
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                else:
                    gi = gi.astype(inp.dtype, copy=False)
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
        # drop activations now; records reference their outputs, which reference the tape
        self.records.clear()


def current_tape() -> Tape | None:
    return _active[-1] if _active else None


def backward(loss: Tensor) -> None:
    """Backpropagate ``loss`` through the tape that recorded it."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise TapeError("loss is not connected to any tape (no requires_grad inputs?)")
    loss._tape.backward(loss)


def _emit(out: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs, dtype=out.dtype)
    if needs:
        result._tape = tape
        tape.records.append(Record(inputs, result, rule))
    return result


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Leading batch axes must match exactly unless one operand is a plain
    matrix, in which case it is shared across the batch of the other (the
    token-wise channel projections and the token-mixing ``S @ Z`` both take
    this form). A 1-D left operand is a row vector (single-clip head).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 and b.ndim == 2 and a.shape[0] == b.shape[0]:
        V, M = a.data, b.data
        return _emit(V @ M, (a, b), lambda g: (M @ g, np.outer(V, g)))
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} vs {b.shape}")
    A, B = a.data, b.data

    def rule(g):
        if A.ndim == B.ndim:
            ga = g @ np.swapaxes(B, -1, -2)
            gb = np.swapaxes(A, -1, -2) @ g
        elif B.ndim == 2:
            ga = g @ B.T
            k, n = B.shape
            gb = A.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            batch = tuple(range(B.ndim - 2))
            ga = np.tensordot(g, B, axes=(batch + (B.ndim - 1,), batch + (B.ndim - 1,)))
            gb = A.T @ g
        return ga, gb

    return _emit(A @ B, (a, b), rule)


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose: need rank >= 2, got {x.shape}")
    return _emit(np.ascontiguousarray(np.swapaxes(x.data, -1, -2)), (x,),
                 lambda g: (np.swapaxes(g, -1, -2),))


transpose2d = transpose


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.dtype.type(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def bias_add(x, b, axis: int = -1) -> Tensor:
    """Add a vector along ``axis`` (-1: per channel, -2: per token)."""
    x, b = as_tensor(x), as_tensor(b)
    if axis not in (-1, -2) or b.ndim != 1 or x.ndim < -axis or x.shape[axis] != b.shape[0]:
        raise ShapeError(f"bias_add: bias {b.shape} does not fit axis {axis} of {x.shape}")
    bb = b.data if axis == -1 else b.data[:, None]
    red_keep = -1 if axis == -1 else -2

    def rule(g):
        other = tuple(i for i in range(g.ndim) if i != g.ndim + red_keep)
        return g, g.sum(axis=other)

    return _emit(x.data + bb, (x, b), rule)


_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def _gelu_grad(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Derivative of the tanh-form GELU given ``t = tanh(k (x + c x^3))``."""
    # 0.5 (1 + t) + 0.5 x (1 - t^2) k (1 + 3 c x^2), built in place
    d = x * x
    d *= 3.0 * _GELU_C
    d += 1.0
    d *= _GELU_K
    d *= x
    s = t * t
    np.subtract(1.0, s, out=s)
    d *= s
    d += t
    d += 1.0
    d *= 0.5
    return d


def gelu(x) -> Tensor:
    """GELU in its tanh form, ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``.

    Within 5e-4 of the exact ``0.5 x (1 + erf(x / sqrt 2))`` everywhere.
    """
    x = as_tensor(x)
    X = x.data
    t = X * X
    t *= _GELU_C
    t += 1.0
    t *= X
    t *= _GELU_K
    np.tanh(t, out=t)
    out = t + 1.0
    out *= X
    out *= 0.5

    def rule(g):
        d = _gelu_grad(X, t)
        d *= g
        return (d,)

    return _emit(out, (x,), rule)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis slice with its biased variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs last dim {d}")
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + X.dtype.type(eps))
    xhat = xc * inv
    G = gamma.data

    def rule(g):
        lead = tuple(range(g.ndim - 1))
        gx = g * G
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(xhat * G + beta.data, (x, gamma, beta), rule)


# ----------------------------------------------------------------------------
# structural


def slice_last(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _emit(np.ascontiguousarray(x.data[..., start:stop]), (x,), rule)


def split_last_axis(x) -> tuple[Tensor, Tensor]:
    x = as_tensor(x)
    c = x.shape[-1]
    if c % 2:
        raise ShapeError(f"split_last_axis: last dim must be even, got {x.shape}")
    h = c // 2
    return slice_last(x, 0, h), slice_last(x, h, c)


def concat_last_axis(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last_axis: leading dims differ, {a.shape} vs {b.shape}")
    h = a.shape[-1]
    return _emit(np.concatenate([a.data, b.data], axis=-1), (a, b),
                 lambda g: (g[..., :h], g[..., h:]))


def mean_over_axis(x, axis: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    n = shape[axis]

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / g.dtype.type(n), shape).copy(),)

    return _emit(x.data.mean(axis=axis), (x,), rule)


def tsum(x) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    x = as_tensor(x)
    shape = x.shape
    return _emit(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.full(shape, g, dtype=g.dtype),))


def softmax_last_axis(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return _emit(p, (x,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),))


def log_softmax_last_axis(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _emit(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


# ----------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-4) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``f`` maps the input tensors to a scalar tensor. Every coordinate of every
    input is perturbed by ``±step``; inputs should be float64. The error per
    coordinate is ``|a - c| / max(|a|, |c|, 1e-8)``.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
    tape.backward(out)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        an = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(*inputs).data)
            flat[i] = orig - step
            fm = float(f(*inputs).data)
            flat[i] = orig
            cd = (fp - fm) / (2.0 * step)
            a = float(an[i])
            err = abs(a - cd) / max(abs(a), abs(cd), 1e-8)
            worst = max(worst, err)
    return worst
