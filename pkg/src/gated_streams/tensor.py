"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the two-stream transformer needs are provided. Shapes
must match exactly for elementwise ops; broadcasting happens only through
the leading batch dimensions of :func:`matmul` or the explicit
:func:`broadcast_to` op.

Recording happens inside a :class:`Tape` scope::

    with Tape() as tape:
        loss = cross_entropy(forward(...), target)
    tape.backward(loss)
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class BoundsError(IndexError):
    """Slice bounds fall outside an axis extent."""


class ContractError(RuntimeError):
    """Autodiff misuse (non-scalar loss, loss not on the tape, ...)."""


class Tensor:
    """N-d array of float64 with an optional gradient buffer.

    ``tape_id`` is the index of the producing node on the active tape, or
    ``None`` for leaves and untracked values.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def _raise_item(shape):
    raise ContractError(f"item() needs a single-element tensor, got shape {shape}")


class Tape:
    """Append-only record of differentiable operations."""

    _stack: list[Tape] = []

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> Tape:
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        out.tape_id = len(self.nodes)
        out._tape = self
        out.requires_grad = True
        self.nodes.append((out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss.tape_id is None:
            raise ContractError("loss was not recorded on this tape")
        pending: dict[int, np.ndarray] = {loss.tape_id: np.ones_like(loss.data)}
        for idx in range(loss.tape_id, -1, -1):
            g = pending.pop(idx, None)
            if g is None:
                continue
            _, inputs, vjp = self.nodes[idx]
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._tape is self and inp.tape_id is not None:
                    prev = pending.get(inp.tape_id)
                    pending[inp.tape_id] = gi if prev is None else prev + gi
                elif inp.grad is None:
                    inp.grad = np.array(gi, dtype=DTYPE, copy=True)
                else:
                    inp.grad += gi


def _active() -> Tape | None:
    return Tape._stack[-1] if Tape._stack else None


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, vjp)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands need >= 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast"
        ) from None
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        return _matmul_flat(a, b)

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), vjp)


def _matmul_flat(a: Tensor, b: Tensor) -> Tensor:
    # [..., m, k] @ [k, n] as one 2-D BLAS call
    ad, bd = a.data, b.data
    a2 = ad.reshape(-1, ad.shape[-1])

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return _make((a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[1],)), (a, b), vjp)


# --- elementwise ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def one_minus(a: Tensor) -> Tensor:
    return _make(1.0 - a.data, (a,), lambda g: (-g,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    x2 = xd * xd
    inner = _GELU_C * xd * (1.0 + 0.044715 * x2)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th**2) * dinner),)

    return _make(out, (x,), vjp)


# --- shape ----------------------------------------------------------------


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums back."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    src = x.shape
    return _make(out, (x,), lambda g: (_unbroadcast(g, src),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise DimensionError("concat: no tensors given")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1 :] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1 :]:
            raise DimensionError(
                f"concat: shapes {[tt.shape for tt in tensors]} do not agree off axis {axis}"
            )
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def vjp(g):
        idx = [slice(None)] * nd
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp)


def slice_axis(x: Tensor, axis: int, lo: int, hi: int) -> Tensor:
    """``x[..., lo:hi, ...]`` along ``axis``."""
    ax = axis % x.ndim
    n = x.shape[ax]
    if not (0 <= lo <= hi <= n):
        raise BoundsError(f"slice: [{lo}, {hi}) out of range for axis {axis} of extent {n}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(lo, hi)
    idx = tuple(idx)
    src = x.shape

    def vjp(g):
        full = np.zeros(src, dtype=DTYPE)
        full[idx] = g
        return (full,)

    return _make(x.data[idx], (x,), vjp)


# --- reductions -----------------------------------------------------------


def mean(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    ax = axis % x.ndim
    n = x.shape[ax]
    if n == 0:
        raise DimensionError(f"mean: axis {axis} of {x.shape} is empty")
    src = x.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / n, src),)

    return _make(x.data.mean(axis=ax, keepdims=keepdims), (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    src = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, src),))


# --- normalisation --------------------------------------------------------


def softmax_last(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax_last: empty last dimension in {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    k = x.shape[-1]
    if gamma.shape != (k,) or beta.shape != (k,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({k},) for input {x.shape}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(xd.ndim - 1))

    def vjp(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (
                gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + beta.data, (x, gamma, beta), vjp)


# --- loss -----------------------------------------------------------------


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over the batch.

    ``logits`` is ``[C]`` with an int target or ``[B, C]`` with ``B`` targets.
    """
    single = logits.ndim == 1
    ld = logits.data[None, :] if single else logits.data
    if ld.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be [C] or [B, C], got {logits.shape}")
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    b, c = ld.shape
    if tgt.shape != (b,):
        raise DimensionError(f"cross_entropy: {tgt.shape[0]} targets for {b} rows")
    if np.any(tgt < 0) or np.any(tgt >= c):
        raise IndexError(f"cross_entropy: targets {tgt.tolist()} outside [0, {c})")
    z = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(b)
    loss = -logp[rows, tgt].mean()

    def vjp(g):
        grad = np.exp(logp)
        grad[rows, tgt] -= 1.0
        grad *= g / b
        return (grad[0] if single else grad,)

    return _make(np.array(loss), (logits,), vjp)


# --- composites -----------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""
    y = matmul(x, weight)
    if bias is not None:
        y = add(y, broadcast_to(bias, y.shape))
    return y


def numerical_grad(f: Callable[[], float], param: Tensor, index: tuple[int, ...], h: float = 1e-5) -> float:
    """Central difference of ``f`` w.r.t. one element of ``param``."""
    old = param.data[index]
    param.data[index] = old + h
    fp = f()
    param.data[index] = old - h
    fm = f()
    param.data[index] = old
    return (fp - fm) / (2 * h)


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
