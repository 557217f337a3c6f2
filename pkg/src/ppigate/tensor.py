"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable computation in this package is expressed through the
primitives below. Forward evaluation is plain numpy; when a ``GradTape`` is
active, each primitive records a closure that adds its vector-Jacobian
product into per-input accumulation buffers. Replaying the records in
reverse execution order (a valid reverse topological order, since records
are appended as they run) yields gradients of a scalar output.

Tensors are immutable values and safe to share across threads; a tape is
confined to the thread that opened it.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """An operation was invoked outside its contract."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable n-dimensional array of 64-bit floats, row-major."""

    __slots__ = ("array",)

    def __init__(self, values):
        self.array = _freeze(np.array(values, dtype=np.float64))

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal: take ownership of a freshly computed array without copying.
        t = object.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        t.array = _freeze(arr)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def ndim(self) -> int:
        return self.array.ndim

    @property
    def size(self) -> int:
        return self.array.size

    def item(self) -> float:
        if self.array.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.array.reshape(-1)[0])

    def tolist(self):
        return self.array.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def zeros(shape) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=np.float64))


# --------------------------------------------------------------------------
# Tape machinery


_STACK = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STACK, "stack", None)
    if stack is None:
        stack = _STACK.stack = []
    return stack


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of primitive operations, replayable for adjoints.

    Use as a context manager around the forward computation, then call
    :meth:`gradients` with the scalar output and the leaf tensors of
    interest. Accumulated gradients for a tensor are the sum of adjoints
    over all of its uses.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self, "unbalanced GradTape nesting"

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        """Register one primitive.

        ``vjp(out_grad, bufs)`` must add the adjoint contribution for each
        input into ``bufs[i]`` (a writable array of that input's shape), and
        must skip entries where ``bufs[i]`` is None.
        """
        self._records.append((out, tuple(inputs), vjp))

    def gradients(self, output: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar ``output`` with respect to ``sources``."""
        if output.size != 1:
            raise ContractError(
                f"gradients() needs a scalar output, got shape {output.shape}"
            )
        # Forward sweep: which tensors can influence a source gradient.
        needed = {id(s) for s in sources}
        for out, inputs, _ in self._records:
            if any(id(t) in needed for t in inputs):
                needed.add(id(out))
        grads: dict[int, np.ndarray] = {
            id(output): np.ones(output.shape, dtype=np.float64)
        }
        for out, inputs, vjp in reversed(self._records):
            out_grad = grads.get(id(out))
            if out_grad is None:
                continue
            bufs = []
            for t in inputs:
                if id(t) in needed:
                    buf = grads.get(id(t))
                    if buf is None:
                        buf = grads[id(t)] = np.zeros(t.shape, dtype=np.float64)
                    bufs.append(buf)
                else:
                    bufs.append(None)
            vjp(out_grad, bufs)
        return [grads.get(id(s), np.zeros(s.shape, dtype=np.float64)) for s in sources]


def record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Record a primitive on the active tape, if any, and return its output."""
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


# --------------------------------------------------------------------------
# Shape helpers


def _is_scalar(t: Tensor) -> bool:
    return t.size == 1 and t.ndim == 0


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not _is_scalar(a) and not _is_scalar(b):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _acc(buf: np.ndarray | None, value: np.ndarray, scalar: bool) -> None:
    if buf is None:
        return
    if scalar:
        buf += value.sum()
    else:
        buf += value


# --------------------------------------------------------------------------
# Elementwise primitives (equal shapes, or scalar-tensor broadcast)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")
    out = Tensor._wrap(a.array + b.array)

    def vjp(g, bufs):
        _acc(bufs[0], g, _is_scalar(a))
        _acc(bufs[1], g, _is_scalar(b))

    return record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    out = Tensor._wrap(a.array - b.array)

    def vjp(g, bufs):
        _acc(bufs[0], g, _is_scalar(a))
        _acc(bufs[1], -g, _is_scalar(b))

    return record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")
    out = Tensor._wrap(a.array * b.array)

    def vjp(g, bufs):
        _acc(bufs[0], g * b.array, _is_scalar(a))
        _acc(bufs[1], g * a.array, _is_scalar(b))

    return record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(-a.array)

    def vjp(g, bufs):
        _acc(bufs[0], -g, False)

    return record(out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.exp(a.array))

    def vjp(g, bufs):
        _acc(bufs[0], g * out.array, False)

    return record(out, (a,), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.tanh(a.array))

    def vjp(g, bufs):
        _acc(bufs[0], g * (1.0 - out.array * out.array), False)

    return record(out, (a,), vjp)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # Stable in both tails: exp of a non-positive argument never overflows.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(_sigmoid_np(a.array))

    def vjp(g, bufs):
        _acc(bufs[0], g * out.array * (1.0 - out.array), False)

    return record(out, (a,), vjp)


def _elu_np(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, x, np.expm1(x))


def elu(a) -> Tensor:
    """ELU with alpha=1: x for x >= 0, exp(x)-1 otherwise. Slope 1 at 0."""
    a = as_tensor(a)
    out = Tensor._wrap(_elu_np(a.array))

    def vjp(g, bufs):
        # exp(x) = elu(x)+1 below zero; derivative is continuous at 0.
        _acc(bufs[0], g * np.where(a.array >= 0, 1.0, out.array + 1.0), False)

    return record(out, (a,), vjp)


def elu_plus_one(a) -> Tensor:
    """ELU(x) + 1 evaluated stably: x + 1 for x >= 0, exp(x) otherwise.

    The naive composition underflows to exactly zero for x < -37; this
    fused form keeps the result strictly positive for every finite input.
    """
    a = as_tensor(a)
    x = a.array
    out = Tensor._wrap(np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0))))

    def vjp(g, bufs):
        _acc(bufs[0], g * np.where(x >= 0, 1.0, out.array), False)

    return record(out, (a,), vjp)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.abs(a.array))

    def vjp(g, bufs):
        # Subgradient 0 at the kink.
        _acc(bufs[0], g * np.sign(a.array), False)

    return record(out, (a,), vjp)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.sqrt(a.array))

    def vjp(g, bufs):
        _acc(bufs[0], g / (2.0 * out.array), False)

    return record(out, (a,), vjp)


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient passes only where a > floor."""
    a = as_tensor(a)
    out = Tensor._wrap(np.maximum(a.array, floor))

    def vjp(g, bufs):
        _acc(bufs[0], g * (a.array > floor), False)

    return record(out, (a,), vjp)


# --------------------------------------------------------------------------
# Linear algebra and structure primitives


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D and 2-D operands with matching inner dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul: needs 1-D or 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor._wrap(a.array @ b.array)
    aa, ba = a.array, b.array

    def vjp(g, bufs):
        if bufs[0] is not None:
            if a.ndim == 2 and b.ndim == 2:
                bufs[0] += g @ ba.T
            elif a.ndim == 1 and b.ndim == 2:
                bufs[0] += ba @ g
            elif a.ndim == 2 and b.ndim == 1:
                bufs[0] += np.outer(g, ba)
            else:  # 1-D dot
                bufs[0] += g * ba
        if bufs[1] is not None:
            if a.ndim == 2 and b.ndim == 2:
                bufs[1] += aa.T @ g
            elif a.ndim == 1 and b.ndim == 2:
                bufs[1] += np.outer(aa, g)
            elif a.ndim == 2 and b.ndim == 1:
                bufs[1] += aa.T @ g
            else:
                bufs[1] += g * aa

    return record(out, (a, b), vjp)


def add_rowvec(m, v) -> Tensor:
    """Add a length-n row vector to every row of an (m, n) matrix."""
    m, v = as_tensor(m), as_tensor(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: shapes {m.shape} and {v.shape}")
    out = Tensor._wrap(m.array + v.array[None, :])

    def vjp(g, bufs):
        if bufs[0] is not None:
            bufs[0] += g
        if bufs[1] is not None:
            bufs[1] += g.sum(axis=0)

    return record(out, (m, v), vjp)


def tsum(a) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    a = as_tensor(a)
    out = Tensor._wrap(np.asarray(a.array.sum()))

    def vjp(g, bufs):
        if bufs[0] is not None:
            bufs[0] += g  # scalar broadcast

    return record(out, (a,), vjp)


def row_sums(m) -> Tensor:
    """Sum along the last axis of a 2-D tensor."""
    m = as_tensor(m)
    if m.ndim != 2:
        raise DimensionError(f"row_sums: needs 2-D, got {m.shape}")
    out = Tensor._wrap(m.array.sum(axis=1))

    def vjp(g, bufs):
        if bufs[0] is not None:
            bufs[0] += g[:, None]

    return record(out, (m,), vjp)


def gather_rows(m, indices) -> Tensor:
    """Select rows of a 2-D tensor; adjoints scatter-add back to the rows."""
    m = as_tensor(m)
    idx = np.asarray(indices, dtype=np.int64)
    if m.ndim != 2 or idx.ndim != 1:
        raise DimensionError(f"gather_rows: shapes {m.shape}, indices {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[0]):
        raise ContractError(
            f"gather_rows: index out of range for {m.shape[0]} rows"
        )
    out = Tensor._wrap(m.array[idx])

    def vjp(g, bufs):
        if bufs[0] is not None:
            np.add.at(bufs[0], idx, g)

    return record(out, (m,), vjp)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-D tensors into a matrix, one per row."""
    rows = [as_tensor(r) for r in rows]
    if not rows or any(r.ndim != 1 for r in rows):
        raise DimensionError("stack_rows: needs a non-empty list of 1-D tensors")
    out = Tensor._wrap(np.stack([r.array for r in rows]))

    def vjp(g, bufs):
        for i, buf in enumerate(bufs):
            if buf is not None:
                buf += g[i]

    return record(out, tuple(rows), vjp)


def concat_cols(a, b) -> Tensor:
    """Concatenate two 2-D tensors with equal row counts along columns."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: shapes {a.shape} and {b.shape}")
    out = Tensor._wrap(np.concatenate([a.array, b.array], axis=1))
    na = a.shape[1]

    def vjp(g, bufs):
        if bufs[0] is not None:
            bufs[0] += g[:, :na]
        if bufs[1] is not None:
            bufs[1] += g[:, na:]

    return record(out, (a, b), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(a.array.reshape(shape))

    def vjp(g, bufs):
        if bufs[0] is not None:
            bufs[0] += g.reshape(a.shape)

    return record(out, (a,), vjp)


def gather_time(stacked, batch_index: int, time_indices) -> Tensor:
    """Rows ``stacked[batch_index, t, :]`` for t in ``time_indices``.

    ``stacked`` is (B, T, H); the result is (len(time_indices), H).
    """
    stacked = as_tensor(stacked)
    idx = np.asarray(time_indices, dtype=np.int64)
    if stacked.ndim != 3:
        raise DimensionError(f"gather_time: needs 3-D, got {stacked.shape}")
    if idx.size != np.unique(idx).size:
        raise ContractError("gather_time: time indices must be unique")
    out = Tensor._wrap(stacked.array[batch_index, idx, :])

    def vjp(g, bufs):
        if bufs[0] is not None:
            bufs[0][batch_index, idx, :] += g  # unique indices: plain add

    return record(out, (stacked,), vjp)


def slice_time(stacked, t: int) -> Tensor:
    """The (B, H) slice at time step t of a (B, T, H) tensor."""
    stacked = as_tensor(stacked)
    if stacked.ndim != 3:
        raise DimensionError(f"slice_time: needs 3-D, got {stacked.shape}")
    out = Tensor._wrap(stacked.array[:, t, :])

    def vjp(g, bufs):
        if bufs[0] is not None:
            bufs[0][:, t, :] += g

    return record(out, (stacked,), vjp)


# --------------------------------------------------------------------------
# Finite-difference verification


def grad_check(f, point: Tensor, eps: float = 1e-5, skip=None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must map one tensor to a scalar tensor. The error at coordinate i
    is |analytic_i - numeric_i| / max(1, |analytic_i|); the maximum over
    non-skipped coordinates is returned. ``skip``, if given, is a boolean
    array marking coordinates to ignore (e.g. next to a kink).
    """
    if not (0.0 < eps <= 1e-2):
        raise ContractError(f"grad_check: eps must be in (0, 1e-2], got {eps}")
    point = as_tensor(point)
    with GradTape() as tape:
        out = f(point)
    if out.size != 1:
        raise ContractError(f"grad_check: f must be scalar-valued, got {out.shape}")
    analytic = tape.gradients(out, [point])[0]

    flat = point.array.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        plus[i] += eps
        minus = flat.copy()
        minus[i] -= eps
        f_plus = f(Tensor(plus.reshape(point.shape))).item()
        f_minus = f(Tensor(minus.reshape(point.shape))).item()
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)

    ana = analytic.reshape(-1)
    err = np.abs(ana - numeric) / np.maximum(1.0, np.abs(ana))
    if skip is not None:
        mask = ~np.asarray(skip, dtype=bool).reshape(-1)
        if not mask.any():
            return 0.0
        err = err[mask]
    return float(err.max()) if err.size else 0.0
