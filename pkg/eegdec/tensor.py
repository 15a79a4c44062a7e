"""
Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Operations record themselves on the active `Tape` (entered with a `with` block).
Outside a tape nothing is recorded, which is how inference and evaluation run.
"""
import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from eegdec.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
Operand = Union["Tensor", float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("eegdec_active_tape", default=None)


class Tensor:
    """
    Immutable float64 array plus an optional gradient slot.

    `data` is stored row-major and marked read-only; slicing and reshaping always
    produce new tensors. Only `grad` (and `Parameter.assign`) ever change after
    construction.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, *, copy: bool = True):
        array = np.asarray(data, dtype=np.float64)
        if copy or not array.flags.c_contiguous:
            array = np.array(array, order="C")
        if any(extent < 1 for extent in array.shape):
            raise DimensionError(f"tensor extents must be >= 1, got shape {array.shape}")
        array.flags.writeable = False
        self._data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None
        self._produced = False

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._produced

    def numpy(self) -> np.ndarray:
        return np.array(self._data)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self._data, copy=False)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self._data)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.shape:
            raise DimensionError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        self.grad = np.array(grad) if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the functions below hold the actual rules.
    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return scalar_mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self, axes: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axes, keepdims)

    def mean(self, axes: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axes, keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes)


class Parameter(Tensor):
    """Trainable leaf. The optimizer is the only writer, through `assign`."""

    def __init__(self, data: ArrayLike):
        super().__init__(data, requires_grad=True)

    def assign(self, data: np.ndarray) -> None:
        array = np.array(data, dtype=np.float64)
        if array.shape != self.shape:
            raise DimensionError(f"cannot assign shape {array.shape} to parameter of shape {self.shape}")
        array.flags.writeable = False
        self._data = array


@dataclass
class TapeEntry:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    Ordered record of differentiable operations.

    A tape is single-owner; entering it makes it the active tape for the current
    context only, so independent tapes may be driven from different threads.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._tokens: list = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, entry: TapeEntry) -> None:
        entry.output._tape = self
        self.entries.append(entry)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def backward(loss: Tensor, tape: Tape) -> None:
    """
    Propagate d(loss)/d(leaf) into the `grad` slot of every requires_grad leaf.

    Gradients accumulate across calls until they are reset with `zero_grad`.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape:
        raise ContractError("loss was not produced on the given tape")

    pending = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        grad_out = pending.pop(id(entry.output), None)
        if grad_out is None:
            continue
        grads_in = entry.backward(grad_out)
        for tensor, grad in zip(entry.inputs, grads_in):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                tensor.accumulate_grad(grad)
            elif id(tensor) in pending:
                pending[id(tensor)] = pending[id(tensor)] + grad
            else:
                pending[id(tensor)] = grad


def _record(name: str, inputs: Tuple[Tensor, ...], out: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    requires_grad = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=requires_grad, copy=False)
    # op outputs are never leaves, even when no tape saw them
    result._produced = requires_grad
    tape = _active_tape.get()
    if tape is not None and requires_grad:
        tape.record(TapeEntry(name, inputs, result, backward_fn))
    return result


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axes: Optional[Union[int, Sequence[int]]], ndim: int, shape: Tuple[int, ...]) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise DimensionError(f"axis {axis} is out of range for shape {shape}")
        normalized.append(axis % ndim)
    return tuple(sorted(set(normalized)))


# Elementwise


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _record(
        "add", (a, b), a.data + b.data,
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _record(
        "sub", (a, b), a.data - b.data,
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _record(
        "mul", (a, b), a.data * b.data,
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _record(
        "div", (a, b), a.data / b.data,
        lambda g: (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def scalar_mul(a: Tensor, scalar: float) -> Tensor:
    scalar = float(scalar)
    return _record("scalar_mul", (a,), a.data * scalar, lambda g: (g * scalar,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _record("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def abs_(a: Tensor) -> Tensor:
    # np.sign is 0 at 0: the subgradient convention for |x|
    sign = np.sign(a.data)
    return _record("abs", (a,), np.abs(a.data), lambda g: (g * sign,))


# Reductions


def sum_(a: Tensor, axes: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False) -> Tensor:
    reduced = _normalize_axes(axes, a.ndim, a.shape)
    out = a.data.sum(axis=reduced, keepdims=keepdims)

    def grad_fn(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, reduced)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), out, grad_fn)


def mean(a: Tensor, axes: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False) -> Tensor:
    reduced = _normalize_axes(axes, a.ndim, a.shape)
    count = int(np.prod([a.shape[axis] for axis in reduced])) if reduced else 1
    return scalar_mul(sum_(a, reduced, keepdims), 1.0 / count)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    (axis,) = _normalize_axes(axis, a.ndim, a.shape)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    out = weights / weights.sum(axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (a,), out, grad_fn)


# Linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents are not broadcast-compatible: {a.shape} x {b.shape}") from None

    def grad_fn(g: np.ndarray):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return _record("matmul", (a, b), np.matmul(a.data, b.data), grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(extent) for extent in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None
    return _record("reshape", (a,), out.copy(), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    if sorted(axis % a.ndim for axis in axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {a.shape}")
    inverse = tuple(np.argsort([axis % a.ndim for axis in axes]))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return _record("transpose", (a,), out, lambda g: (np.transpose(g, inverse),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad `a` along one axis."""
    (axis,) = _normalize_axes(axis, a.ndim, a.shape)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)
    length = a.shape[axis]

    def grad_fn(g: np.ndarray):
        return (np.take(g, np.arange(before, before + length), axis=axis),)

    return _record("pad", (a,), out, grad_fn)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Copy of `a[..., start:stop, ...]` along one axis."""
    (axis,) = _normalize_axes(axis, a.ndim, a.shape)
    if not 0 <= start < stop <= a.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] is out of range for axis {axis} of shape {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def grad_fn(g: np.ndarray):
        grad = np.zeros(a.shape)
        grad[index] = g
        return (grad,)

    return _record("slice", (a,), a.data[index].copy(), grad_fn)


def take_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D table; the gradient reaches only the gathered rows."""
    if table.ndim != 2:
        raise DimensionError(f"take_rows needs a 2-D table, got shape {table.shape}")
    index = np.asarray(indices, dtype=np.int64)

    def grad_fn(g: np.ndarray):
        grad = np.zeros(table.shape)
        np.add.at(grad, index, g)
        return (grad,)

    return _record("take_rows", (table,), table.data[index].copy(), grad_fn)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for tensor in tensors:
        tensor.zero_grad()


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    first = tensors[0]
    (axis,) = _normalize_axes(axis, first.ndim, first.shape)
    for tensor in tensors[1:]:
        if tensor.ndim != first.ndim or any(
            tensor.shape[i] != first.shape[i] for i in range(first.ndim) if i != axis
        ):
            raise DimensionError(f"cannot concatenate shapes {first.shape} and {tensor.shape} along axis {axis}")
    bounds = np.cumsum([0] + [tensor.shape[axis] for tensor in tensors])

    def grad_fn(g: np.ndarray):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    out = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    return _record("concat", tuple(tensors), out, grad_fn)


class no_grad:
    """Run a block with no active tape, so nothing is recorded."""

    def __enter__(self) -> None:
        self._token = _active_tape.set(None)

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tape.reset(self._token)
