"""
Dense tensor with reverse-mode automatic differentiation
Operations record themselves on the active GradTape; backward replays the tape in reverse
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import GradientError, NumericError

_state = threading.local()


def _tape_stack() -> List['GradTape']:
    if not hasattr(_state, 'tapes'):
        _state.tapes = []
    return _state.tapes


def get_default_dtype() -> np.dtype:
    return getattr(_state, 'dtype', np.dtype(np.float32))


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype new tensors are created with (float64 for gradient checks)."""
    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


_debug_numerics = False


def set_debug_numerics(enabled: bool) -> None:
    """Check every op output for NaN/Inf when enabled."""
    global _debug_numerics
    _debug_numerics = bool(enabled)


def debug_numerics_enabled() -> bool:
    return _debug_numerics


class Tensor:
    """
    n-dimensional float array with optional gradient tracking.
    Leaves created with requires_grad=True own a same-shape ``grad`` accumulator.
    """

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating) or array.dtype != get_default_dtype():
            array = array.astype(get_default_dtype())
        self.data: np.ndarray = np.ascontiguousarray(array)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if self.requires_grad else None
        self._is_leaf = True
        self._tape: Optional[GradTape] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, tape: Optional['GradTape']) -> 'Tensor':
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = tape is not None
        out.grad = None
        out._is_leaf = tape is None
        out._tape = tape
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._is_leaf

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad and self._is_leaf:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic delegates to nn.functional so every op goes through the tape
    def __add__(self, other):
        from nn import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from nn import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from nn import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from nn import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from nn import functional as F
        return F.mul(self, -1.0)

    def __pow__(self, exponent: float):
        from nn import functional as F
        return F.power(self, exponent)

    def sum(self) -> 'Tensor':
        from nn import functional as F
        return F.sum_all(self)

    def mean(self) -> 'Tensor':
        from nn import functional as F
        return F.mean_all(self)

    def reshape(self, *shape) -> 'Tensor':
        from nn import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


@dataclass
class TapeEntry:
    """One executed operation: its inputs, output and backward rule."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GradTape:
    """
    Ordered record of executed operations for one training step.
    Use as a context manager; ops executed inside are recorded when any input requires grad.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self.consumed = False

    def __enter__(self) -> 'GradTape':
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn) -> None:
        if self.consumed:
            raise GradientError("Cannot record on a tape that has already run backward")
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise GradientError("backward() already ran on this tape")
        if loss.data.size != 1:
            raise GradientError(f"backward() requires a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise GradientError("Loss was not produced on this tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            upstream = grads.pop(id(entry.output), None)
            if upstream is None:
                continue
            input_grads = entry.backward_fn(upstream)
            for tensor, grad in zip(entry.inputs, input_grads):
                if grad is None or not isinstance(tensor, Tensor) or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise GradientError(
                        f"{entry.op}: gradient shape {grad.shape} does not match input shape {tensor.shape}"
                    )
                if tensor._is_leaf:
                    tensor.grad += grad
                else:
                    key = id(tensor)
                    if key in grads:
                        grads[key] = grads[key] + grad
                    else:
                        grads[key] = grad

        self.consumed = True
        self.entries.clear()


def active_tape() -> Optional[GradTape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording; ops run inside produce untracked tensors."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def make_result(op: str, data: np.ndarray, inputs: Sequence[Any], backward_fn) -> Tensor:
    """
    Wrap an op result, recording it on the active tape when any input is tracked.
    backward_fn maps the upstream gradient to one gradient (or None) per input.
    """
    if _debug_numerics and not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values", op=op)
    tape = active_tape()
    tracked = tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor._from_op(data, tape if tracked else None)
    if tracked:
        tape.record(op, [t for t in inputs], out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss to every tracked leaf."""
    if loss.data.size != 1:
        raise GradientError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise GradientError("Loss is not attached to a gradient tape")
    loss._tape.backward(loss)


def as_tensor(value: Any, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)
