import logging
import threading
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from pivot_align.exceptions import ConfigError, GradientError

_logger = logging.getLogger(__name__)

ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_PRECISIONS = {'float64': np.float64, 'float32': np.float32}
_default_dtype = np.float64
_local = threading.local()


def set_precision(precision: str) -> None:
    """Set the dtype newly created tensors default to: ``float64`` or ``float32``."""
    global _default_dtype
    if precision not in _PRECISIONS:
        raise ConfigError(f'Unknown precision {precision!r}, expected one of {sorted(_PRECISIONS)}')
    _default_dtype = _PRECISIONS[precision]


def default_dtype() -> np.dtype:
    """Return the dtype newly created tensors default to."""
    return np.dtype(_default_dtype)


def precision_name(dtype: np.dtype) -> str:
    """Return the precision config key for a numpy dtype."""
    for name, candidate in _PRECISIONS.items():
        if np.dtype(candidate) == np.dtype(dtype):
            return name
    raise ConfigError(f'Unsupported dtype {dtype}')


class Tensor:
    """A dense array, optionally tracked on the active tape for reverse-mode differentiation.

    Leaves (parameters and inputs) own a gradient buffer of the same shape as ``data`` once backward has reached
    them. Tensors produced by operations are interior nodes: their gradients live on the tape only while backward
    is running.
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_tape')

    def __init__(
        self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None, dtype: Optional[np.dtype] = None
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_default_dtype)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Optional['Tape'] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        """Dimension sizes."""
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        """Element dtype."""
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        """Whether this tensor was created directly rather than by a taped operation."""
        return self._tape is None

    def item(self) -> float:
        """Return the value of a single-element tensor as a python float."""
        if self.data.size != 1:
            raise GradientError(f'item() on tensor of shape {self.shape}')
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return the underlying array."""
        return self.data

    def detach(self) -> 'Tensor':
        """Return a tensor sharing data but cut off from the tape."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        """Reset the gradient buffer to zeros."""
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Run reverse-mode differentiation from this scalar."""
        backward(self)

    def __repr__(self) -> str:
        label = f' name={self.name!r}' if self.name else ''
        return f'Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})'

    # operators delegate to pivot_align.diffcore.ops; imported lazily to avoid the import cycle
    def __add__(self, other: ArrayLike) -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.add(self, other)

    def __radd__(self, other: ArrayLike) -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.add(other, self)

    def __sub__(self, other: ArrayLike) -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.sub(self, other)

    def __rsub__(self, other: ArrayLike) -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.sub(other, self)

    def __mul__(self, other: ArrayLike) -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.mul(self, other)

    def __rmul__(self, other: ArrayLike) -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.mul(other, self)

    def __truediv__(self, other: ArrayLike) -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.div(self, other)

    def __neg__(self) -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.neg(self)

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        from pivot_align.diffcore import ops

        return ops.matmul(self, other)


def as_tensor(value: ArrayLike, dtype: Optional[np.dtype] = None) -> Tensor:
    """Wrap arrays and python numbers as constant tensors; tensors pass through unchanged."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


class _Entry:
    __slots__ = ('out', 'inputs', 'backward_fn', 'op')

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> None:
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Records differentiable operations in execution order, for one thread.

    Use as a context manager; operations executed while a tape is active on the current thread, with at least one
    operand requiring gradients, are recorded on it. Without an active tape operations simply compute values, which
    is how evaluation runs.
    """

    def __init__(self) -> None:
        self.entries: List[_Entry] = []

    def __enter__(self) -> 'Tape':
        stack = getattr(_local, 'tapes', None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> None:
        """Append an operation; ``out`` becomes an interior node of this tape."""
        out._tape = self
        self.entries.append(_Entry(out, inputs, backward_fn, op))

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(node) backwards through every recorded operation, filling leaf gradients."""
        if loss.data.size != 1:
            raise GradientError(f'backward requires a scalar loss, got shape {loss.shape}')
        pending = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            grad_out = pending.pop(id(entry.out), None)
            if grad_out is None:
                continue
            input_grads = entry.backward_fn(grad_out)
            for tensor, grad in zip(entry.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.data.shape:
                    raise GradientError(f'{entry.op}: gradient shape {grad.shape} != operand shape {tensor.shape}')
                if tensor.is_leaf:
                    if tensor.grad is None:
                        tensor.grad = np.zeros_like(tensor.data)
                    tensor.grad += grad
                else:
                    key = id(tensor)
                    pending[key] = pending[key] + grad if key in pending else grad


def current_tape() -> Optional[Tape]:
    """Return the innermost tape active on this thread, if any."""
    stack = getattr(_local, 'tapes', None)
    return stack[-1] if stack else None


def backward(loss: Tensor) -> None:
    """Fill the gradient buffers of every leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise GradientError(f'backward requires a scalar loss, got shape {loss.shape}')
    if loss._tape is None:
        if loss.requires_grad:
            # the loss is itself a leaf
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return
        raise GradientError('backward on a tensor that was not produced by taped operations')
    loss._tape.backward(loss)
