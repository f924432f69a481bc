"""Differentiable primitives over :class:`~pivot_align.diffcore.tensor.Tensor`.

Every function computes its value with numpy and, when an operand requires gradients and a tape is active on the
current thread, records a closure computing the operand gradients from the output gradient.

Binary elementwise operations only broadcast over *leading* dimensions: the smaller operand's shape must be a
suffix of the larger one's (a scalar is the empty suffix). Anything else raises :class:`ShapeError`.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from pivot_align.diffcore.tensor import ArrayLike, BackwardFn, Tensor, as_tensor, current_tape
from pivot_align.exceptions import ConfigError, ShapeError

_logger = logging.getLogger(__name__)

_GELU_C = math.sqrt(2.0 / math.pi)
_MATMUL_BACKENDS = ('numpy', 'naive')
_matmul_backend = 'numpy'


def set_matmul_backend(name: str) -> None:
    """Select the matrix-multiply kernel: ``numpy`` (default) or ``naive`` (pure-python reference loops)."""
    global _matmul_backend
    if name not in _MATMUL_BACKENDS:
        raise ConfigError(f'Unknown matmul backend {name!r}, expected one of {_MATMUL_BACKENDS}')
    _matmul_backend = name


def matmul_backend() -> str:
    """Return the active matrix-multiply kernel name."""
    return _matmul_backend


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        tape = current_tape()
        if tape is not None:
            out.requires_grad = True
            tape.record(out, inputs, backward_fn, op)
    return out


def _operands(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return as_tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _check_leading_broadcast(op: str, a: Tuple[int, ...], b: Tuple[int, ...]) -> None:
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if a == b or len(short) == 0 or long_[len(long_) - len(short) :] == short:
        return
    raise ShapeError(op, a, b)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))).reshape(shape) if lead > 0 else grad.reshape(shape)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise sum."""
    a, b = _operands(a, b)
    _check_leading_broadcast('add', a.shape, b.shape)

    def _backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), _backward, 'add')


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise difference."""
    a, b = _operands(a, b)
    _check_leading_broadcast('sub', a.shape, b.shape)

    def _backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), _backward, 'sub')


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise product."""
    a, b = _operands(a, b)
    _check_leading_broadcast('mul', a.shape, b.shape)

    def _backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), _backward, 'mul')


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise quotient."""
    a, b = _operands(a, b)
    _check_leading_broadcast('div', a.shape, b.shape)
    out = a.data / b.data

    def _backward(g: np.ndarray):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), _backward, 'div')


def neg(a: Tensor) -> Tensor:
    """Elementwise negation."""
    return _result(-a.data, (a,), lambda g: (-g,), 'neg')


def _naive_matmul_2d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    rows, inner, cols = a.shape[0], a.shape[1], b.shape[1]
    a_rows, b_cols = a.tolist(), b.T.tolist()
    out = [[math.fsum(a_rows[i][k] * b_cols[j][k] for k in range(inner)) for j in range(cols)] for i in range(rows)]
    return np.array(out, dtype=np.result_type(a, b)).reshape(rows, cols)


def _naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim == 2 and b.ndim == 2:
        return _naive_matmul_2d(a, b)
    if b.ndim == 2:
        return np.stack([_naive_matmul(x, b) for x in a])
    if a.ndim == 2:
        return np.stack([_naive_matmul(a, y) for y in b])
    return np.stack([_naive_matmul(x, y) for x, y in zip(a, b)])


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _matmul_backend == 'naive':
        return _naive_matmul(a, b)
    return np.matmul(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; either operand may carry extra leading batch axes the other lacks."""
    a, b = _operands(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul', a.shape, b.shape)
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError('matmul', a.shape, b.shape)

    def _backward(g: np.ndarray):
        if b.ndim == 2 and a.ndim > 2:
            grad_a = _mm(g, b.data.T)
            grad_b = _mm(a.data.reshape(-1, a.shape[-1]).T, g.reshape(-1, g.shape[-1]))
        elif a.ndim == 2 and b.ndim > 2:
            grad_a = _mm(g, np.swapaxes(b.data, -1, -2)).reshape(-1, a.shape[0], a.shape[1]).sum(axis=0)
            grad_b = _mm(a.data.T, g)
        else:
            grad_a = _mm(g, np.swapaxes(b.data, -1, -2))
            grad_b = _mm(np.swapaxes(a.data, -1, -2), g)
        return grad_a, grad_b

    return _result(_mm(a.data, b.data), (a, b), _backward, 'matmul')


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two vectors."""
    a, b = _operands(a, b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError('dot', a.shape, b.shape)
    return _result(np.dot(a.data, b.data), (a, b), lambda g: (g * b.data, g * a.data), 'dot')


def sum(a: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Sum over ``axis`` (all axes when None)."""

    def _backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), _backward, 'sum')


def mean(a: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    """Mean over ``axis`` (all axes when None)."""
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Reshape without copying semantics."""
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes (reverse them when ``axes`` is None)."""
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), 'transpose')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concat', *[t.shape for t in tensors])
    splits = np.cumsum(sizes)[:-1]

    def _backward(g: np.ndarray):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tensors, _backward, 'concat')


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table: output shape is ``indices.shape + (table.shape[1],)``."""
    indices = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError('take_rows', table.shape, indices.shape)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeError('take_rows', table.shape, (int(indices.min()), int(indices.max())))

    def _backward(g: np.ndarray):
        grad = np.zeros_like(table.data)
        np.add.at(grad, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _result(table.data[indices], (table,), _backward, 'take_rows')


def select(a: Tensor, index: int, axis: int) -> Tensor:
    """Select a single position along ``axis``, dropping that axis."""
    axis = axis % a.ndim

    def _backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        slicer = [slice(None)] * a.ndim
        slicer[axis] = index
        grad[tuple(slicer)] = g
        return (grad,)

    return _result(np.take(a.data, index, axis=axis), (a,), _backward, 'select')


def pick(a: Tensor, indices: np.ndarray) -> Tensor:
    """Per-row pick along the last axis of a 2-D tensor: ``out[i] = a[i, indices[i]]``."""
    indices = np.asarray(indices, dtype=np.int64)
    if a.ndim != 2 or indices.shape != (a.shape[0],):
        raise ShapeError('pick', a.shape, indices.shape)
    rows = np.arange(a.shape[0])

    def _backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        grad[rows, indices] = g
        return (grad,)

    return _result(a.data[rows, indices], (a,), _backward, 'pick')


def exp(a: Tensor) -> Tensor:
    """Elementwise exponential."""
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), 'exp')


def log(a: Tensor) -> Tensor:
    """Elementwise natural logarithm."""
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise ``a ** p``; the derivative is taken as zero where ``a == 0``."""
    out = np.power(a.data, p)

    def _backward(g: np.ndarray):
        with np.errstate(divide='ignore', invalid='ignore'):
            local = np.where(a.data != 0, p * np.power(a.data, p - 1), 0.0)
        return (g * local,)

    return _result(out, (a,), _backward, 'power')


def relu(a: Tensor) -> Tensor:
    """Elementwise ``max(0, a)``."""
    positive = a.data > 0
    return _result(np.where(positive, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * positive,), 'relu')


def tanh(a: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), 'tanh')


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _backward(g: np.ndarray):
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * local,)

    return _result(out, (a,), _backward, 'gelu')


def _expand_mask(mask: Optional[np.ndarray], shape: Tuple[int, ...]) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    try:
        return np.broadcast_to(mask, shape)
    except ValueError:
        raise ShapeError('mask', shape, mask.shape)


def softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get probability zero.

    Rows with no unmasked entry come out all zero.
    """
    keep = _expand_mask(mask, a.shape)
    x = a.data if keep is None else np.where(keep, a.data, -np.inf)
    peak = np.max(x, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.exp(x - peak)
    total = np.sum(e, axis=axis, keepdims=True)
    out = np.divide(e, total, out=np.zeros_like(e), where=total > 0).astype(a.dtype)

    def _backward(g: np.ndarray):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (a,), _backward, 'softmax')


def log_softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Log-softmax along ``axis``, normalising over unmasked entries only.

    Masked entries are reported as 0.0 (not -inf) and receive no gradient, so callers can multiply the result by
    weights that are zero there without producing NaNs.
    """
    keep = _expand_mask(mask, a.shape)
    x = a.data if keep is None else np.where(keep, a.data, -np.inf)
    peak = np.max(x, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    shifted = x - peak
    e = np.exp(shifted)
    total = np.sum(e, axis=axis, keepdims=True)
    with np.errstate(divide='ignore', invalid='ignore'):
        lse = np.log(total)
        out = shifted - lse
    probs = np.divide(e, total, out=np.zeros_like(e), where=total > 0)
    if keep is not None:
        out = np.where(keep, out, 0.0)
    out = out.astype(a.dtype)

    def _backward(g: np.ndarray):
        if keep is not None:
            g = np.where(keep, g, 0.0)
        grad = g - probs * np.sum(g, axis=axis, keepdims=True)
        if keep is not None:
            grad = np.where(keep, grad, 0.0)
        return (grad.astype(a.dtype),)

    return _result(out, (a,), _backward, 'log_softmax')


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale by ``gamma`` and shift by ``beta``."""
    if gamma.shape != (x.shape[-1],) or beta.shape != gamma.shape:
        raise ShapeError('layer_norm', x.shape, gamma.shape, beta.shape)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    out = xhat * gamma.data + beta.data

    def _backward(g: np.ndarray):
        lead = tuple(range(g.ndim - 1))
        grad_gamma = np.sum(g * xhat, axis=lead)
        grad_beta = np.sum(g, axis=lead)
        dxhat = g * gamma.data
        grad_x = (inv / n) * (
            n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta

    return _result(out, (x, gamma, beta), _backward, 'layer_norm')


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit Euclidean norm."""
    norm = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    out = a.data / norm

    def _backward(g: np.ndarray):
        return ((g - out * np.sum(g * out, axis=axis, keepdims=True)) / norm,)

    return _result(out, (a,), _backward, 'l2_normalize')


def masked_mean(a: Tensor, mask: np.ndarray, axis: int = 1) -> Tensor:
    """Mean over ``axis`` counting only positions where ``mask`` (shaped like ``a`` without its last axis) is True."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:-1]:
        raise ShapeError('masked_mean', a.shape, mask.shape)
    weights = mask.astype(a.dtype)[..., None]
    counts = np.maximum(weights.sum(axis=axis, keepdims=True), 1.0)
    out = (a.data * weights).sum(axis=axis, keepdims=True) / counts

    def _backward(g: np.ndarray):
        return (np.expand_dims(g, axis) * weights / counts,)

    return _result(np.squeeze(out, axis=axis), (a,), _backward, 'masked_mean')


def detach(a: Tensor) -> Tensor:
    """Return ``a``'s value as a constant."""
    return a.detach()


__all__: List[str] = [
    'add',
    'concat',
    'detach',
    'div',
    'dot',
    'exp',
    'gelu',
    'l2_normalize',
    'layer_norm',
    'log',
    'log_softmax',
    'masked_mean',
    'matmul',
    'matmul_backend',
    'mean',
    'mul',
    'neg',
    'pick',
    'power',
    'relu',
    'reshape',
    'select',
    'set_matmul_backend',
    'softmax',
    'sub',
    'sum',
    'take_rows',
    'tanh',
    'transpose',
]
