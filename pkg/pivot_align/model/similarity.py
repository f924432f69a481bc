import numpy as np

from pivot_align.diffcore import Tensor, ops
from pivot_align.exceptions import NumericError, ShapeError

NORM_TOLERANCE = 1e-4


def _check_unit(name: str, v: np.ndarray) -> None:
    norms = np.linalg.norm(np.atleast_2d(v), axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
        raise NumericError(f'{name} is not unit-norm (norm {float(norms.max()):.6f})')


def similarity(a, b) -> float:
    """Cosine of two unit vectors rescaled to [0, 1]: (a·b + 1) / 2.

    Raises:
        NumericError: either vector's norm is more than 1e-4 away from 1.
        ShapeError: the vectors differ in length.
    """
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError('similarity', a.shape, b.shape)
    _check_unit('first vector', a)
    _check_unit('second vector', b)
    # sum of products in a fixed order, so similarity(a, b) == similarity(b, a) bit for bit
    return float((np.sum(a * b) + 1.0) / 2.0)


def similarity_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise [0, 1] similarities between rows of two unit-norm embedding matrices."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError('similarity_matrix', a.shape, b.shape)
    return (a @ ops.transpose(b)) * 0.5 + 0.5


def similarity_scores(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """:func:`similarity_matrix` for plain arrays, as used when ranking during evaluation."""
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError('similarity_scores', a.shape, b.shape)
    return (a @ b.T + 1.0) / 2.0
