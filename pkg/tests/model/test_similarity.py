import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pivot_align.diffcore import Tensor
from pivot_align.exceptions import NumericError, ShapeError
from pivot_align.model import similarity, similarity_matrix, similarity_scores

unit = arrays(np.float64, 5, elements=st.floats(-1.0, 1.0)).filter(lambda v: np.linalg.norm(v) > 1e-3)


def _normalise(v):
    return v / np.linalg.norm(v)


@given(unit, unit)
def test_similarity_properties(a, b):
    a, b = _normalise(a), _normalise(b)
    s = similarity(a, b)
    assert 0.0 - 1e-12 <= s <= 1.0 + 1e-12
    assert s == similarity(b, a)
    assert similarity(a, a) == pytest.approx(1.0)
    assert similarity(a, -a) == pytest.approx(0.0, abs=1e-12)


def test_similarity_accepts_tensors():
    a = Tensor(np.array([1.0, 0.0]))
    assert similarity(a, np.array([0.0, 1.0])) == 0.5


def test_similarity_errors():
    with pytest.raises(NumericError, match='first vector is not unit-norm'):
        similarity(np.array([2.0, 0.0]), np.array([1.0, 0.0]))
    with pytest.raises(NumericError, match='second vector'):
        similarity(np.array([1.0, 0.0]), np.array([0.5, 0.0]))
    with pytest.raises(ShapeError):
        similarity(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0]))


def test_matrix_forms_agree():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((5, 3))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    scores = similarity_scores(a, b)
    assert scores.shape == (4, 5)
    assert np.allclose(similarity_matrix(Tensor(a), Tensor(b)).data, scores)
    assert scores[1, 2] == pytest.approx(similarity(a[1], b[2]))
    with pytest.raises(ShapeError, match='similarity_scores'):
        similarity_scores(a, b[:, :2])
