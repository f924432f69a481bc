"""Training objectives: the transitive cross-lingual loss, two-view visual loss, cross-modal loss and token cloze.

Every loss is a sum over the batch (not a mean) and returns a scalar :class:`Tensor`, recorded on the active tape
when its inputs require gradients.
"""
import logging
from typing import NamedTuple, Optional

import numpy as np

from pivot_align.diffcore import Tensor, as_tensor, ops
from pivot_align.exceptions import ConfigError, NumericError, ShapeError
from pivot_align.model.similarity import similarity_matrix
from pivot_align.tokenizer import MASK_ID, SPECIALS

_logger = logging.getLogger(__name__)

NEGATIVE_TOLERANCE = 1e-9


def _tau(tau: float) -> float:
    if tau <= 0:
        raise ConfigError(f'Temperature must be positive, got {tau}')
    return tau


def margin_rescale(x, m: float = 0.4):
    """f(x) = max(0, x - m) / (1 - m), elementwise; accepts arrays or tensors and returns the same kind."""
    if not 0.0 <= m < 1.0:
        raise ConfigError(f'Margin must lie in [0, 1), got {m}')
    if isinstance(x, Tensor):
        return ops.div(ops.relu(x - m), 1.0 - m)
    return np.maximum(0.0, np.asarray(x, dtype=np.float64) - m) / (1.0 - m)


def _check_non_negative(name: str, t: Tensor) -> None:
    if np.any(t.data < -NEGATIVE_TOLERANCE):
        raise NumericError(f'transitive_alpha: {name} has negative entries (min {float(t.data.min())})')


def transitive_alpha(diag_x, alpha_v, m: float = 0.4) -> Tensor:
    """Soft pair weights α_ij = f((α^x_ii · α^v_ij · α^x_jj)^(1/3)) with a zero diagonal.

    ``diag_x`` holds each caption's similarity to its own image, ``alpha_v`` the image-image similarities. The
    image-image matrix is symmetrised and the caption factors enter as an outer product, so the result is exactly
    symmetric.

    Raises:
        NumericError: an input is negative.
    """
    diag_x, alpha_v = as_tensor(diag_x), as_tensor(alpha_v)
    n = diag_x.shape[0]
    if diag_x.ndim != 1 or alpha_v.shape != (n, n):
        raise ShapeError('transitive_alpha', diag_x.shape, alpha_v.shape)
    _check_non_negative('alpha_x', diag_x)
    _check_non_negative('alpha_v', alpha_v)
    sym_v = (alpha_v + ops.transpose(alpha_v)) * 0.5
    outer = ops.reshape(diag_x, (n, 1)) @ ops.reshape(diag_x, (1, n))
    alpha = margin_rescale(ops.power(ops.relu(outer * sym_v), 1.0 / 3.0), m)
    return alpha * (1.0 - np.eye(n))


def cross_alpha(diag_a, alpha_v_ab, diag_b, m: float = 0.4) -> Tensor:
    """Rectangular transitive weights between two caption sets (no diagonal convention)."""
    diag_a, alpha_v_ab, diag_b = as_tensor(diag_a), as_tensor(alpha_v_ab), as_tensor(diag_b)
    if alpha_v_ab.shape != (diag_a.shape[0], diag_b.shape[0]):
        raise ShapeError('cross_alpha', diag_a.shape, alpha_v_ab.shape, diag_b.shape)
    for name, t in (('alpha_x', diag_a), ('alpha_v', alpha_v_ab), ('alpha_x', diag_b)):
        _check_non_negative(name, t)
    outer = ops.reshape(diag_a, (diag_a.shape[0], 1)) @ ops.reshape(diag_b, (1, diag_b.shape[0]))
    return margin_rescale(ops.power(ops.relu(outer * alpha_v_ab), 1.0 / 3.0), m)


def supervised_alpha(n: int, pairs) -> np.ndarray:
    """0/1 weights: 1 for each listed (i, j) index pair and its mirror, 0 elsewhere."""
    alpha = np.zeros((n, n))
    for i, j in pairs:
        if i != j:
            alpha[i, j] = alpha[j, i] = 1.0
    return alpha


def loss_t(beta: Tensor, alpha, tau: float = 0.1) -> Tensor:
    """Cross-lingual contrastive loss weighted by soft pairs.

    L = -Σ_i Σ_{j≠i} α_ij log[exp(β_ij/τ) / Σ_{k≠i} exp(β_ik/τ)].
    ``beta`` is (n, K) with K >= n where column i is row i's own caption; any further columns are extra
    candidates (cached anchors during adaptation).
    """
    _tau(tau)
    beta = as_tensor(beta)
    alpha = as_tensor(alpha, dtype=beta.dtype)
    n, k = beta.shape
    if k < n or alpha.shape != beta.shape:
        raise ShapeError('loss_t', beta.shape, alpha.shape)
    not_self = np.ones((n, k), dtype=bool)
    not_self[np.arange(n), np.arange(n)] = False
    log_p = ops.log_softmax(beta * (1.0 / tau), axis=1, mask=not_self)
    return -ops.sum(alpha * log_p)


def loss_v(views: Tensor, tau: float = 0.1, symmetric: bool = True) -> Tensor:
    """Two-view NT-Xent over 2N image embeddings: rows i and i+N are views of the same image.

    Each anchor's positive is its other view; the other 2(N-1) embeddings are negatives. Both orders of every
    pair are counted unless ``symmetric`` is False.
    """
    _tau(tau)
    views = as_tensor(views)
    if views.ndim != 2 or views.shape[0] % 2:
        raise ShapeError('loss_v', views.shape)
    two_n = views.shape[0]
    n = two_n // 2
    not_self = ~np.eye(two_n, dtype=bool)
    log_p = ops.log_softmax(similarity_matrix(views, views) * (1.0 / tau), axis=1, mask=not_self)
    partner = np.concatenate([np.arange(n, two_n), np.arange(n)])
    picked = ops.pick(log_p, partner)
    if not symmetric:
        picked = ops.take_rows(ops.reshape(picked, (two_n, 1)), np.arange(n))
    return -ops.sum(picked)


def loss_x(
    images: Tensor,
    texts: Tensor,
    tau: float = 0.1,
    extra_images: Optional[Tensor] = None,
    extra_texts: Optional[Tensor] = None,
) -> Tensor:
    """Symmetric image-text contrastive loss over index-paired embeddings.

    For each i: -log softmax_j(α^x_ij/τ)[i] over texts, plus -log softmax_j(α^x_ji/τ)[i] over images. Optional
    extra (fixed) images/texts join the respective denominators as negatives.
    """
    _tau(tau)
    images, texts = as_tensor(images), as_tensor(texts)
    if images.shape != texts.shape or images.ndim != 2:
        raise ShapeError('loss_x', images.shape, texts.shape)
    n = images.shape[0]
    diag = np.arange(n)
    text_pool = texts if extra_texts is None else ops.concat([texts, extra_texts], axis=0)
    image_pool = images if extra_images is None else ops.concat([images, extra_images], axis=0)
    to_text = ops.log_softmax(similarity_matrix(images, text_pool) * (1.0 / tau), axis=1)
    to_image = ops.log_softmax(similarity_matrix(texts, image_pool) * (1.0 / tau), axis=1)
    return -(ops.sum(ops.pick(to_text, diag)) + ops.sum(ops.pick(to_image, diag)))


class ClozePlan(NamedTuple):
    """Which positions were corrupted, how, and what they originally held."""

    corrupted: np.ndarray
    positions: np.ndarray
    targets: np.ndarray
    sentence: np.ndarray


def make_cloze_plan(
    ids: np.ndarray, mask: np.ndarray, vocab_size: int, rng: np.random.Generator, mask_prob: float = 0.15
) -> ClozePlan:
    """Select ~``mask_prob`` of the non-special tokens per sentence (at least one where possible) and corrupt them.

    Selected tokens become [MASK] 80% of the time, a random non-special token 10%, and stay unchanged 10%.
    Positions are flat indices into the (batch, length) id matrix.
    """
    ids = np.asarray(ids, dtype=np.int64)
    maskable = np.asarray(mask, dtype=bool) & (ids >= len(SPECIALS))
    maskable[:, 0] = False
    chosen = maskable & (rng.random(ids.shape) < mask_prob)
    for row in np.flatnonzero(maskable.any(axis=1) & ~chosen.any(axis=1)):
        candidates = np.flatnonzero(maskable[row])
        chosen[row, candidates[int(rng.integers(len(candidates)))]] = True
    rows, cols = np.nonzero(chosen)
    corrupted = ids.copy()
    action = rng.random(rows.size)
    random_tokens = rng.integers(len(SPECIALS), max(vocab_size, len(SPECIALS) + 1), size=rows.size)
    to_mask = action < 0.8
    to_random = (action >= 0.8) & (action < 0.9)
    corrupted[rows[to_mask], cols[to_mask]] = MASK_ID
    corrupted[rows[to_random], cols[to_random]] = random_tokens[to_random]
    return ClozePlan(corrupted, rows * ids.shape[1] + cols, ids[rows, cols], rows)


def loss_cloze(logits: Tensor, targets: np.ndarray, sentence: np.ndarray) -> Tensor:
    """Masked-token cross-entropy: per sentence, the mean over its masked positions; summed over sentences.

    ``logits`` is (positions, vocab); ``sentence`` gives the batch row each position belongs to. Sentences with no
    masked position contribute nothing.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    sentence = np.asarray(sentence, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],) or sentence.shape != targets.shape:
        raise ShapeError('loss_cloze', logits.shape, targets.shape, sentence.shape)
    if targets.size == 0:
        return as_tensor(0.0, dtype=logits.dtype)
    _, inverse, counts = np.unique(sentence, return_inverse=True, return_counts=True)
    weights = (1.0 / counts[inverse]).astype(logits.dtype)
    picked = ops.pick(ops.log_softmax(logits, axis=1), targets)
    return -ops.sum(picked * weights)


def total_loss(
    l_t=None,
    l_v=None,
    l_x=None,
    l_c=None,
    lambda_v: float = 0.2,
    lambda_x: float = 0.2,
    lambda_c: float = 0.2,
) -> Tensor:
    """L_t + λ_v L_v + λ_x L_x + λ_c L_c over the components given (None means switched off).

    Raises:
        NumericError: a component is not finite; the message names it.
    """
    total: Optional[Tensor] = None
    components = (('L_t', l_t, 1.0), ('L_v', l_v, lambda_v), ('L_x', l_x, lambda_x), ('L_c', l_c, lambda_c))
    for name, value, weight in components:
        if value is None:
            continue
        value = as_tensor(value)
        if not np.all(np.isfinite(value.data)):
            raise NumericError(f'Loss component {name} is not finite ({value.data})')
        total = value * weight if total is None else total + value * weight
    return as_tensor(0.0) if total is None else total
