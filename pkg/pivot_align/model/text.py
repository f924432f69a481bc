import logging
import math
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from pivot_align.config import ModelConfig
from pivot_align.diffcore import ParamStore, Tensor, ops
from pivot_align.exceptions import DataError, ShapeError
from pivot_align.tokenizer import PAD_ID, SEQ_ID

_logger = logging.getLogger(__name__)


class TextOutput(NamedTuple):
    """Sentence embeddings plus the per-token final hiddens the cloze head reads."""

    z: Tensor
    hiddens: Tensor
    mask: np.ndarray


def pad_batch(sequences: Sequence[Sequence[int]], max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stack token sequences into a [PAD]-filled id matrix and a validity mask, truncating at ``max_len``."""
    if not sequences:
        raise DataError('Cannot pad an empty batch')
    truncated = [i for i, seq in enumerate(sequences) if len(seq) > max_len]
    if truncated:
        _logger.warning(f'Truncating {len(truncated)} sequence(s) longer than {max_len} tokens')
    width = min(max(len(seq) for seq in sequences), max_len)
    ids = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(sequences), width), dtype=bool)
    for row, seq in enumerate(sequences):
        seq = list(seq)[:max_len]
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = True
    return ids, mask


def self_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    heads: int,
    mask: Optional[np.ndarray] = None,
    bq: Optional[Tensor] = None,
    bk: Optional[Tensor] = None,
    bv: Optional[Tensor] = None,
) -> Tensor:
    """Multi-head scaled dot-product self-attention over ``x`` of shape (batch, length, width).

    Each head computes softmax(Q Kᵀ / √width_per_head) V; heads are concatenated back to ``width``. ``mask`` marks
    valid key positions per batch row.
    """
    batch, length, width = x.shape
    if width % heads:
        raise ShapeError('self_attention', x.shape, (heads,))
    per_head = width // heads

    def project(w: Tensor, b: Optional[Tensor]) -> Tensor:
        y = x @ w if b is None else x @ w + b
        return ops.transpose(ops.reshape(y, (batch, length, heads, per_head)), (0, 2, 1, 3))

    q, k, v = project(wq, bq), project(wk, bk), project(wv, bv)
    scores = (q @ ops.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(per_head))
    key_mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None, None, :]
    weights = ops.softmax(scores, axis=-1, mask=key_mask)
    out = weights @ v
    return ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (batch, length, width))


class TextEncoder:
    """Token + position embedding, pre-norm transformer blocks, and a linear head on the [SEQ] position."""

    def __init__(self, store: ParamStore, config: ModelConfig) -> None:
        self.store = store
        self.config = config

    def _p(self, name: str) -> Tensor:
        return self.store[f'text.{name}']

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return x @ self._p(f'{name}.w') + self._p(f'{name}.b')

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return ops.layer_norm(x, self._p(f'{name}.g'), self._p(f'{name}.b'))

    def embed_tokens(self, ids: np.ndarray) -> Tensor:
        """Word embedding plus learned positional embedding; (length,) ids give (length, hidden)."""
        ids = np.asarray(ids, dtype=np.int64)
        squeeze = ids.ndim == 1
        if squeeze:
            ids = ids[None, :]
        if ids.shape[1] > self.config.max_len:
            _logger.warning(f'Truncating sequence of length {ids.shape[1]} to {self.config.max_len} tokens')
            ids = ids[:, : self.config.max_len]
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise DataError(f'Token ids must lie in [0, {self.config.vocab_size})')
        positions = ops.take_rows(self._p('pos_emb'), np.arange(ids.shape[1]))
        h = ops.take_rows(self._p('tok_emb'), ids) + positions
        return ops.select(h, 0, axis=0) if squeeze else h

    def transformer_block(self, h: Tensor, m: int, mask: Optional[np.ndarray] = None) -> Tensor:
        """Block ``m``: h + Attn(LN(h)), then + FFN(LN(.)) with a 4x-wide gelu layer."""
        squeeze = h.ndim == 2
        if squeeze:
            h = ops.reshape(h, (1,) + h.shape)
            mask = None if mask is None else np.asarray(mask)[None, :]
        block = f'block{m}'
        a = self_attention(
            self._norm(h, f'{block}.ln1'),
            self._p(f'{block}.attn.q.w'),
            self._p(f'{block}.attn.k.w'),
            self._p(f'{block}.attn.v.w'),
            self.config.heads,
            mask=mask,
            bq=self._p(f'{block}.attn.q.b'),
            bk=self._p(f'{block}.attn.k.b'),
            bv=self._p(f'{block}.attn.v.b'),
        )
        h = h + self._linear(a, f'{block}.attn.o')
        h = h + self._linear(ops.gelu(self._linear(self._norm(h, f'{block}.ln2'), f'{block}.ff1')), f'{block}.ff2')
        return ops.select(h, 0, axis=0) if squeeze else h

    def encode(self, ids: np.ndarray, mask: Optional[np.ndarray] = None) -> TextOutput:
        """Unit-norm sentence embeddings for a (batch, length) id matrix whose rows start with [SEQ].

        Raises:
            DataError: a row does not start with [SEQ].
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if mask is None:
            mask = ids != PAD_ID
        ids = ids[:, : self.config.max_len]
        mask = np.asarray(mask, dtype=bool)[:, : self.config.max_len]
        missing = np.flatnonzero(ids[:, 0] != SEQ_ID)
        if missing.size:
            raise DataError(f'{missing.size} sequence(s) do not start with [SEQ]', offenders=missing.tolist())
        h = self.embed_tokens(ids)
        for m in range(self.config.layers):
            h = self.transformer_block(h, m, mask)
        h = self._norm(h, 'ln_f')
        z = ops.l2_normalize(self._linear(ops.select(h, 0, axis=1), 'head'), axis=-1)
        return TextOutput(z, h, mask)

    def cloze_logits(self, hiddens: Tensor, positions: np.ndarray) -> Tensor:
        """Vocabulary logits at flat (row * length + column) ``positions`` of a (batch, length, hidden) tensor."""
        batch, length, width = hiddens.shape
        picked = ops.take_rows(ops.reshape(hiddens, (batch * length, width)), positions)
        return self._linear(picked, 'cloze')
