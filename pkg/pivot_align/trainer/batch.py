import logging
from typing import List, NamedTuple, Sequence

import numpy as np

from pivot_align.corpus.records import CaptionRecord, ImageTable
from pivot_align.exceptions import DataError
from pivot_align.losses import ClozePlan, make_cloze_plan
from pivot_align.model.text import pad_batch

_logger = logging.getLogger(__name__)


class Augmenter:
    """Feature-space stand-in for image augmentation: additive Gaussian noise, then random coordinate dropout."""

    def __init__(self, sigma: float = 0.1, dropout: float = 0.1) -> None:
        self.sigma = sigma
        self.dropout = dropout

    def __call__(self, features: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        view = features + self.sigma * rng.standard_normal(features.shape) if self.sigma > 0 else features.copy()
        if self.dropout > 0:
            view = view * (rng.random(features.shape) >= self.dropout)
        return view.astype(features.dtype, copy=False)


class Batch(NamedTuple):
    """Row-aligned inputs for one optimisation step."""

    ids: np.ndarray
    mask: np.ndarray
    plan: ClozePlan
    features: np.ndarray
    view1: np.ndarray
    view2: np.ndarray
    record_ids: List[str]

    def __len__(self) -> int:
        return len(self.record_ids)


def build_batch(
    records: Sequence[CaptionRecord],
    images: ImageTable,
    augmenter: Augmenter,
    seed: int,
    vocab_size: int,
    max_len: int = 64,
    mask_prob: float = 0.15,
    needs_negatives: bool = True,
) -> Batch:
    """Pad token ids, plan cloze corruption and draw two augmented views of each caption's image features.

    Everything random is drawn from ``seed``, so equal arguments give equal batches.

    Raises:
        DataError: fewer than two records while a contrastive loss needs negatives, or untokenized records.
    """
    if needs_negatives and len(records) < 2:
        raise DataError(f'A batch of {len(records)} record(s) has no negatives for the contrastive losses')
    if not records:
        raise DataError('Cannot build an empty batch')
    untokenized = [r.id for r in records if r.tokens is None]
    if untokenized:
        raise DataError(f'Records are not tokenized: {", ".join(untokenized[:10])}', offenders=untokenized)
    rng = np.random.default_rng(seed)
    ids, mask = pad_batch([r.tokens for r in records], max_len)  # type: ignore[misc]
    plan = make_cloze_plan(ids, mask, vocab_size, rng, mask_prob)
    features = images.rows([r.image_id for r in records])
    return Batch(
        ids=ids,
        mask=mask,
        plan=plan,
        features=features,
        view1=augmenter(features, rng),
        view2=augmenter(features, rng),
        record_ids=[r.id for r in records],
    )
