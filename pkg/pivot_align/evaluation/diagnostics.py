import logging
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from pivot_align.align import WordTranslationGT
from pivot_align.corpus.records import CaptionTable, GroundTruth, ImageTable
from pivot_align.evaluation.ground_truth import concept_index, function_tokens
from pivot_align.evaluation.report import RetrievalReport
from pivot_align.exceptions import DataError
from pivot_align.losses import transitive_alpha
from pivot_align.model.dual import DualEncoder
from pivot_align.model.similarity import similarity_scores
from pivot_align.tokenizer import Vocabulary

_logger = logging.getLogger(__name__)


def gt_precision(gts: Sequence[WordTranslationGT], ground_truth: GroundTruth, vocab: Vocabulary) -> RetrievalReport:
    """Score mined word pairs against the generator's word map.

    Precision is the share of pairs whose two tokens come from wordforms of one concept; the function-word share
    counts pairs where either token belongs to a function word.
    """
    concepts = concept_index(ground_truth, vocab)
    functional = function_tokens(ground_truth, vocab)
    total = correct = touching = 0
    per_pair: Dict[str, float] = {}
    for gt in gts:
        hits = 0
        for a, b in gt.pairs:
            shared = concepts.get(gt.lang_a, {}).get(a, set()) & concepts.get(gt.lang_b, {}).get(b, set())
            hits += bool(shared)
            touching += a in functional.get(gt.lang_a, set()) or b in functional.get(gt.lang_b, set())
        total += len(gt.pairs)
        correct += hits
        if gt.pairs:
            per_pair[f'{gt.lang_a}-{gt.lang_b}'] = hits / len(gt.pairs)
    if total == 0:
        raise DataError('No mined word pairs to score')
    _logger.info(f'Word ground truth precision {correct / total:.4f} over {total} pairs')
    return RetrievalReport.build(
        'word_gt_precision',
        {'precision': correct / total, 'function_word_share': touching / total},
        meta={'pairs': total, 'per_language_pair': per_pair},
    )


def alpha_gap(
    model: DualEncoder,
    captions: CaptionTable,
    images: ImageTable,
    corrupted: Iterable[str],
    margin: float = 0.4,
    batch_size: int = 64,
    seed: int = 0,
    threads: int = 1,
) -> RetrievalReport:
    """Mean transitive α over in-batch pairs that involve a noisy caption, against pairs of two clean captions.

    Batches are drawn the way training draws them; the reported gap is clean minus noisy. Without any noisy caption
    the two populations cannot differ and the gap is 0.
    """
    records = list(captions)
    if len(records) < 2:
        raise DataError('alpha_gap needs at least two captions')
    noisy = set(corrupted)
    texts = model.embed_sentences([r.tokens for r in records], threads=threads)  # type: ignore[misc]
    image_embeddings = model.embed_images(images.rows([r.image_id for r in records]))
    is_noisy = np.array([r.id in noisy for r in records])
    order = np.random.default_rng(seed).permutation(len(records))

    noisy_values, clean_values = [], []
    for start in range(0, len(order), batch_size):
        rows = order[start : start + batch_size]
        if len(rows) < 2:
            continue
        diag = (np.sum(texts[rows] * image_embeddings[rows], axis=1) + 1.0) / 2.0
        alpha = transitive_alpha(diag, similarity_scores(image_embeddings[rows], image_embeddings[rows]), margin).data
        off = ~np.eye(len(rows), dtype=bool)
        involves = is_noisy[rows][:, None] | is_noisy[rows][None, :]
        noisy_values.append(alpha[off & involves])
        clean_values.append(alpha[off & ~involves])

    def mean(parts) -> Optional[float]:
        values = np.concatenate(parts) if parts else np.zeros(0)
        return float(values.mean()) if values.size else None

    noisy_mean, clean_mean = mean(noisy_values), mean(clean_values)
    metrics = {}
    if noisy_mean is not None:
        metrics['alpha_noisy'] = noisy_mean
    if clean_mean is not None:
        metrics['alpha_clean'] = clean_mean
    if noisy_mean is not None and clean_mean is not None:
        metrics['gap'] = clean_mean - noisy_mean
    elif not is_noisy.any():
        metrics['gap'] = 0.0
    else:
        _logger.warning('alpha_gap: one of the pair populations is empty')
    _logger.info(f'Transitive α: {metrics}')
    return RetrievalReport.build(
        'alpha_gap', metrics, meta={'captions': len(records), 'noisy': int(is_noisy.sum()), 'margin': margin}
    )
