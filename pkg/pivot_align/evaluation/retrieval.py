"""Translation by retrieval (sentence and word level) and image-text retrieval.

All rankings use the [0, 1]-scaled cosine. Equal scores are ordered by candidate position, and candidates are
always laid out in id order, so reports are deterministic.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from pivot_align.align import WordSpace, WordTranslationGT
from pivot_align.corpus.records import CaptionTable, ImageTable
from pivot_align.evaluation.report import RetrievalReport
from pivot_align.exceptions import DataError
from pivot_align.model.dual import DualEncoder
from pivot_align.model.similarity import similarity_scores

_logger = logging.getLogger(__name__)

RECALL_KS = (1, 5, 10)


def rank_of(scores: np.ndarray, positives: np.ndarray) -> np.ndarray:
    """0-based rank of column ``positives[r]`` within row r; among equal scores lower columns rank first."""
    rows = np.arange(scores.shape[0])
    target = scores[rows, positives][:, None]
    columns = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target) | ((scores == target) & (columns < positives[:, None]))
    return ahead.sum(axis=1)


def sentence_retrieval_matrix(
    embeddings: np.ndarray, threads: int = 1, chunk: int = 256
) -> Tuple[np.ndarray, np.ndarray]:
    """Score every sentence of a (groups, languages, dim) paraphrase tensor as a query against all the others.

    A query's M-1 paraphrases count as retrieved when they rank within the top M-1 of the other G·M-1 sentences.
    Returns the per-query score (fraction retrieved, shape (G, M)) and the language-pair matrix whose entry
    (a, b) is the fraction of language-a queries whose language-b paraphrase was retrieved; its diagonal is 1.
    """
    embeddings = np.asarray(embeddings)
    groups, m, dim = embeddings.shape
    if m < 2:
        raise DataError(f'Sentence retrieval needs at least 2 languages per group, got {m}')
    flat = embeddings.reshape(groups * m, dim)
    total = groups * m

    def run(start: int) -> Tuple[int, np.ndarray]:
        queries = np.arange(start, min(start + chunk, total))
        scores = similarity_scores(flat[queries], flat)
        scores[np.arange(len(queries)), queries] = -np.inf
        hits = np.zeros((len(queries), m))
        base = (queries // m) * m
        for lang in range(m):
            hits[:, lang] = rank_of(scores, base + lang) < m - 1
        return start, hits

    starts = range(0, total, chunk)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(start) for start in starts]
    hits = np.concatenate([h for _, h in sorted(parts, key=lambda p: p[0])]).reshape(groups, m, m)
    own = np.eye(m, dtype=bool)
    hits[:, own] = 0.0
    per_query = hits.sum(axis=2) / (m - 1)
    matrix = hits.mean(axis=0)
    matrix[own] = 1.0
    return per_query, matrix


def select_groups(groups: Sequence[Dict[str, str]], n: int, seed: int) -> List[Dict[str, str]]:
    """``n`` groups drawn without replacement under ``seed``, kept in their original order; all when short."""
    if n >= len(groups):
        if n > len(groups):
            _logger.warning(f'Requested {n} groups but only {len(groups)} exist; using all of them')
        return list(groups)
    chosen = np.sort(np.random.default_rng(seed).choice(len(groups), size=n, replace=False))
    return [groups[i] for i in chosen]


def sentence_retrieval_eval(
    model: DualEncoder,
    captions: CaptionTable,
    groups: Sequence[Dict[str, str]],
    n_queries: int = 50,
    languages: Optional[Sequence[str]] = None,
    seed: int = 0,
    threads: int = 1,
) -> RetrievalReport:
    """Sentence-level translation accuracy over ``n_queries`` paraphrase groups, text encoder only.

    Raises:
        DataError: a selected group lacks one of the languages, or a caption is not tokenized.
    """
    if not groups:
        raise DataError('No paraphrase groups to evaluate')
    languages = sorted(languages if languages is not None else groups[0])
    chosen = select_groups(groups, n_queries, seed)
    incomplete = [i for i, group in enumerate(chosen) if any(lang not in group for lang in languages)]
    if incomplete:
        raise DataError(f'{len(incomplete)} paraphrase group(s) miss a language of {languages}', offenders=incomplete)
    records = [captions[group[lang]] for group in chosen for lang in languages]
    untokenized = [r.id for r in records if r.tokens is None]
    if untokenized:
        raise DataError(f'{len(untokenized)} caption(s) are not tokenized', offenders=untokenized)
    embeddings = model.embed_sentences([r.tokens for r in records], threads=threads)  # type: ignore[misc]
    per_query, matrix = sentence_retrieval_matrix(embeddings.reshape(len(chosen), len(languages), -1), threads)
    m, n = len(languages), len(chosen)
    accuracy = float(per_query.mean())
    _logger.info(f'Sentence retrieval: {accuracy:.4f} over {n} groups x {m} languages')
    return RetrievalReport.build(
        'sentence',
        {'accuracy': accuracy, 'chance': (m - 1) / (n * m - 1)},
        languages,
        matrix,
        {'n_queries': n, 'n_languages': m, 'seed': seed},
    )


def word_retrieval_eval(
    spaces: Dict[str, WordSpace],
    gts: Sequence[WordTranslationGT],
    k: int = 10,
    exclude_identical: bool = False,
) -> RetrievalReport:
    """Recall@k of ground-truth word translations in both directions, per language pair and on average.

    Pairs whose tokens fall outside the word spaces are dropped; a language pair left with no pairs is skipped with
    a warning and shows as NaN in the matrix.
    """
    languages = sorted(spaces)
    index = {lang: i for i, lang in enumerate(languages)}
    matrix = np.full((len(languages), len(languages)), np.nan)
    np.fill_diagonal(matrix, 1.0)
    counts: Dict[str, int] = {}

    directed: Dict[Tuple[str, str], List[Tuple[int, int]]] = {}
    for gt in gts:
        for view in (gt, gt.flipped()):
            directed.setdefault((view.lang_a, view.lang_b), []).extend(view.pairs)

    recalls = []
    for (source, target), pairs in sorted(directed.items()):
        if source not in spaces or target not in spaces:
            continue
        if exclude_identical:
            pairs = [(a, b) for a, b in pairs if a != b]
        src, tgt = spaces[source], spaces[target]
        known_src, known_tgt = set(src.tokens.tolist()), set(tgt.tokens.tolist())
        pairs = sorted({(a, b) for a, b in pairs if a in known_src and b in known_tgt})
        if not pairs:
            _logger.warning(f'No usable word pairs for {source} -> {target}; skipped')
            continue
        queries = src.vectors[[src.row_of(a) for a, _ in pairs]]
        positives = np.array([tgt.row_of(b) for _, b in pairs])
        ranks = rank_of(queries @ tgt.vectors.T, positives)
        recall = float(np.mean(ranks < k))
        matrix[index[source], index[target]] = recall
        counts[f'{source}->{target}'] = len(pairs)
        recalls.append(recall)

    if not recalls:
        _logger.warning('Word retrieval found no usable pairs at all')
    mean = float(np.mean(recalls)) if recalls else float('nan')
    _logger.info(f'Word retrieval recall@{k}: {mean:.4f} over {len(recalls)} directed language pairs')
    return RetrievalReport.build(
        'word',
        {f'recall@{k}': mean},
        languages,
        matrix,
        {'k': k, 'exclude_identical': exclude_identical, 'pairs': counts},
    )


def recall_at_k(scores: np.ndarray, ks: Sequence[int] = RECALL_KS) -> Dict[int, float]:
    """Recall@k for each k when row i's positive is column i."""
    ranks = rank_of(scores, np.arange(scores.shape[0]))
    return {k: float(np.mean(ranks < k)) for k in ks}


def crossmodal_recalls(
    texts: np.ndarray, images: np.ndarray, ks: Sequence[int] = RECALL_KS
) -> Dict[str, float]:
    """Text-to-image and image-to-text recall@k for index-paired embeddings."""
    scores = similarity_scores(texts, images)
    out = {f'text_to_image_r{k}': v for k, v in recall_at_k(scores, ks).items()}
    out.update({f'image_to_text_r{k}': v for k, v in recall_at_k(scores.T, ks).items()})
    return out


def crossmodal_retrieval_eval(
    model: DualEncoder,
    captions: CaptionTable,
    images: ImageTable,
    pairs_per_language: int = 200,
    seed: int = 0,
    threads: int = 1,
) -> RetrievalReport:
    """Per-language image-text recall@{1, 5, 10} in both directions, averaged over languages.

    Languages with fewer captions than requested use all of them, with a warning.
    """
    per_language: Dict[str, Dict[str, float]] = {}
    for lang in captions.languages():
        records = list(captions.by_language(lang))
        if len(records) < pairs_per_language:
            _logger.warning(f'{lang}: only {len(records)} caption-image pairs, fewer than {pairs_per_language}')
        else:
            rng = np.random.default_rng(seed)
            records = [records[i] for i in np.sort(rng.choice(len(records), pairs_per_language, replace=False))]
        if len(records) < 2:
            _logger.warning(f'{lang}: not enough pairs to rank, skipped')
            continue
        texts = model.embed_sentences([r.tokens for r in records], threads=threads)  # type: ignore[misc]
        image_embeddings = model.embed_images(images.rows([r.image_id for r in records]))
        per_language[lang] = crossmodal_recalls(texts, image_embeddings)
    if not per_language:
        raise DataError('No language has enough caption-image pairs for cross-modal retrieval')
    keys = sorted(next(iter(per_language.values())))
    metrics = {key: float(np.mean([scores[key] for scores in per_language.values()])) for key in keys}
    _logger.info(f'Cross-modal retrieval over {len(per_language)} languages: {metrics}')
    return RetrievalReport.build(
        'crossmodal',
        metrics,
        sorted(per_language),
        meta={'per_language': per_language, 'pairs_per_language': pairs_per_language, 'seed': seed},
    )
