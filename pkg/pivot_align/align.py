"""Word-level alignment on the shared token embedding table.

Per-language token sets restrict the table to the tokens each language actually uses. Ground-truth word
translations are mined from sentence-aligned captions with tf-idf, where the "document" of a source token is every
target-language token co-occurring with it in translated sentences. Mutual nearest neighbours between the sets
supply anchors for orthogonal Procrustes maps, refined iteratively against a mean space when there are more than
two languages.
"""
import json
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from pathlib import Path
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import orthogonal_procrustes

from pivot_align.corpus.records import CaptionTable
from pivot_align.exceptions import ConfigError, DataError, ShapeError
from pivot_align.model.checkpoint import read_arrays, write_arrays
from pivot_align.tokenizer import SPECIALS, Vocabulary

_logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
TokenPair = Tuple[int, int]


class LanguageTokenSet(NamedTuple):
    """Token ids one language uses at least ``min_count`` times, with their counts."""

    language: str
    counts: Dict[int, int]

    @property
    def tokens(self) -> np.ndarray:
        """Sorted token ids."""
        return np.array(sorted(self.counts), dtype=np.int64)

    def __contains__(self, token_id: object) -> bool:
        return token_id in self.counts


class WordTranslationGT(NamedTuple):
    """Mined token translations for one ordered language pair."""

    lang_a: str
    lang_b: str
    pairs: List[TokenPair]

    def flipped(self) -> 'WordTranslationGT':
        """The same pairs seen from ``lang_b``."""
        return WordTranslationGT(self.lang_b, self.lang_a, sorted((b, a) for a, b in self.pairs))


class ProcrustesMaps(NamedTuple):
    """One orthogonal map per language into the reference space, with the anchors of the final round."""

    languages: List[str]
    maps: Dict[str, np.ndarray]
    anchors: Dict[str, List[TokenPair]]
    rounds: int
    objective: List[float]


class WordSpace(NamedTuple):
    """A language's word vectors: unit rows of the embedding table for its token set, optionally mapped."""

    language: str
    tokens: np.ndarray
    vectors: np.ndarray

    def row_of(self, token_id: int) -> int:
        """Row holding ``token_id``."""
        row = int(np.searchsorted(self.tokens, token_id))
        if row >= len(self.tokens) or self.tokens[row] != token_id:
            raise DataError(f'Token {token_id} is not in the {self.language} word set', offenders=[token_id])
        return row


def _default_keep(token_id: int) -> bool:
    return token_id >= len(SPECIALS)


def language_token_sets(
    captions: CaptionTable, vocab: Optional[Vocabulary] = None, min_count: int = 3
) -> Dict[str, LanguageTokenSet]:
    """Count token ids per language and keep those seen at least ``min_count`` times.

    Special tokens are never kept; with a vocabulary, tokens without an alphanumeric character are dropped too.
    Captions without token ids are encoded with ``vocab``.
    """
    keep: Callable[[int], bool] = _default_keep if vocab is None else vocab.is_word_token
    counters: Dict[str, Counter] = defaultdict(Counter)
    for record in captions:
        if record.tokens is not None:
            tokens: Sequence[int] = record.tokens
        elif vocab is not None:
            tokens = vocab.encode(record.text)
        else:
            raise DataError(f'Caption {record.id} is not tokenized and no vocabulary was given', offenders=[record.id])
        counters[record.lang].update(tokens)
    sets = {}
    for lang in sorted(counters):
        counts = {int(t): c for t, c in counters[lang].items() if c >= min_count and keep(int(t))}
        sets[lang] = LanguageTokenSet(lang, counts)
        _logger.debug(f'{lang}: {len(counts)} tokens with count >= {min_count}')
    return sets


def aligned_sequences(
    captions: CaptionTable, groups: Iterable[Dict[str, str]], lang_a: str, lang_b: str
) -> List[Tuple[Sequence[int], Sequence[int]]]:
    """Token sequences of every group holding both languages, as (lang_a, lang_b) pairs."""
    pairs = []
    for group in groups:
        if lang_a in group and lang_b in group:
            a, b = captions[group[lang_a]], captions[group[lang_b]]
            if a.tokens is None or b.tokens is None:
                raise DataError(f'Captions {a.id}/{b.id} are not tokenized', offenders=[a.id, b.id])
            pairs.append((a.tokens, b.tokens))
    return pairs


def _tfidf_top(
    aligned: Sequence[Tuple[Sequence[int], Sequence[int]]], top: int, keep: Callable[[int], bool]
) -> Dict[int, List[int]]:
    documents: Dict[int, Counter] = defaultdict(Counter)
    for source, target in aligned:
        target_counts = Counter(t for t in target if keep(t))
        for token in set(source):
            if keep(token):
                documents[token].update(target_counts)
    n_documents = len(documents)
    frequency = Counter(j for document in documents.values() for j in document)
    # smoothed, so a token present in every document still scores
    idf = {j: math.log((1.0 + n_documents) / (1.0 + df)) + 1.0 for j, df in frequency.items()}
    ranked = {}
    for token, document in documents.items():
        total = sum(document.values())
        scored = sorted((-(f / total) * idf[j], j) for j, f in document.items())
        ranked[token] = [j for _, j in scored[:top]]
    return ranked


def mine_word_gt(
    aligned: Sequence[Tuple[Sequence[int], Sequence[int]]],
    lang_a: str,
    lang_b: str,
    top: int = 5,
    keep: Optional[Callable[[int], bool]] = None,
) -> WordTranslationGT:
    """Token pairs (i, j) where j is in i's top-``top`` tf-idf list and i in j's, over sentence-aligned captions.

    Ties in the tf-idf ranking are broken by the lower token id. The idf is smoothed to
    ``log((1 + N) / (1 + df)) + 1``: with the raw ``log(N / df)``, the corpus ``x y``, ``x z``, ``y z`` aligned to
    ``p q``, ``p r``, ``q r`` puts every target token in every document, so each idf is 0 and no ranking survives.
    Smoothed, the term frequencies decide and x↔p, y↔q, z↔r come out.

    Raises:
        DataError: there are no aligned sentences.
    """
    if not aligned:
        raise DataError(f'No aligned sentences between {lang_a} and {lang_b}')
    keep = keep or _default_keep
    forward = _tfidf_top(aligned, top, keep)
    backward = _tfidf_top([(b, a) for a, b in aligned], top, keep)
    pairs = sorted({(i, j) for i, candidates in forward.items() for j in candidates if i in backward.get(j, ())})
    _logger.info(f'Mined {len(pairs)} word pairs for {lang_a}-{lang_b} from {len(aligned)} sentences')
    return WordTranslationGT(lang_a, lang_b, pairs)


def mine_all_pairs(
    captions: CaptionTable,
    groups: Sequence[Dict[str, str]],
    languages: Sequence[str],
    vocab: Optional[Vocabulary] = None,
    top: int = 5,
    threads: int = 1,
) -> List[WordTranslationGT]:
    """Mine every unordered language pair; pairs run concurrently when ``threads`` > 1."""
    keep = None if vocab is None else vocab.is_word_token
    language_pairs = list(combinations(sorted(languages), 2))

    def mine(pair: Tuple[str, str]) -> WordTranslationGT:
        a, b = pair
        return mine_word_gt(aligned_sequences(captions, groups, a, b), a, b, top, keep)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(mine, language_pairs))
    return [mine(pair) for pair in language_pairs]


def write_word_gt(path: PathLike, gts: Iterable[WordTranslationGT], vocab: Vocabulary) -> None:
    """JSON array of ``{lang_a, lang_b, pairs: [[token_a, token_b], ...]}`` with token strings."""
    payload = [
        {'lang_a': gt.lang_a, 'lang_b': gt.lang_b, 'pairs': [[vocab.token(a), vocab.token(b)] for a, b in gt.pairs]}
        for gt in gts
    ]
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False))


def read_word_gt(path: PathLike, vocab: Vocabulary) -> List[WordTranslationGT]:
    """Inverse of :func:`write_word_gt`."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise DataError(f'Cannot read word ground truth {path}: {e}')
    return [
        WordTranslationGT(
            entry['lang_a'], entry['lang_b'], [(vocab.id_of(a), vocab.id_of(b)) for a, b in entry['pairs']]
        )
        for entry in payload
    ]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort keeps the lower index first among equal scores
    return np.argsort(-scores, axis=1, kind='stable')[:, :k]


def mutual_knn_anchors(embeds_a: np.ndarray, embeds_b: np.ndarray, k: int = 5) -> List[TokenPair]:
    """Row pairs (a, b) where b is among a's ``k`` nearest rows of B by cosine and a among b's ``k`` nearest of A.

    Raises:
        ConfigError: ``k`` < 1.
        DataError: either set is empty.
    """
    if k < 1:
        raise ConfigError(f'k must be >= 1, got {k}')
    embeds_a, embeds_b = np.asarray(embeds_a), np.asarray(embeds_b)
    if embeds_a.ndim != 2 or embeds_b.ndim != 2 or embeds_a.shape[1] != embeds_b.shape[1]:
        raise ShapeError('mutual_knn_anchors', embeds_a.shape, embeds_b.shape)
    if embeds_a.shape[0] == 0 or embeds_b.shape[0] == 0:
        raise DataError('Anchor search needs two non-empty embedding sets')
    a, b = _unit_rows(embeds_a), _unit_rows(embeds_b)
    scores = a @ b.T
    near_b = np.zeros(scores.shape, dtype=bool)
    near_b[np.arange(a.shape[0])[:, None], _top_k(scores, min(k, b.shape[0]))] = True
    near_a = np.zeros(scores.shape, dtype=bool)
    near_a[_top_k(scores.T, min(k, a.shape[0])), np.arange(b.shape[0])[:, None]] = True
    rows, cols = np.nonzero(near_b & near_a)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def procrustes_solve(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Orthogonal W minimising ‖XW − Y‖_F, i.e. UVᵀ from the SVD of XᵀY.

    Fewer anchors than dimensions, or a rank-deficient XᵀY, is logged as a warning; W is still returned.
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape != y.shape:
        raise ShapeError('procrustes_solve', x.shape, y.shape)
    n, dim = x.shape
    if n < dim:
        _logger.warning(f'Procrustes with {n} anchors in {dim} dimensions is underdetermined')
    rank = int(np.linalg.matrix_rank(x.T @ y))
    if rank < dim:
        _logger.warning(f'Procrustes cross-covariance has degenerate rank {rank} < {dim}')
    w, _ = orthogonal_procrustes(x, y)
    return w


def _profiles(x: np.ndarray, width: int) -> np.ndarray:
    # sorted similarity rows are invariant to rotating the whole set
    return np.sort(x @ x.T, axis=1)[:, ::-1][:, :width]


def multi_procrustes(
    spaces: Dict[str, np.ndarray], k: int = 5, rounds: int = 10, tol: float = 1e-4, init: str = 'identity'
) -> ProcrustesMaps:
    """Map several embedding sets into the space of the first one.

    The first language is the reference and keeps the identity map. Each round finds mutual k-NN anchors between
    every other mapped set and the current mean space, solves Procrustes on them, then recomputes the mean space
    as the average of each reference row and the mapped rows anchored to it. Iteration stops once the mean anchor
    displacement falls below ``tol`` or after ``rounds`` rounds.

    With ``init='profile'`` the first round's anchors come from rotation-invariant similarity profiles instead of
    the raw coordinates, for sets that do not share a coordinate system.

    Raises:
        ConfigError: fewer than two languages, or an unknown ``init``.
    """
    if len(spaces) < 2:
        raise ConfigError(f'Procrustes refinement needs at least 2 languages, got {len(spaces)}')
    if init not in ('identity', 'profile'):
        raise ConfigError(f"init must be 'identity' or 'profile', got {init!r}")
    languages = list(spaces)
    reference = languages[0]
    embeds = {lang: _unit_rows(spaces[lang]) for lang in languages}
    dim = embeds[reference].shape[1]
    maps = {lang: np.eye(dim) for lang in languages}
    anchors: Dict[str, List[TokenPair]] = {reference: [(i, i) for i in range(len(embeds[reference]))]}
    mean_space = embeds[reference].copy()
    active = languages[1:]
    objective: List[float] = []

    done = 0
    for done in range(1, rounds + 1):
        displacement: List[float] = []
        for lang in list(active):
            if done == 1 and init == 'profile':
                width = min(len(embeds[lang]), len(embeds[reference]))
                found = mutual_knn_anchors(_profiles(embeds[lang], width), _profiles(embeds[reference], width), k)
            else:
                found = mutual_knn_anchors(embeds[lang] @ maps[lang], mean_space, k)
            if not found:
                _logger.warning(f'{lang}: no anchors against the mean space, excluded from the maps')
                active.remove(lang)
                maps.pop(lang)
                anchors.pop(lang, None)
                continue
            rows = np.array([a for a, _ in found])
            cols = np.array([b for _, b in found])
            w = procrustes_solve(embeds[lang][rows], mean_space[cols])
            displacement.extend(np.linalg.norm(embeds[lang][rows] @ (w - maps[lang]), axis=1))
            maps[lang] = w
            anchors[lang] = found

        total = np.zeros_like(mean_space)
        weight = np.ones(len(mean_space))
        total += embeds[reference]
        for lang in active:
            rows = np.array([a for a, _ in anchors[lang]])
            cols = np.array([b for _, b in anchors[lang]])
            np.add.at(total, cols, embeds[lang][rows] @ maps[lang])
            np.add.at(weight, cols, 1.0)
        mean_space = _unit_rows(total / weight[:, None])
        loss = 0.0
        for lang in active:
            rows = np.array([a for a, _ in anchors[lang]])
            cols = np.array([b for _, b in anchors[lang]])
            loss += float(np.sum((embeds[lang][rows] @ maps[lang] - mean_space[cols]) ** 2))
        objective.append(loss)
        moved = float(np.mean(displacement)) if displacement else 0.0
        _logger.debug(f'Procrustes round {done}: objective {loss:.6f}, mean anchor displacement {moved:.2e}')
        if moved < tol:
            break

    kept = [reference] + active
    _logger.info(f'Procrustes maps for {len(kept)} languages after {done} round(s)')
    return ProcrustesMaps(kept, {lang: maps[lang] for lang in kept}, anchors, done, objective)


def write_maps(path: PathLike, maps: ProcrustesMaps) -> None:
    """Store the maps as a ``GTCK`` named-array file; anchors and round history go in the metadata."""
    arrays = {f'W/{lang}': maps.maps[lang] for lang in maps.languages}
    meta = {
        'languages': maps.languages,
        'anchors': {lang: [list(p) for p in pairs] for lang, pairs in maps.anchors.items()},
        'rounds': maps.rounds,
        'objective': maps.objective,
    }
    write_arrays(path, arrays, meta)


def read_maps(path: PathLike) -> ProcrustesMaps:
    """Inverse of :func:`write_maps`."""
    arrays, meta = read_arrays(path)
    if 'languages' not in meta:
        raise DataError(f'{path} is not a Procrustes maps file')
    languages = list(meta['languages'])
    return ProcrustesMaps(
        languages,
        {lang: arrays[f'W/{lang}'] for lang in languages},
        {lang: [(int(a), int(b)) for a, b in pairs] for lang, pairs in meta['anchors'].items()},
        int(meta['rounds']),
        [float(v) for v in meta['objective']],
    )


def word_spaces(
    embeddings: np.ndarray,
    token_sets: Dict[str, LanguageTokenSet],
    maps: Optional[ProcrustesMaps] = None,
) -> Dict[str, WordSpace]:
    """Unit word vectors per language, mapped into the reference space when ``maps`` is given.

    Languages the maps dropped are left out.
    """
    spaces = {}
    for lang, token_set in token_sets.items():
        if maps is not None and lang not in maps.maps:
            continue
        tokens = token_set.tokens
        vectors = _unit_rows(embeddings[tokens])
        if maps is not None:
            vectors = vectors @ maps.maps[lang]
        spaces[lang] = WordSpace(lang, tokens, vectors)
    return spaces


def procrustes_inputs(embeddings: np.ndarray, token_sets: Dict[str, LanguageTokenSet]) -> Dict[str, np.ndarray]:
    """Per-language embedding rows in the order :func:`multi_procrustes` expects (sorted languages)."""
    return {lang: embeddings[token_sets[lang].tokens] for lang in sorted(token_sets)}


def translate_word(token_id: int, source: str, target: str, spaces: Dict[str, WordSpace], top: int = 10) -> List[int]:
    """Target-language token ids ranked by cosine to ``token_id``; ties go to the lower token id.

    Raises:
        DataError: the token is not in the source set, or a language has no word space.
    """
    for lang in (source, target):
        if lang not in spaces:
            raise DataError(f'No word space for language {lang}')
    query = spaces[source].vectors[spaces[source].row_of(token_id)]
    candidates = spaces[target]
    order = np.argsort(-(candidates.vectors @ query), kind='stable')[:top]
    return [int(t) for t in candidates.tokens[order]]
