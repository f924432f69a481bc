"""Generator-side truth about synthetic worlds. Only evaluation and the supervised upper bound read it."""
import logging
from collections import defaultdict
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, List, Set, Tuple, Union

from pivot_align.align import WordTranslationGT
from pivot_align.corpus.io import GROUND_TRUTH_FILE
from pivot_align.corpus.records import GroundTruth
from pivot_align.exceptions import DataError
from pivot_align.tokenizer import Vocabulary

_logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def read_ground_truth(path: PathLike) -> GroundTruth:
    """Read ``ground_truth.json`` from a world directory, or the file itself."""
    path = Path(path)
    if path.is_dir():
        path = path / GROUND_TRUTH_FILE
    try:
        return GroundTruth.parse_file(path)
    except (OSError, ValueError) as e:
        raise DataError(f'Cannot read ground truth {path}: {e}')


def supervised_pairs(ground_truth: GroundTruth, caption_ids: Iterable[str]) -> List[Tuple[str, str]]:
    """Caption pairs that describe the same concept set, i.e. translations or paraphrases of one another.

    Captions swapped in as noise are paired by what their text actually says.
    """
    by_content: Dict[Tuple[int, ...], List[str]] = defaultdict(list)
    for caption_id in sorted(caption_ids):
        concepts = ground_truth.caption_concepts.get(caption_id)
        if concepts is None:
            raise DataError(f'No ground truth for caption {caption_id}', offenders=[caption_id])
        by_content[tuple(sorted(concepts))].append(caption_id)
    pairs = [pair for ids in by_content.values() for pair in combinations(ids, 2)]
    _logger.info(f'{len(pairs)} supervised caption pairs over {len(by_content)} distinct contents')
    return pairs


def word_tokens(vocab: Vocabulary, word: str) -> List[int]:
    """Token ids of a single word, without the leading [SEQ]."""
    return vocab.encode(word)[1:]


def concept_index(ground_truth: GroundTruth, vocab: Vocabulary) -> Dict[str, Dict[int, Set[int]]]:
    """Per language, the concepts whose wordform contains each token id."""
    index: Dict[str, Dict[int, Set[int]]] = {}
    for lang, forms in ground_truth.word_map.items():
        tokens: Dict[int, Set[int]] = defaultdict(set)
        for concept, word in forms.items():
            for token in word_tokens(vocab, word):
                tokens[token].add(concept)
        index[lang] = dict(tokens)
    return index


def function_tokens(ground_truth: GroundTruth, vocab: Vocabulary) -> Dict[str, Set[int]]:
    """Per language, every token id occurring in a function word."""
    return {
        lang: {t for word in words for t in word_tokens(vocab, word)}
        for lang, words in ground_truth.function_words.items()
    }


def word_map_gt(ground_truth: GroundTruth, vocab: Vocabulary, languages: Iterable[str]) -> List[WordTranslationGT]:
    """Word translations straight from the generator: concepts whose wordform is one token in both languages."""
    single: Dict[str, Dict[int, int]] = {}
    for lang in languages:
        forms = ground_truth.word_map.get(lang)
        if forms is None:
            raise DataError(f'No word map for language {lang}', offenders=[lang])
        single[lang] = {}
        for concept, word in forms.items():
            tokens = word_tokens(vocab, word)
            if len(tokens) == 1:
                single[lang][concept] = tokens[0]
    gts = []
    for a, b in combinations(sorted(single), 2):
        shared = sorted(set(single[a]) & set(single[b]))
        gts.append(WordTranslationGT(a, b, sorted({(single[a][c], single[b][c]) for c in shared})))
    return gts
