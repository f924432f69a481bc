"""Byte-pair encoding shared by every language.

Text is split into words on single spaces; each word becomes its codepoints followed by an end-of-word symbol, and
merges never cross a word boundary. Because every word (including empty ones produced by repeated spaces) ends
with the marker, :meth:`Vocabulary.decode` reproduces the input exactly for text over the training alphabet.
"""
import heapq
import json
import logging
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pivot_align.exceptions import ConfigError, DataError

_logger = logging.getLogger(__name__)

VOCAB_FILE_VERSION = 1
END_OF_WORD = '▁'
SEQ, MASK, PAD, UNK = '[SEQ]', '[MASK]', '[PAD]', '[UNK]'
SPECIALS = (SEQ, MASK, PAD, UNK)
SEQ_ID, MASK_ID, PAD_ID, UNK_ID = 0, 1, 2, 3

Pair = Tuple[str, str]


def _split_words(text: str) -> List[str]:
    return text.split(' ')


class Vocabulary:
    """Immutable BPE vocabulary: alphabet, ordered merges and the dense token id space they define."""

    def __init__(self, alphabet: Iterable[str], merges: Sequence[Pair], target_size: Optional[int] = None) -> None:
        self.alphabet: Tuple[str, ...] = tuple(sorted(set(alphabet)))
        for symbol in self.alphabet:
            if len(symbol) != 1 or symbol in (' ', END_OF_WORD):
                raise DataError(f'Invalid alphabet symbol {symbol!r}')
        self.merges: Tuple[Pair, ...] = tuple((left, right) for left, right in merges)
        self.target_size = target_size

        self._tokens: List[str] = list(SPECIALS)
        self._ids: Dict[str, int] = {token: i for i, token in enumerate(SPECIALS)}
        for symbol in self.alphabet + (END_OF_WORD,):
            self._register(symbol)
        self._ranks: Dict[Pair, int] = {}
        for rank, (left, right) in enumerate(self.merges):
            if left not in self._ids or right not in self._ids:
                raise DataError(f'Merge {rank} ({left!r}, {right!r}) refers to an unknown token')
            self._ranks.setdefault((left, right), rank)
            self._register(left + right)
        self._alphabet_set = frozenset(self.alphabet)
        self._word_cache: Dict[str, Tuple[int, ...]] = {}

    def _register(self, token: str) -> None:
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)

    @property
    def size(self) -> int:
        """Number of distinct token ids."""
        return len(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def token(self, token_id: int) -> str:
        """Internal token string for an id (end-of-word marker included)."""
        if not 0 <= token_id < len(self._tokens):
            raise DataError(f'Token id {token_id} out of range [0, {len(self._tokens)})', offenders=[token_id])
        return self._tokens[token_id]

    def id_of(self, token: str) -> int:
        """Id of an internal token string."""
        try:
            return self._ids[token]
        except KeyError:
            raise DataError(f'Unknown token {token!r}', offenders=[token])

    def is_word_token(self, token_id: int) -> bool:
        """Whether a token can stand for a word: not special, and carrying at least one alphanumeric character."""
        if token_id < len(SPECIALS):
            return False
        return any(ch.isalnum() for ch in self.token(token_id))

    def _encode_word(self, word: str) -> Tuple[int, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = list(word) + [END_OF_WORD]
        while len(symbols) > 1:
            best_rank, best_pair = None, None
            for pair in zip(symbols, symbols[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pair = rank, pair
            if best_pair is None:
                break
            merged, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best_pair:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        known = self._alphabet_set | {END_OF_WORD}
        ids = tuple(self._ids[s] if s in self._ids and (len(s) != 1 or s in known) else UNK_ID for s in symbols)
        self._word_cache[word] = ids
        return ids

    def encode(self, text: str) -> List[int]:
        """Token ids for ``text``, starting with [SEQ]; characters outside the alphabet become [UNK]."""
        ids = [SEQ_ID]
        for word in _split_words(text):
            ids.extend(self._encode_word(word))
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        """Inverse of :meth:`encode` for text over the training alphabet; [SEQ] and [PAD] are dropped."""
        parts = []
        for token_id in ids:
            token = self.token(int(token_id))
            if token_id in (SEQ_ID, PAD_ID):
                continue
            parts.append(token if token_id < len(SPECIALS) else token.replace(END_OF_WORD, ' '))
        text = ''.join(parts)
        return text[:-1] if text.endswith(' ') else text

    def count_tokens(self, sentences: Iterable[str]) -> Counter:
        """Token frequency table over ``sentences`` (the leading [SEQ] is not counted)."""
        counts: Counter = Counter()
        for sentence in sentences:
            counts.update(self.encode(sentence)[1:])
        return counts

    def json(self) -> str:
        """Serialise to the vocabulary file format."""
        return json.dumps(
            {
                'version': VOCAB_FILE_VERSION,
                'specials': list(SPECIALS),
                'alphabet': list(self.alphabet),
                'merges': [list(m) for m in self.merges],
                'size': self.size,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, data: str) -> 'Vocabulary':
        """Rebuild a vocabulary from :meth:`json` output."""
        try:
            raw = json.loads(data)
        except json.JSONDecodeError as e:
            raise DataError(f'Vocabulary file is not valid JSON: {e}')
        if raw.get('version') != VOCAB_FILE_VERSION:
            raise DataError(f'Unsupported vocabulary file version {raw.get("version")}')
        if tuple(raw.get('specials', ())) != SPECIALS:
            raise DataError(f'Unexpected special tokens {raw.get("specials")}')
        vocab = cls(raw['alphabet'], [tuple(m) for m in raw['merges']])  # type: ignore[misc]
        if vocab.size != raw['size']:
            raise DataError(f'Vocabulary declares size {raw["size"]} but rebuilds to {vocab.size}')
        return vocab

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and (self.alphabet, self.merges) == (other.alphabet, other.merges)

    def __repr__(self) -> str:
        return f'Vocabulary(size={self.size}, alphabet={len(self.alphabet)}, merges={len(self.merges)})'


def train_bpe(corpus: Iterable[str], target_size: int = 2000, min_pair_count: int = 2) -> Vocabulary:
    """Learn merges greedily, most frequent adjacent pair first, until ``target_size`` tokens exist.

    Equal counts are broken by the lexicographically smallest merged string (then by the left symbol). Training
    stops early once no pair occurs at least ``min_pair_count`` times.

    Raises:
        DataError: the corpus is empty.
        ConfigError: ``target_size`` cannot hold the specials and the base alphabet.
    """
    word_counts: Counter = Counter()
    n_sentences = 0
    for sentence in corpus:
        n_sentences += 1
        word_counts.update(_split_words(sentence))
    if n_sentences == 0:
        raise DataError('Cannot train a vocabulary on an empty corpus')

    alphabet = sorted({ch for word in word_counts for ch in word} - {END_OF_WORD})
    base = len(SPECIALS) + len(alphabet) + 1
    if target_size < base:
        raise ConfigError(f'target_size {target_size} is below specials + base alphabet ({base})')

    words: List[List[str]] = []
    freqs: List[int] = []
    for word, count in word_counts.items():
        symbols = [ch for ch in word if ch != END_OF_WORD] + [END_OF_WORD]
        words.append(symbols)
        freqs.append(count)

    pair_counts: Counter = Counter()
    where: Dict[Pair, set] = {}
    for index, symbols in enumerate(words):
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += freqs[index]
            where.setdefault(pair, set()).add(index)

    heap = [(-count, left + right, left, right) for (left, right), count in pair_counts.items()]
    heapq.heapify(heap)

    merges: List[Pair] = []
    tokens = set(SPECIALS) | set(alphabet) | {END_OF_WORD}
    while len(tokens) < target_size and heap:
        neg_count, merged_str, left, right = heapq.heappop(heap)
        pair = (left, right)
        if pair_counts.get(pair, 0) != -neg_count:
            continue
        if -neg_count < min_pair_count:
            break
        merges.append(pair)
        tokens.add(merged_str)
        touched: Counter = Counter()
        for index in sorted(where.pop(pair, ())):
            symbols = words[index]
            freq = freqs[index]
            for old in zip(symbols, symbols[1:]):
                pair_counts[old] -= freq
                touched[old] += 0
            merged, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(merged_str)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            words[index] = merged
            for new in zip(merged, merged[1:]):
                pair_counts[new] += freq
                where.setdefault(new, set()).add(index)
                touched[new] += 0
        pair_counts.pop(pair, None)
        for changed in touched:
            count = pair_counts.get(changed, 0)
            if count <= 0:
                pair_counts.pop(changed, None)
                where.pop(changed, None)
            elif changed != pair:
                heapq.heappush(heap, (-count, changed[0] + changed[1], changed[0], changed[1]))

    vocab = Vocabulary(alphabet, merges, target_size=target_size)
    _logger.info(f'Trained BPE on {n_sentences} sentences: {len(merges)} merges, {vocab.size} tokens')
    return vocab
