"""Sentence-correspondence probe: do a sentence's two halves belong together?

Half of each language's sentences keep their own second half; the other half get the second half of another
sentence of the same language, chosen to have the same length where possible. A single one-head transformer layer
and a two-way head are trained on the frozen token representations of the first half of the languages (in
alphabetical order), then scored on held-out sentences of those languages and on the remaining, unseen ones.
"""
import logging
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from pivot_align.config import EvalConfig
from pivot_align.corpus.records import CaptionTable
from pivot_align.diffcore import ParamStore, Tape, Tensor, adam_step, as_tensor, backward, ops
from pivot_align.evaluation.report import RetrievalReport
from pivot_align.exceptions import DataError
from pivot_align.model.dual import DualEncoder
from pivot_align.model.text import pad_batch, self_attention
from pivot_align.tokenizer import SEQ_ID

_logger = logging.getLogger(__name__)

CHANCE = 0.5
HELD_OUT_SHARE = 0.2


class ProbeSample(NamedTuple):
    tokens: Tuple[int, ...]
    label: int
    lang: str


def _halves(tokens: Sequence[int]) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    body = tuple(tokens[1:])
    cut = len(body) // 2
    return body[:cut], body[cut:]


def build_probe_task(captions: CaptionTable, seed: int = 0) -> List[ProbeSample]:
    """Balanced swapped/intact samples per language; sentences too short to split are left out."""
    rng = np.random.default_rng(seed)
    samples: List[ProbeSample] = []
    for lang in captions.languages():
        records = [r for r in captions.by_language(lang) if r.tokens is not None and len(r.tokens) >= 3]
        if len(records) < 2:
            _logger.warning(f'{lang}: fewer than 2 splittable sentences, left out of the probe')
            continue
        order = rng.permutation(len(records))
        usable = len(order) - len(order) % 2
        halves = [_halves(r.tokens) for r in records]  # type: ignore[arg-type]
        for position, row in enumerate(order[:usable]):
            first, second = halves[row]
            if position < usable // 2:
                samples.append(ProbeSample((SEQ_ID,) + first + second, 1, lang))
                continue
            others = [i for i in range(len(records)) if i != row]
            same = [i for i in others if len(halves[i][1]) == len(second)]
            pool = same or sorted(others, key=lambda i: (abs(len(halves[i][1]) - len(second)), i))[:1]
            donor = pool[int(rng.integers(len(pool)))]
            samples.append(ProbeSample((SEQ_ID,) + first + halves[donor][1], 0, lang))
    return samples


def relative_decrease(acc_seen: float, acc_unseen: float) -> float:
    """(acc_seen - acc_unseen) / (acc_seen - chance); NaN when the seen accuracy is exactly chance."""
    if acc_seen == CHANCE:
        return float('nan')
    return (acc_seen - acc_unseen) / (acc_seen - CHANCE)


class ProbeHead:
    """One pre-norm transformer layer with a single head, then a two-way linear head on the [SEQ] position."""

    def __init__(self, width: int, seed: int = 0, dtype=np.float64) -> None:
        rng = np.random.default_rng(seed)
        self.store = ParamStore()

        def linear(name: str, fan_in: int, fan_out: int) -> None:
            self.store.add(f'{name}.w', rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)).astype(dtype))
            self.store.add(f'{name}.b', np.zeros(fan_out, dtype=dtype))

        for norm in ('ln1', 'ln2'):
            self.store.add(f'{norm}.g', np.ones(width, dtype=dtype))
            self.store.add(f'{norm}.b', np.zeros(width, dtype=dtype))
        for proj in ('q', 'k', 'v', 'o'):
            linear(f'attn.{proj}', width, width)
        linear('ff1', width, 4 * width)
        linear('ff2', 4 * width, width)
        linear('out', width, 2)

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return x @ self.store[f'{name}.w'] + self.store[f'{name}.b']

    def logits(self, hiddens: np.ndarray, mask: np.ndarray) -> Tensor:
        """Two-way logits for a (batch, length, width) block of frozen token representations."""
        h = as_tensor(hiddens)
        a = self_attention(
            ops.layer_norm(h, self.store['ln1.g'], self.store['ln1.b']),
            self.store['attn.q.w'],
            self.store['attn.k.w'],
            self.store['attn.v.w'],
            heads=1,
            mask=mask,
            bq=self.store['attn.q.b'],
            bk=self.store['attn.k.b'],
            bv=self.store['attn.v.b'],
        )
        h = h + self._linear(a, 'attn.o')
        normed = ops.layer_norm(h, self.store['ln2.g'], self.store['ln2.b'])
        h = h + self._linear(ops.gelu(self._linear(normed, 'ff1')), 'ff2')
        return self._linear(ops.select(h, 0, axis=1), 'out')

    def predict(self, hiddens: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Predicted labels."""
        return np.argmax(self.logits(hiddens, mask).data, axis=1)


def _representations(model: DualEncoder, samples: Sequence[ProbeSample]) -> Tuple[np.ndarray, np.ndarray]:
    ids, mask = pad_batch([s.tokens for s in samples], model.config.max_len)
    return model.encode_text(ids, mask).hiddens.data, mask


def _accuracy(model: DualEncoder, head: ProbeHead, samples: Sequence[ProbeSample], batch: int) -> float:
    if not samples:
        return float('nan')
    correct = 0
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        hiddens, mask = _representations(model, chunk)
        correct += int(np.sum(head.predict(hiddens, mask) == np.array([s.label for s in chunk])))
    return correct / len(samples)


def probe_correspondence(model: DualEncoder, captions: CaptionTable, config: EvalConfig) -> RetrievalReport:
    """Train the probe on the alphabetically first half of the languages and score seen and unseen languages.

    Raises:
        DataError: fewer than two languages have usable sentences, or the seen ones leave nothing to train on.
    """
    samples = build_probe_task(captions, config.seed)
    languages = sorted({s.lang for s in samples})
    if len(languages) < 2:
        raise DataError(f'The correspondence probe needs at least 2 languages, got {len(languages)}')
    seen = languages[: len(languages) // 2]
    rng = np.random.default_rng(config.seed)
    seen_samples = [s for s in samples if s.lang in seen]
    unseen_samples = [s for s in samples if s.lang not in seen]
    order = rng.permutation(len(seen_samples))
    cut = len(order) - max(1, int(round(HELD_OUT_SHARE * len(order))))
    train_samples = [seen_samples[i] for i in order[:cut]]
    held_out = [seen_samples[i] for i in order[cut:]]
    if not train_samples:
        raise DataError(f'Too few probe samples in the seen languages {seen} to train on')

    head = ProbeHead(model.config.hidden, config.seed, np.dtype(model.config.precision))
    for epoch in range(config.probe_epochs):
        shuffled = [train_samples[i] for i in rng.permutation(len(train_samples))]
        for start in range(0, len(shuffled), config.probe_batch):
            chunk = shuffled[start : start + config.probe_batch]
            hiddens, mask = _representations(model, chunk)
            labels = np.array([s.label for s in chunk])
            head.store.zero_grad()
            with Tape():
                loss = -ops.sum(ops.pick(ops.log_softmax(head.logits(hiddens, mask), axis=1), labels))
                backward(loss)
            adam_step(head.store, config.probe_lr)
        _logger.debug(f'Probe epoch {epoch + 1}: last batch loss {loss.item():.4f}')

    acc_seen = _accuracy(model, head, held_out, config.probe_batch)
    acc_unseen = _accuracy(model, head, unseen_samples, config.probe_batch)
    metrics: Dict[str, float] = {
        'acc_seen': acc_seen,
        'acc_unseen': acc_unseen,
        'relative_decrease': relative_decrease(acc_seen, acc_unseen),
    }
    _logger.info(f'Correspondence probe: {metrics}')
    return RetrievalReport.build(
        'probe',
        metrics,
        languages,
        meta={
            'seen': seen,
            'unseen': languages[len(seen) :],
            'train_samples': len(train_samples),
            'held_out_samples': len(held_out),
            'unseen_samples': len(unseen_samples),
            'positive_share': float(np.mean([s.label for s in samples])),
            'seed': config.seed,
        },
    )
