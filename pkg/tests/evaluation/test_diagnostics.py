import numpy as np
import pytest

from pivot_align.align import WordTranslationGT
from pivot_align.corpus import CaptionTable, GroundTruth
from pivot_align.evaluation.diagnostics import alpha_gap, gt_precision
from pivot_align.evaluation.ground_truth import word_tokens
from pivot_align.exceptions import DataError
from pivot_align.tokenizer import train_bpe


@pytest.fixture(scope='module')
def hand_world():
    truth = GroundTruth(
        word_map={'a': {0: 'ka', 1: 'lo'}, 'b': {0: 'mi', 1: 'te'}},
        function_words={'a': ['zu'], 'b': ['xy']},
        families=[['a', 'b']],
        topics=[],
        image_concepts={},
        caption_concepts={},
        corrupted=[],
        paraphrase_groups={},
    )
    vocab = train_bpe(['ka lo zu', 'mi te xy'] * 5, 60)
    return truth, vocab


def test_gt_precision(hand_world):
    truth, vocab = hand_world
    ka, mi, te, zu = (word_tokens(vocab, w)[0] for w in ('ka', 'mi', 'te', 'zu'))
    report = gt_precision([WordTranslationGT('a', 'b', [(ka, mi), (ka, te), (zu, mi)])], truth, vocab)
    assert report.metrics['precision'] == pytest.approx(1 / 3)
    assert report.metrics['function_word_share'] == pytest.approx(1 / 3)
    assert report.meta['pairs'] == 3
    assert report.meta['per_language_pair'] == {'a-b': pytest.approx(1 / 3)}


def test_gt_precision_needs_pairs(hand_world):
    truth, vocab = hand_world
    with pytest.raises(DataError, match='No mined word pairs'):
        gt_precision([WordTranslationGT('a', 'b', [])], truth, vocab)


def test_alpha_gap(tiny_model, tiny_data):
    corrupted = tiny_data.train.ids()[:20]
    report = alpha_gap(tiny_model, tiny_data.train, tiny_data.images, corrupted, batch_size=12)
    metrics = report.metrics
    assert metrics['gap'] == pytest.approx(metrics['alpha_clean'] - metrics['alpha_noisy'])
    assert np.isfinite(metrics['alpha_clean']) and np.isfinite(metrics['alpha_noisy'])
    assert report.meta['noisy'] == 20


def test_alpha_gap_is_zero_without_noise(tiny_model, tiny_data):
    report = alpha_gap(tiny_model, tiny_data.train, tiny_data.images, [], batch_size=12)
    assert report.metrics['gap'] == 0.0
    assert 'alpha_clean' in report.metrics and 'alpha_noisy' not in report.metrics


def test_alpha_gap_needs_two_captions(tiny_model, tiny_data):
    single = CaptionTable(list(tiny_data.train)[:1])
    with pytest.raises(DataError, match='at least two captions'):
        alpha_gap(tiny_model, single, tiny_data.images, [])
