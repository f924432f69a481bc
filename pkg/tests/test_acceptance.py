"""End-to-end runs on the reference synthetic world. Skipped unless pytest is given ``--run-slow``."""
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import pytest

from pivot_align import align
from pivot_align.config import RunConfig, WorldSpec
from pivot_align.corpus import CaptionTable, World, generate_world
from pivot_align.evaluation import (
    alpha_gap,
    gt_precision,
    sentence_retrieval_eval,
    supervised_pairs,
    word_retrieval_eval,
)
from pivot_align.evaluation.retrieval import sentence_retrieval_matrix
from pivot_align.model import DualEncoder
from pivot_align.tokenizer import Vocabulary, train_bpe
from pivot_align.trainer import TrainingData, adapt_language, build_anchor_cache, train

pytestmark = [pytest.mark.slow, pytest.mark.timeout(3 * 3600)]

QUERIES = 200
VARIANTS = {
    'full': {},
    'no_lt': {'loss': {'use_lt': False}},
    'no_lv': {'loss': {'use_lv': False}},
    'no_lx': {'loss': {'use_lx': False}},
    'supervised': {'train': {'supervised_alpha': True}},
}


class Trained(NamedTuple):
    model: DualEncoder
    world: World
    vocab: Vocabulary
    config: RunConfig


@lru_cache(maxsize=None)
def reference_world(seed: int, p_noise: float = 0.1, held_out: int = 0):
    spec = WorldSpec(seed=seed, p_noise=p_noise, held_out=held_out)
    world = generate_world(spec)
    manifest = world.manifest
    vocab = train_bpe([r.text for r in world.captions.subset(manifest.train + manifest.adapt)], 2000)
    return spec, world, vocab


@lru_cache(maxsize=None)
def trained(seed: int, variant: str = 'full', p_noise: float = 0.1, held_out: int = 0) -> Trained:
    spec, world, vocab = reference_world(seed, p_noise, held_out)
    raw = {'world': spec.dict(), 'train': {'seed': seed}, 'model': {'seed': seed}}
    for section, values in VARIANTS[variant].items():
        raw.setdefault(section, {}).update(values)
    config = RunConfig.parse_obj(raw)
    config.model.vocab_size = vocab.size
    config.model.image_feat_dim = world.images.feat_dim
    manifest = world.manifest
    captions = world.captions.tokenized(vocab.encode)
    data = TrainingData(
        captions.subset(manifest.train), world.images, captions.subset(manifest.val), manifest.val_groups
    )
    pairs = supervised_pairs(world.ground_truth, manifest.train) if variant == 'supervised' else None
    model = train(config, data, DualEncoder(config.model), supervised_pairs=pairs).model
    return Trained(model, world, vocab, config)


def _test_captions(run: Trained) -> CaptionTable:
    return run.world.captions.subset(run.world.manifest.test).tokenized(run.vocab.encode)


def sentence_accuracy(run: Trained, languages=None):
    report = sentence_retrieval_eval(
        run.model, _test_captions(run), run.world.manifest.test_groups, QUERIES, languages=languages
    )
    return report.metrics['accuracy'], report.metrics['chance'], report


def test_chance_calibration():
    languages, groups = 52, 100
    world = generate_world(WorldSpec(n_languages=languages, n_pairs=1000, seed=11))
    manifest = world.manifest
    vocab = train_bpe([r.text for r in world.captions.subset(manifest.train)], 2000)
    config = RunConfig.parse_obj({'model': {'vocab_size': vocab.size, 'image_feat_dim': world.images.feat_dim}})
    captions = world.captions.subset(manifest.test).tokenized(vocab.encode)
    report = sentence_retrieval_eval(DualEncoder(config.model), captions, manifest.test_groups, groups)
    assert report.metrics['chance'] == pytest.approx((languages - 1) / (groups * languages - 1))

    rng = np.random.default_rng(0)
    draws = []
    for _ in range(200):
        random = rng.standard_normal((groups, languages, config.model.head_dim))
        draws.append(sentence_retrieval_matrix(random / np.linalg.norm(random, axis=2, keepdims=True))[0].mean())
    low, high = np.percentile(draws, [2.5, 97.5])
    assert low <= report.metrics['accuracy'] <= high


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_learning_signal(seed):
    accuracy, chance, _ = sentence_accuracy(trained(seed))
    assert accuracy >= 5 * chance


def test_ablation_direction():
    full, chance, _ = sentence_accuracy(trained(0))
    assert sentence_accuracy(trained(0, 'no_lv'))[0] < 2 * chance
    assert sentence_accuracy(trained(0, 'no_lx'))[0] < 2 * chance
    without_lt = sentence_accuracy(trained(0, 'no_lt'))[0]
    assert 2 * chance <= without_lt <= full
    assert sentence_accuracy(trained(0, 'supervised'))[0] >= full


def test_mined_pairs_follow_the_word_map():
    _, world, vocab = reference_world(0)
    manifest = world.manifest
    captions = world.captions.subset(manifest.test).tokenized(vocab.encode)
    gts = align.mine_all_pairs(captions, manifest.test_groups, manifest.languages, vocab)
    assert gt_precision(gts, world.ground_truth, vocab).metrics['precision'] >= 0.9


def test_procrustes_does_not_hurt_word_retrieval():
    run = trained(0)
    manifest = run.world.manifest
    captions = run.world.captions.tokenized(run.vocab.encode)
    gts = align.mine_all_pairs(captions.subset(manifest.test), manifest.test_groups, manifest.languages, run.vocab)
    token_sets = align.language_token_sets(captions.subset(manifest.train), run.vocab)
    embeddings = run.model.word_embeddings()
    maps = align.multi_procrustes(align.procrustes_inputs(embeddings, token_sets))

    before = word_retrieval_eval(align.word_spaces(embeddings, token_sets), gts).metrics['recall@10']
    after = word_retrieval_eval(align.word_spaces(embeddings, token_sets, maps), gts).metrics['recall@10']
    assert after >= before


def _train_gap(run: Trained) -> float:
    manifest = run.world.manifest
    captions = run.world.captions.subset(manifest.train).tokenized(run.vocab.encode)
    report = alpha_gap(run.model, captions, run.world.images, run.world.ground_truth.corrupted, batch_size=64)
    return report.metrics['gap']


def test_noise_gating():
    clean, noisy = trained(0, p_noise=0.0), trained(0, p_noise=0.5)
    assert clean.world.ground_truth.corrupted == []
    assert noisy.world.ground_truth.corrupted
    assert _train_gap(clean) < _train_gap(noisy)
    assert _train_gap(noisy) > 0


def test_adapted_language_beats_chance():
    run = trained(0, held_out=1)
    manifest = run.world.manifest
    new = manifest.held_out[0]
    captions = run.world.captions.tokenized(run.vocab.encode)
    cache = build_anchor_cache(run.model, captions.subset(manifest.train), run.world.images, 2048)
    adapt_language(run.model, cache, captions.subset(manifest.adapt), run.world.images, run.config)

    languages = sorted(manifest.test_groups[0])
    _, chance, report = sentence_accuracy(run, languages)
    row = report.matrix_array()[languages.index(new)]
    assert np.mean(np.delete(row, languages.index(new))) >= 5 * chance
