import pytest

from pivot_align.config import EvalConfig, ModelConfig, RunConfig, TrainConfig, WorldSpec
from pivot_align.corpus import World, generate_world
from pivot_align.model import DualEncoder
from pivot_align.tokenizer import Vocabulary, train_bpe
from pivot_align.trainer import TrainingData


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False, help='run end-to-end training runs')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def tiny_spec() -> WorldSpec:
    return WorldSpec(
        n_concepts=12,
        n_languages=3,
        feat_dim=8,
        n_pairs=60,
        mean_length=4.0,
        split_ratios=(0.6, 0.2, 0.2),
        seed=3,
    )


@pytest.fixture(scope='session')
def tiny_world(tiny_spec) -> World:
    return generate_world(tiny_spec)


@pytest.fixture(scope='session')
def held_out_world(tiny_spec) -> World:
    """Like ``tiny_world`` with one extra language kept out of training."""
    return generate_world(tiny_spec.copy(update={'held_out': 1}))


@pytest.fixture(scope='session')
def tiny_vocab(tiny_world, held_out_world) -> Vocabulary:
    texts = [r.text for r in tiny_world.captions] + [r.text for r in held_out_world.captions]
    return train_bpe(texts, 150)


@pytest.fixture
def tiny_model_config(tiny_vocab) -> ModelConfig:
    return ModelConfig(
        layers=1,
        heads=2,
        hidden=8,
        head_dim=4,
        max_len=32,
        vocab_size=tiny_vocab.size,
        image_feat_dim=8,
        precision='float64',
        seed=0,
    )


@pytest.fixture
def tiny_model(tiny_model_config) -> DualEncoder:
    return DualEncoder(tiny_model_config)


@pytest.fixture
def tiny_run_config(tiny_model_config, tiny_spec) -> RunConfig:
    return RunConfig(
        world=tiny_spec,
        model=tiny_model_config,
        train=TrainConfig(batch_size=12, epochs=2, lr=1e-2, val_queries=12, aug_sigma=0.05),
        eval=EvalConfig(n_queries=12, pairs_per_language=10, cluster_k=4, cluster_restarts=2, probe_epochs=2),
    )


def training_data(world: World, vocab: Vocabulary) -> TrainingData:
    """Tokenized train and validation captions of ``world``."""
    manifest = world.manifest
    return TrainingData(
        train=world.captions.subset(manifest.train).tokenized(vocab.encode),
        images=world.images,
        val=world.captions.subset(manifest.val).tokenized(vocab.encode),
        val_groups=manifest.val_groups,
    )


@pytest.fixture
def tiny_data(tiny_world, tiny_vocab) -> TrainingData:
    return training_data(tiny_world, tiny_vocab)
