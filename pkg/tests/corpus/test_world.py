import numpy as np
import pytest

from pivot_align.corpus import generate_world
from pivot_align.corpus.world import language_names
from pivot_align.exceptions import ConfigError


def test_generation_is_deterministic(tiny_spec, tiny_world):
    again = generate_world(tiny_spec)
    assert again.captions == tiny_world.captions
    assert again.images == tiny_world.images
    assert again.manifest == tiny_world.manifest
    assert again.ground_truth == tiny_world.ground_truth
    other = generate_world(tiny_spec.copy(update={'seed': 4}))
    assert other.captions != tiny_world.captions


def test_sizes_and_ids(tiny_world):
    assert len(tiny_world.captions) == 60 * 3
    assert len(tiny_world.images) == 60 * 3
    assert tiny_world.images.features.dtype == np.float32
    assert tiny_world.images.feat_dim == 8
    assert tiny_world.captions.languages() == language_names(3) == ['lang00', 'lang01', 'lang02']
    group = tiny_world.paraphrase_groups['grp-00007']
    assert group == {lang: f'cap-00007-{lang}' for lang in language_names(3)}
    assert tiny_world.captions['cap-00007-lang01'].image_id == 'img-00007-lang01'


def test_captions_name_their_concepts(tiny_world):
    truth = tiny_world.ground_truth
    for record in tiny_world.captions:
        words = record.text.split(' ')
        for concept in truth.caption_concepts[record.id]:
            assert truth.word_map[record.lang][concept] in words
        assert all(
            w in truth.function_words[record.lang] or w in truth.word_map[record.lang].values() for w in words
        )


def test_wordforms_are_distinct_within_a_language(tiny_world):
    for forms in tiny_world.word_map.values():
        assert len(set(forms.values())) == 12


@pytest.mark.parametrize('p_cognate', [0.0, 1.0])
def test_cognate_extremes(tiny_spec, p_cognate):
    world = generate_world(tiny_spec.copy(update={'p_cognate': p_cognate}))
    first = world.word_map['lang00']
    for lang in ('lang01', 'lang02'):
        shared = [c for c, w in world.word_map[lang].items() if first[c] == w]
        assert len(shared) == (12 if p_cognate else 0)


def test_noise_only_touches_training_captions(tiny_world, tiny_spec):
    corrupted = set(tiny_world.ground_truth.corrupted)
    assert corrupted <= set(tiny_world.manifest.train)
    assert generate_world(tiny_spec.copy(update={'p_noise': 0.0})).ground_truth.corrupted == []
    everything = generate_world(tiny_spec.copy(update={'p_noise': 1.0}))
    assert set(everything.ground_truth.corrupted) == set(everything.manifest.train)
    for cid in everything.manifest.val + everything.manifest.test:
        assert everything.ground_truth.caption_concepts[cid] == everything.ground_truth.image_concepts[
            everything.captions[cid].image_id
        ]


def test_noiseless_images_of_a_group_coincide(tiny_spec):
    world = generate_world(tiny_spec.copy(update={'noise_sigma': 0.0}))
    rows = world.images.rows([f'img-00003-{lang}' for lang in language_names(3)])
    assert np.allclose(rows, rows[0])


def test_held_out_languages(held_out_world):
    manifest = held_out_world.manifest
    assert manifest.held_out == ['lang03']
    assert manifest.languages == ['lang00', 'lang01', 'lang02']
    assert all(held_out_world.captions[cid].lang != 'lang03' for cid in manifest.train + manifest.val)
    assert {held_out_world.captions[cid].lang for cid in manifest.adapt} == {'lang03'}
    assert len(manifest.adapt) == len(manifest.train)
    assert all(sorted(group) == language_names(4) for group in manifest.test_groups)


@pytest.mark.parametrize(
    'update, message',
    [
        ({'n_concepts': 2, 'scene_size': (1, 3)}, 'scene_size'),
        ({'topics': 20}, 'topics'),
        ({'families': 4}, 'families'),
    ],
)
def test_infeasible_specs(tiny_spec, update, message):
    with pytest.raises(ConfigError, match=message):
        generate_world(tiny_spec.copy(update=update))
