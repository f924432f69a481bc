import numpy as np
import pytest
from scipy.stats import ortho_group

from pivot_align.align import (
    LanguageTokenSet,
    ProcrustesMaps,
    WordTranslationGT,
    aligned_sequences,
    language_token_sets,
    mine_all_pairs,
    mine_word_gt,
    multi_procrustes,
    mutual_knn_anchors,
    procrustes_inputs,
    procrustes_solve,
    read_maps,
    read_word_gt,
    translate_word,
    word_spaces,
    write_maps,
    write_word_gt,
)
from pivot_align.corpus import CaptionRecord, CaptionTable
from pivot_align.exceptions import ConfigError, DataError, ShapeError
from pivot_align.model import write_arrays
from pivot_align.tokenizer import SEQ_ID

X, Y, Z, P, Q, R = 10, 11, 12, 20, 21, 22
# "x y" / "p q", "x z" / "p r", "y z" / "q r" with x-p, y-q, z-r
HAND_ALIGNED = [
    ([SEQ_ID, X, Y], [SEQ_ID, P, Q]),
    ([SEQ_ID, X, Z], [SEQ_ID, P, R]),
    ([SEQ_ID, Y, Z], [SEQ_ID, Q, R]),
]


def _rows(n, d, seed):
    return np.random.default_rng(seed).standard_normal((n, d))


def _unit(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_hand_tfidf_mining():
    gt = mine_word_gt(HAND_ALIGNED, 'a', 'b', top=1)
    assert gt == WordTranslationGT('a', 'b', [(X, P), (Y, Q), (Z, R)])
    assert gt.flipped() == WordTranslationGT('b', 'a', [(P, X), (Q, Y), (R, Z)])


def test_mining_needs_sentences():
    with pytest.raises(DataError, match='No aligned sentences between a and b'):
        mine_word_gt([], 'a', 'b')


def test_mining_respects_the_token_filter():
    gt = mine_word_gt(HAND_ALIGNED, 'a', 'b', top=1, keep=lambda t: t not in (X, P))
    assert gt.pairs == [(Y, Q), (Z, R)]


def test_aligned_sequences():
    records = [
        CaptionRecord(id='a0', lang='a', text='x y', image_id='i0', tokens=(SEQ_ID, X, Y)),
        CaptionRecord(id='b0', lang='b', text='p q', image_id='i1', tokens=(SEQ_ID, P, Q)),
        CaptionRecord(id='a1', lang='a', text='x z', image_id='i2', tokens=(SEQ_ID, X, Z)),
        CaptionRecord(id='c1', lang='c', text='??', image_id='i3'),
    ]
    captions = CaptionTable(records)
    groups = [{'a': 'a0', 'b': 'b0'}, {'a': 'a1', 'c': 'c1'}]
    assert aligned_sequences(captions, groups, 'a', 'b') == [((SEQ_ID, X, Y), (SEQ_ID, P, Q))]
    with pytest.raises(DataError, match='not tokenized'):
        aligned_sequences(captions, groups, 'a', 'c')


def test_language_token_sets():
    records = [
        CaptionRecord(id=f'c{i}', lang='a', text='', image_id='i', tokens=(SEQ_ID, X, X, Y if i else Z))
        for i in range(3)
    ]
    sets = language_token_sets(CaptionTable(records), min_count=2)
    assert sets['a'].counts == {X: 6, Y: 2}
    assert sets['a'].tokens.tolist() == [X, Y]
    assert X in sets['a'] and SEQ_ID not in sets['a']
    raw = CaptionTable([CaptionRecord(id='r', lang='a', text='x', image_id='i')])
    with pytest.raises(DataError, match='no vocabulary'):
        language_token_sets(raw)


def test_world_token_sets_and_mining(tiny_world, tiny_vocab):
    captions = tiny_world.captions.tokenized(tiny_vocab.encode)
    sets = language_token_sets(captions, tiny_vocab, min_count=3)
    assert sorted(sets) == ['lang00', 'lang01', 'lang02']
    assert all(tiny_vocab.is_word_token(t) for s in sets.values() for t in s.counts)
    groups = tiny_world.manifest.test_groups
    serial = mine_all_pairs(captions, groups, ['lang02', 'lang00', 'lang01'], tiny_vocab, top=3)
    pairs = [(gt.lang_a, gt.lang_b) for gt in serial]
    assert pairs == [('lang00', 'lang01'), ('lang00', 'lang02'), ('lang01', 'lang02')]
    assert mine_all_pairs(captions, groups, ['lang00', 'lang01', 'lang02'], tiny_vocab, top=3, threads=3) == serial


def test_word_gt_file(tmp_path, tiny_vocab):
    gts = [WordTranslationGT('lang00', 'lang01', [(10, 11), (12, 13)])]
    path = tmp_path / 'word_gt.json'
    write_word_gt(path, gts, tiny_vocab)
    assert read_word_gt(path, tiny_vocab) == gts
    path.write_text('{')
    with pytest.raises(DataError, match='Cannot read word ground truth'):
        read_word_gt(path, tiny_vocab)


def test_mutual_knn_matches_brute_force():
    a, b = _unit(_rows(12, 4, 0)), _unit(_rows(9, 4, 1))
    k = 3
    scores = a @ b.T
    expected = []
    for i in range(12):
        for j in range(9):
            b_near_a = j in np.argsort(-scores[i], kind='stable')[:k]
            a_near_b = i in np.argsort(-scores[:, j], kind='stable')[:k]
            if b_near_a and a_near_b:
                expected.append((i, j))
    assert mutual_knn_anchors(a, b, k) == expected


def test_mutual_knn_recovers_a_rotated_permutation():
    x = _rows(30, 8, 2)
    rotation = ortho_group.rvs(8, random_state=3)
    perm = np.random.default_rng(4).permutation(30)
    anchors = mutual_knn_anchors(x @ rotation, x[perm] @ rotation, k=1)
    inverse = np.argsort(perm)
    assert anchors == [(i, int(inverse[i])) for i in range(30)]


def test_mutual_knn_errors():
    with pytest.raises(ConfigError, match='k must be'):
        mutual_knn_anchors(np.eye(2), np.eye(2), k=0)
    with pytest.raises(DataError, match='non-empty'):
        mutual_knn_anchors(np.zeros((0, 2)), np.eye(2))
    with pytest.raises(ShapeError):
        mutual_knn_anchors(np.eye(2), np.eye(3))


@pytest.mark.parametrize('dim', [8, 32])
def test_procrustes_recovers_a_rotation(dim):
    x = _rows(100, dim, dim)
    rotation = ortho_group.rvs(dim, random_state=dim)
    w = procrustes_solve(x, x @ rotation)
    assert np.linalg.norm(w - rotation) < 1e-6
    assert np.allclose(w.T @ w, np.eye(dim), atol=1e-8)


def test_procrustes_shape_error():
    with pytest.raises(ShapeError, match='procrustes_solve'):
        procrustes_solve(np.eye(3), np.eye(3)[:2])


def test_multi_procrustes_aligns_rotated_copies():
    x = _rows(60, 8, 7)
    r1, r2 = ortho_group.rvs(8, random_state=1), ortho_group.rvs(8, random_state=2)
    maps = multi_procrustes({'a': x, 'b': x @ r1, 'c': x @ r2}, k=1, init='profile')
    assert maps.languages == ['a', 'b', 'c']
    assert np.array_equal(maps.maps['a'], np.eye(8))
    assert np.linalg.norm(maps.maps['b'] - r1.T) < 1e-5
    assert np.linalg.norm(maps.maps['c'] - r2.T) < 1e-5
    assert maps.anchors['b'] == [(i, i) for i in range(60)]
    assert maps.objective[-1] == pytest.approx(0.0, abs=1e-12)
    assert maps.rounds <= 3


def test_multi_procrustes_errors():
    with pytest.raises(ConfigError, match='at least 2 languages'):
        multi_procrustes({'a': np.eye(3)})
    with pytest.raises(ConfigError, match='init'):
        multi_procrustes({'a': np.eye(3), 'b': np.eye(3)}, init='random')


def test_maps_file(tmp_path):
    turn = np.array([[0.0, 1.0], [-1.0, 0.0]])
    maps = ProcrustesMaps(['a', 'b'], {'a': np.eye(2), 'b': turn}, {'b': [(0, 1)]}, 2, [0.5, 0.25])
    write_maps(tmp_path / 'maps.gtck', maps)
    loaded = read_maps(tmp_path / 'maps.gtck')
    assert loaded.languages == maps.languages
    assert loaded.anchors == maps.anchors
    assert loaded.rounds == 2 and loaded.objective == [0.5, 0.25]
    assert all(np.array_equal(loaded.maps[lang], maps.maps[lang]) for lang in maps.languages)
    write_arrays(tmp_path / 'other.gtck', {'w': np.eye(2)})
    with pytest.raises(DataError, match='not a Procrustes maps file'):
        read_maps(tmp_path / 'other.gtck')


def test_word_spaces_and_translation():
    embeddings = np.zeros((8, 2))
    embeddings[4], embeddings[5] = [1.0, 0.0], [0.0, 2.0]
    embeddings[6], embeddings[7] = [0.0, 1.0], [3.0, 0.1]
    sets = {'a': LanguageTokenSet('a', {4: 3, 5: 3}), 'b': LanguageTokenSet('b', {6: 3, 7: 3})}
    spaces = word_spaces(embeddings, sets)
    assert np.allclose(np.linalg.norm(spaces['b'].vectors, axis=1), 1.0)
    assert translate_word(4, 'a', 'b', spaces) == [7, 6]
    assert translate_word(5, 'a', 'b', spaces, top=1) == [6]
    with pytest.raises(DataError, match='not in the a word set'):
        translate_word(6, 'a', 'b', spaces)
    with pytest.raises(DataError, match='No word space for language c'):
        translate_word(4, 'a', 'c', spaces)

    # a quarter turn on 'b' swaps which target word is nearest
    turn = np.array([[0.0, 1.0], [-1.0, 0.0]])
    maps = ProcrustesMaps(['a', 'b'], {'a': np.eye(2), 'b': turn}, {}, 1, [0.0])
    mapped = word_spaces(embeddings, sets, maps)
    assert translate_word(5, 'a', 'b', mapped)[0] == 7
    assert list(procrustes_inputs(embeddings, {'b': sets['b'], 'a': sets['a']})) == ['a', 'b']
    assert list(word_spaces(embeddings, sets, maps._replace(maps={'a': np.eye(2)}))) == ['a']
