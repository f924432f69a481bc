import numpy as np
import pytest

from pivot_align.config import ModelConfig
from pivot_align.diffcore import Tensor, ops
from pivot_align.diffcore.gradcheck import check_gradients
from pivot_align.exceptions import DataError, ShapeError
from pivot_align.model import DualEncoder, pad_batch, self_attention
from pivot_align.tokenizer import PAD_ID, SEQ_ID


@pytest.fixture
def micro() -> DualEncoder:
    config = ModelConfig(
        layers=1,
        heads=2,
        hidden=4,
        head_dim=3,
        max_len=6,
        vocab_size=10,
        image_feat_dim=3,
        precision='float64',
        init_scale=0.3,
        seed=1,
    )
    return DualEncoder(config)


def test_pad_batch():
    ids, mask = pad_batch([[SEQ_ID, 5], [SEQ_ID, 6, 7, 8]], max_len=3)
    assert ids.tolist() == [[SEQ_ID, 5, PAD_ID], [SEQ_ID, 6, 7]]
    assert mask.tolist() == [[True, True, False], [True, True, True]]
    with pytest.raises(DataError, match='empty batch'):
        pad_batch([], 4)


def test_sentence_embeddings_are_unit_norm(tiny_model, tiny_world, tiny_vocab):
    captions = tiny_world.captions.tokenized(tiny_vocab.encode)
    z = tiny_model.embed_sentences([r.tokens for r in captions][:40])
    assert z.shape == (40, 4)
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0)


def test_padding_does_not_change_embeddings(micro):
    short, long = [SEQ_ID, 4, 5], [SEQ_ID, 6, 7, 8, 9]
    alone = micro.embed_sentences([short])
    together = micro.embed_sentences([short, long])
    assert np.allclose(alone[0], together[0], atol=1e-12)


def test_text_input_errors(micro):
    with pytest.raises(DataError, match='do not start with') as e:
        micro.encode_text(np.array([[SEQ_ID, 4], [4, 5]]))
    assert e.value.offenders == [1]
    with pytest.raises(DataError, match=r'\[0, 10\)'):
        micro.encode_text(np.array([[SEQ_ID, 12]]))


def test_cloze_logits_shape(micro):
    ids, mask = pad_batch([[SEQ_ID, 4, 5], [SEQ_ID, 6]], micro.config.max_len)
    out = micro.encode_text(ids, mask)
    assert out.hiddens.shape == (2, 3, 4)
    assert micro.text.cloze_logits(out.hiddens, np.array([1, 4])).shape == (2, 10)


def test_text_gradients(micro):
    ids, mask = pad_batch([[SEQ_ID, 4, 5, 6], [SEQ_ID, 7]], micro.config.max_len)
    weights = np.random.default_rng(0).standard_normal((2, 3))

    def loss():
        out = micro.encode_text(ids, mask)
        logits = micro.text.cloze_logits(out.hiddens, np.array([1, 2, 5]))
        return ops.sum(out.z * weights) + ops.mean(ops.log_softmax(logits, axis=-1))

    # the key bias shifts every score of a query equally, so its true gradient is zero
    params = [micro.store[n] for n in micro.text_params if not n.endswith('attn.k.b')]
    errors = check_gradients(loss, params, max_elements=6)
    assert max(errors.values()) < 1e-4, errors


def test_image_encoder(micro):
    z = micro.embed_images(np.random.default_rng(0).standard_normal((5, 3)))
    assert z.shape == (5, 3)
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0)
    single = micro.encode_image(np.zeros(3))
    assert single.shape == (3,)
    assert np.isclose(np.linalg.norm(single.data), 1.0)
    with pytest.raises(ShapeError, match='encode_image'):
        micro.encode_image(np.zeros((2, 4)))


def test_image_gradients(micro):
    features = np.random.default_rng(2).standard_normal((3, 3))
    target = np.random.default_rng(3).standard_normal((3, 3))
    errors = check_gradients(
        lambda: ops.sum(micro.encode_image(features) * target), [micro.store[n] for n in micro.image_params]
    )
    assert max(errors.values()) < 1e-5, errors


def test_parameter_partition(micro):
    assert set(micro.text_params) | set(micro.image_params) == set(micro.store)
    assert not set(micro.text_params) & set(micro.image_params)
    assert 'text.cloze.w' in micro.text_params
    assert micro.word_embeddings().shape == (10, 4)


def test_initialisation_is_seeded(micro):
    again = DualEncoder(micro.config)
    for name in micro.store:
        assert np.array_equal(micro.store[name].data, again.store[name].data)


def test_threaded_embedding_matches_serial(tiny_model, tiny_world, tiny_vocab):
    sequences = [r.tokens for r in tiny_world.captions.tokenized(tiny_vocab.encode)][:30]
    serial = tiny_model.embed_sentences(sequences, batch_size=7)
    threaded = tiny_model.embed_sentences(sequences, batch_size=7, threads=3)
    assert np.array_equal(serial, threaded)
    assert tiny_model.embed_sentences([]).shape == (0, 4)
    assert tiny_model.embed_images(np.zeros((0, 8))).shape == (0, 4)


def test_attention_scales_by_per_head_width():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 3, 4))
    wq, wk, wv = (rng.normal(size=(4, 4)) for _ in range(3))
    out = self_attention(Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv), heads=2).data

    expected = []
    for h in (slice(0, 2), slice(2, 4)):
        q, k, v = (x[0] @ wq)[:, h], (x[0] @ wk)[:, h], (x[0] @ wv)[:, h]
        scores = q @ k.T / np.sqrt(2)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        expected.append(weights @ v)
    assert np.allclose(out[0], np.concatenate(expected, axis=1))
