import numpy as np
import pytest

from pivot_align.config import LossConfig
from pivot_align.diffcore import Tape, backward, check_gradients
from pivot_align.losses import transitive_alpha
from pivot_align.model import similarity_scores
from pivot_align.trainer import Augmenter, build_batch, compute_losses

SWITCHES = (('L_t', 'use_lt'), ('L_v', 'use_lv'), ('L_x', 'use_lx'), ('L_c', 'use_lc'))


@pytest.fixture
def batch(tiny_data, tiny_model):
    records = list(tiny_data.train)[:4]
    config = tiny_model.config
    return build_batch(records, tiny_data.images, Augmenter(), 11, config.vocab_size, config.max_len)


def _gradients(model, batch, loss, supervised=None):
    model.store.zero_grad()
    with Tape():
        terms = compute_losses(model, batch, loss, supervised)
        backward(terms.total)
    return terms, {name: model.store[name].grad for name in model.store}


def test_total_combines_components(tiny_model, batch):
    terms = compute_losses(tiny_model, batch, LossConfig(lambda_v=0.5, lambda_x=0.25, lambda_c=2.0))
    c = terms.components
    assert sorted(c) == ['L_c', 'L_t', 'L_v', 'L_x']
    assert all(value >= 0.0 for value in c.values())
    assert terms.total.item() == pytest.approx(c['L_t'] + 0.5 * c['L_v'] + 0.25 * c['L_x'] + 2.0 * c['L_c'])
    assert terms.alpha.shape == (4, 4)
    assert np.array_equal(terms.alpha, terms.alpha.T)


@pytest.mark.parametrize(
    'switches, frozen',
    [
        ({'use_lt': False, 'use_lv': False, 'use_lx': False}, 'image.'),
        ({'use_lt': False, 'use_lx': False, 'use_lc': False}, 'text.'),
        ({'use_lc': False}, 'text.cloze'),
    ],
)
def test_switched_off_terms_leave_no_gradient(tiny_model, batch, switches, frozen):
    terms, grads = _gradients(tiny_model, batch, LossConfig(**switches))
    switched_on = [name for name, key in SWITCHES if switches.get(key, True)]
    assert sorted(terms.components) == sorted(switched_on)
    untouched = [name for name, grad in grads.items() if name.startswith(frozen)]
    assert untouched
    assert not any(np.any(grads[name]) for name in untouched)
    assert any(np.any(grad) for name, grad in grads.items() if not name.startswith(frozen))


def test_alpha_is_a_fixed_target_unless_gradients_flow(tiny_model, batch):
    only_lt = {'use_lv': False, 'use_lx': False, 'use_lc': False, 'margin_m': 0.0}
    _, detached = _gradients(tiny_model, batch, LossConfig(**only_lt))
    assert not any(np.any(detached[name]) for name in tiny_model.image_params)
    _, flowing = _gradients(tiny_model, batch, LossConfig(alpha_grad_flow=True, **only_lt))
    assert all(np.any(flowing[name]) for name in tiny_model.image_params)


def test_alpha_compares_the_two_augmented_views(tiny_model, batch):
    loss = {'use_lx': False, 'use_lc': False, 'margin_m': 0.0}
    from_views = compute_losses(tiny_model, batch, LossConfig(**loss)).alpha
    images = tiny_model.embed_images(batch.features)
    texts = tiny_model.encode_text(batch.ids, batch.mask).z.data
    diag = (np.sum(images * texts, axis=1) + 1.0) / 2.0
    view_sim = similarity_scores(tiny_model.embed_images(batch.view1), tiny_model.embed_images(batch.view2))
    assert np.allclose(from_views, transitive_alpha(diag, view_sim, 0.0).data)

    plain = compute_losses(tiny_model, batch, LossConfig(alpha_from_views=False, **loss)).alpha
    assert np.allclose(plain, transitive_alpha(diag, similarity_scores(images, images), 0.0).data)
    assert not np.allclose(plain, from_views)


def test_supervised_alpha_replaces_transitive_weights(tiny_model, batch):
    pairing = np.zeros((4, 4))
    pairing[0, 2] = pairing[2, 0] = 1.0
    terms, grads = _gradients(tiny_model, batch, LossConfig(use_lv=False, use_lx=False, use_lc=False), pairing)
    assert np.array_equal(terms.alpha, pairing)
    assert not any(np.any(grads[name]) for name in tiny_model.image_params)


def test_objective_gradients_match_finite_differences(tiny_model, batch):
    loss = LossConfig(margin_m=0.0, alpha_grad_flow=True)
    # the key bias shifts every score of a query equally, so its true gradient is zero
    params = [tiny_model.store[n] for n in tiny_model.store if not n.endswith('attn.k.b')]
    errors = check_gradients(lambda: compute_losses(tiny_model, batch, loss).total, params, max_elements=5)
    assert max(errors.values()) < 1e-4, errors
