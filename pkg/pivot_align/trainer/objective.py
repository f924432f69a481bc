import logging
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from pivot_align.config import LossConfig
from pivot_align.diffcore import Tensor, as_tensor, ops
from pivot_align.losses import loss_cloze, loss_t, loss_v, loss_x, total_loss, transitive_alpha
from pivot_align.model.dual import DualEncoder
from pivot_align.model.similarity import similarity_matrix
from pivot_align.trainer.batch import Batch

_logger = logging.getLogger(__name__)


class LossTerms(NamedTuple):
    """The weighted objective of one batch, its unweighted components and the α it used."""

    total: Tensor
    components: Dict[str, float]
    alpha: Optional[np.ndarray]


def paired_similarity(a: Tensor, b: Tensor) -> Tensor:
    """[0, 1] similarity between row i of ``a`` and row i of ``b``."""
    return ops.sum(a * b, axis=1) * 0.5 + 0.5


def batch_alpha(
    images: Tensor,
    texts: Tensor,
    margin: float = 0.4,
    grad_flow: bool = False,
    views: Optional[Tuple[Tensor, Tensor]] = None,
) -> Tensor:
    """Transitive pair weights from each caption's match to its own image and the image-image similarities.

    With ``views`` the image-image term compares the first augmented view of image i with the second view of
    image j, the embeddings the two-view loss trains; otherwise it uses the un-augmented image embeddings.
    Unless ``grad_flow`` is set the weights are computed on detached embeddings and act as fixed targets.
    """
    if not grad_flow:
        images, texts = images.detach(), texts.detach()
        views = None if views is None else (views[0].detach(), views[1].detach())
    image_sim = similarity_matrix(images, images) if views is None else similarity_matrix(*views)
    return transitive_alpha(paired_similarity(images, texts), image_sim, margin)


def compute_losses(
    model: DualEncoder, batch: Batch, loss: LossConfig, supervised: Optional[np.ndarray] = None
) -> LossTerms:
    """Forward the batch through both encoders and combine the enabled losses.

    ``supervised`` replaces the transitive α with a fixed 0/1 pairing matrix. Switched-off terms are never
    computed, so they contribute no gradient at all.
    """
    components: Dict[str, Tensor] = {}
    alpha: Optional[Tensor] = None
    needs_images = loss.use_lx or (loss.use_lt and supervised is None)
    z = model.encode_text(batch.ids, batch.mask).z if loss.use_lt or loss.use_lx else None
    images = model.encode_image(batch.features) if needs_images else None
    views = model.encode_image(np.concatenate([batch.view1, batch.view2], axis=0)) if loss.use_lv else None

    if loss.use_lt:
        if supervised is not None:
            alpha = as_tensor(supervised, dtype=z.dtype)
        else:
            pair = None
            if views is not None and loss.alpha_from_views:
                n = len(batch)
                pair = (ops.take_rows(views, np.arange(n)), ops.take_rows(views, np.arange(n, 2 * n)))
            alpha = batch_alpha(images, z, loss.margin_m, loss.alpha_grad_flow, pair)
        components['L_t'] = loss_t(similarity_matrix(z, z), alpha, loss.tau)
    if views is not None:
        components['L_v'] = loss_v(views, loss.tau, loss.symmetric_views)
    if loss.use_lx:
        components['L_x'] = loss_x(images, z, loss.tau)
    if loss.use_lc:
        corrupted = model.encode_text(batch.plan.corrupted, batch.mask)
        logits = model.text.cloze_logits(corrupted.hiddens, batch.plan.positions)
        components['L_c'] = loss_cloze(logits, batch.plan.targets, batch.plan.sentence)

    total = total_loss(
        components.get('L_t'),
        components.get('L_v'),
        components.get('L_x'),
        components.get('L_c'),
        loss.lambda_v,
        loss.lambda_x,
        loss.lambda_c,
    )
    return LossTerms(
        total,
        {name: value.item() for name, value in components.items()},
        None if alpha is None else alpha.data.copy(),
    )
