"""Batching, the training objective, the epoch loop and per-language adaptation."""

from pivot_align.trainer.batch import Augmenter, Batch, build_batch
from pivot_align.trainer.loop import (
    AnchorCache,
    Trainer,
    TrainingData,
    TrainResult,
    adapt_language,
    batch_order,
    build_anchor_cache,
    effective_loss_config,
    supervised_alpha_mode,
    train,
)
from pivot_align.trainer.objective import LossTerms, batch_alpha, compute_losses
from pivot_align.trainer.run_dir import RunDirectory

__all__ = [
    'AnchorCache',
    'Augmenter',
    'Batch',
    'LossTerms',
    'RunDirectory',
    'TrainResult',
    'Trainer',
    'TrainingData',
    'adapt_language',
    'batch_alpha',
    'batch_order',
    'build_anchor_cache',
    'build_batch',
    'compute_losses',
    'effective_loss_config',
    'supervised_alpha_mode',
    'train',
]
