"""Text and image encoders over a shared embedding space."""

from pivot_align.model.checkpoint import load_checkpoint, read_arrays, save_checkpoint, write_arrays
from pivot_align.model.dual import DualEncoder
from pivot_align.model.image import ImageEncoder
from pivot_align.model.params import image_param_names, init_params, text_param_names
from pivot_align.model.similarity import similarity, similarity_matrix, similarity_scores
from pivot_align.model.text import TextEncoder, TextOutput, pad_batch, self_attention

__all__ = [
    'DualEncoder',
    'ImageEncoder',
    'TextEncoder',
    'TextOutput',
    'image_param_names',
    'init_params',
    'load_checkpoint',
    'pad_batch',
    'read_arrays',
    'save_checkpoint',
    'self_attention',
    'similarity',
    'similarity_matrix',
    'similarity_scores',
    'text_param_names',
    'write_arrays',
]
