import logging

import numpy as np

from pivot_align.config import ModelConfig
from pivot_align.diffcore import ParamStore, Tensor, as_tensor, ops
from pivot_align.exceptions import ShapeError

_logger = logging.getLogger(__name__)


class ImageEncoder:
    """Two gelu layers over precomputed image features, then a linear head into the shared embedding space."""

    def __init__(self, store: ParamStore, config: ModelConfig) -> None:
        self.store = store
        self.config = config

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return x @ self.store[f'image.{name}.w'] + self.store[f'image.{name}.b']

    def encode(self, features) -> Tensor:
        """Unit-norm embeddings for a (batch, features) matrix, or a single feature vector.

        Raises:
            ShapeError: the feature length differs from the configured one.
        """
        x = as_tensor(features, dtype=np.dtype(self.config.precision))
        squeeze = x.ndim == 1
        if squeeze:
            x = ops.reshape(x, (1, x.shape[0]))
        if x.ndim != 2 or x.shape[1] != self.config.image_feat_dim:
            raise ShapeError('encode_image', x.shape, (self.config.image_feat_dim,))
        h = ops.gelu(self._linear(x, 'fc1'))
        h = ops.gelu(self._linear(h, 'fc2'))
        z = ops.l2_normalize(self._linear(h, 'head'), axis=-1)
        return ops.select(z, 0, axis=0) if squeeze else z
