import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from pivot_align.config import ModelConfig
from pivot_align.diffcore import ParamStore, Tensor
from pivot_align.model.image import ImageEncoder
from pivot_align.model.params import image_param_names, init_params, text_param_names
from pivot_align.model.text import TextEncoder, TextOutput, pad_batch

_logger = logging.getLogger(__name__)


class DualEncoder:
    """Text and image branches sharing one parameter store and one embedding space."""

    def __init__(self, config: ModelConfig, store: Optional[ParamStore] = None) -> None:
        self.config = config
        self.store = init_params(config) if store is None else store
        self.text = TextEncoder(self.store, config)
        self.image = ImageEncoder(self.store, config)

    @property
    def text_params(self) -> List[str]:
        """Names of the parameters adaptation is allowed to update."""
        return text_param_names(self.store)

    @property
    def image_params(self) -> List[str]:
        return image_param_names(self.store)

    def encode_text(self, ids: np.ndarray, mask: Optional[np.ndarray] = None) -> TextOutput:
        return self.text.encode(ids, mask)

    def encode_image(self, features) -> Tensor:
        return self.image.encode(features)

    def word_embeddings(self) -> np.ndarray:
        """The shared token embedding matrix (one row per vocabulary id)."""
        return self.store['text.tok_emb'].data

    def embed_sentences(self, sequences: Sequence[Sequence[int]], batch_size: int = 256, threads: int = 1):
        """Sentence embeddings as a (n, head_dim) array, computed without recording gradients."""
        if not sequences:
            return np.zeros((0, self.config.head_dim), dtype=np.dtype(self.config.precision))
        chunks = [sequences[i : i + batch_size] for i in range(0, len(sequences), batch_size)]

        def run(chunk):
            ids, mask = pad_batch(chunk, self.config.max_len)
            return self.text.encode(ids, mask).z.data

        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(chunk) for chunk in chunks]
        return np.concatenate(parts, axis=0)

    def embed_images(self, features: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        """Image embeddings as a (n, head_dim) array, computed without recording gradients."""
        features = np.asarray(features)
        if features.shape[0] == 0:
            return np.zeros((0, self.config.head_dim), dtype=np.dtype(self.config.precision))
        parts = [self.image.encode(features[i : i + batch_size]).data for i in range(0, len(features), batch_size)]
        return np.concatenate(parts, axis=0)
