import logging
from typing import List

import numpy as np

from pivot_align.config import ModelConfig
from pivot_align.diffcore import ParamStore

_logger = logging.getLogger(__name__)

TEXT_PREFIX = 'text.'
IMAGE_PREFIX = 'image.'


def _linear(store: ParamStore, rng: np.random.Generator, name: str, fan_in: int, fan_out: int, dtype, scale: float):
    store.add(f'{name}.w', rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)).astype(dtype))
    store.add(f'{name}.b', rng.normal(0.0, scale, (fan_out,)).astype(dtype))


def _norm(store: ParamStore, name: str, width: int, dtype) -> None:
    store.add(f'{name}.g', np.ones(width, dtype=dtype))
    store.add(f'{name}.b', np.zeros(width, dtype=dtype))


def init_params(config: ModelConfig) -> ParamStore:
    """Create every text and image branch parameter, deterministically in ``config.seed``.

    Biases start small and nonzero so that an all-zero image feature still yields a well-defined direction.
    """
    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.precision)
    d, s = config.hidden, config.init_scale
    store = ParamStore()

    store.add('text.tok_emb', rng.normal(0.0, s, (config.vocab_size, d)).astype(dtype))
    store.add('text.pos_emb', rng.normal(0.0, s, (config.max_len, d)).astype(dtype))
    for m in range(config.layers):
        block = f'text.block{m}'
        _norm(store, f'{block}.ln1', d, dtype)
        for proj in ('q', 'k', 'v', 'o'):
            _linear(store, rng, f'{block}.attn.{proj}', d, d, dtype, s)
        _norm(store, f'{block}.ln2', d, dtype)
        _linear(store, rng, f'{block}.ff1', d, 4 * d, dtype, s)
        _linear(store, rng, f'{block}.ff2', 4 * d, d, dtype, s)
    _norm(store, 'text.ln_f', d, dtype)
    _linear(store, rng, 'text.head', d, config.head_dim, dtype, s)
    _linear(store, rng, 'text.cloze', d, config.vocab_size, dtype, s)

    _linear(store, rng, 'image.fc1', config.image_feat_dim, d, dtype, s)
    _linear(store, rng, 'image.fc2', d, d, dtype, s)
    _linear(store, rng, 'image.head', d, config.head_dim, dtype, s)

    _logger.debug(f'Initialised {len(store)} parameters ({sum(store[n].size for n in store)} values)')
    return store


def text_param_names(store: ParamStore) -> List[str]:
    """Parameters on the text forward path, cloze head included."""
    return [name for name in store if name.startswith(TEXT_PREFIX)]


def image_param_names(store: ParamStore) -> List[str]:
    """Parameters on the image forward path."""
    return [name for name in store if name.startswith(IMAGE_PREFIX)]
