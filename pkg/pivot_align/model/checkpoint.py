"""``GTCK`` named-array files: checkpoints and Procrustes maps.

Layout: magic ``GTCK``, u32 version, u32 manifest length, the manifest as JSON, then one little-endian blob. The
manifest lists every array's name, dtype, shape, byte offset and length, plus the blob's CRC-32 and free-form
metadata.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from pivot_align.codec import PayloadDecoder, PayloadEncoder, crc32, dtype_code, dtype_from_code
from pivot_align.config import ModelConfig
from pivot_align.diffcore import ParamStore
from pivot_align.exceptions import DataError, FormatError
from pivot_align.model.dual import DualEncoder

_logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'GTCK'
CHECKPOINT_VERSION = 1
_ADAM_M, _ADAM_V = 'adam.m/', 'adam.v/'

PathLike = Union[str, Path]


def encode_arrays(arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> bytes:
    """Serialise named arrays, in the given order, with JSON-able metadata."""
    blob = PayloadEncoder()
    entries = []
    for name, array in arrays.items():
        offset = blob.add_array(array)
        entries.append(
            {
                'name': name,
                'dtype': int(dtype_code(array.dtype)),
                'shape': [int(s) for s in array.shape],
                'offset': offset,
                'nbytes': int(array.nbytes),
            }
        )
    payload = blob.to_bytes()
    manifest = {'arrays': entries, 'crc32': blob.crc(), 'meta': meta or {}}
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(',', ':')).encode()

    out = PayloadEncoder()
    out.add_bytes(CHECKPOINT_MAGIC)
    out.add_32bit_uint(CHECKPOINT_VERSION)
    out.add_32bit_uint(len(manifest_bytes))
    out.add_bytes(manifest_bytes)
    out.add_bytes(payload)
    return out.to_bytes()


def decode_arrays(payload: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Inverse of :func:`encode_arrays`; verifies the blob checksum."""
    decoder = PayloadDecoder(payload)
    decoder.decode_magic(CHECKPOINT_MAGIC)
    version = decoder.decode_32bit_uint()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f'Unsupported checkpoint version {version}', header=payload[:12])
    try:
        manifest = json.loads(decoder.decode_bytes(decoder.decode_32bit_uint()))
    except ValueError as e:
        raise FormatError(f'Checkpoint manifest is not valid JSON: {e}', header=payload[:12])
    blob = decoder.rest()
    if crc32(blob) != manifest['crc32']:
        raise DataError(f'Checkpoint blob checksum mismatch ({crc32(blob):08x} != {manifest["crc32"]:08x})')
    arrays: Dict[str, np.ndarray] = {}
    for entry in manifest['arrays']:
        section = PayloadDecoder(blob[entry['offset'] : entry['offset'] + entry['nbytes']])
        arrays[entry['name']] = section.decode_array(dtype_from_code(entry['dtype']), tuple(entry['shape']))
    return arrays, manifest['meta']


def write_arrays(path: PathLike, arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> None:
    """Write a ``GTCK`` file."""
    Path(path).write_bytes(encode_arrays(arrays, meta))


def read_arrays(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a ``GTCK`` file."""
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f'Cannot read {path}: {e}')
    return decode_arrays(payload)


def file_hash(path: PathLike) -> str:
    """CRC-32 of a file's bytes as 8 hex digits, used to label reports."""
    return f'{crc32(Path(path).read_bytes()):08x}'


def save_checkpoint(
    path: PathLike, model: DualEncoder, meta: Optional[Dict[str, Any]] = None, include_optimizer: bool = True
) -> None:
    """Write model parameters (and optionally Adam moments and step) with the model config in the metadata."""
    arrays = {name: tensor.data for name, tensor in model.store.items()}
    starts: Dict[str, int] = {}
    if include_optimizer:
        for name in model.store:
            m, v = model.store.moments(name)
            if m is not None and v is not None:
                arrays[_ADAM_M + name] = m
                arrays[_ADAM_V + name] = v
                if model.store.moment_start(name):
                    starts[name] = model.store.moment_start(name)
    full_meta = dict(meta or {})
    full_meta['model_config'] = json.loads(model.config.json())
    full_meta['step'] = model.store.t if include_optimizer else 0
    full_meta['moment_start'] = starts
    write_arrays(path, arrays, full_meta)
    _logger.debug(f'Saved checkpoint {path} ({len(arrays)} arrays)')


def load_checkpoint(path: PathLike) -> Tuple[DualEncoder, Dict[str, Any]]:
    """Rebuild a model from a checkpoint; Adam moments and step are restored when present."""
    arrays, meta = read_arrays(path)
    if 'model_config' not in meta:
        raise DataError(f'{path} is not a model checkpoint (no model_config)')
    config = ModelConfig.parse_obj(meta['model_config'])
    store = ParamStore()
    for name, value in arrays.items():
        if not name.startswith((_ADAM_M, _ADAM_V)):
            store.add(name, value)
    starts = meta.get('moment_start', {})
    for name in store:
        if _ADAM_M + name in arrays:
            store.set_moments(name, arrays[_ADAM_M + name], arrays[_ADAM_V + name], starts.get(name, 0))
    store.t = int(meta.get('step', 0))
    return DualEncoder(config, store), meta
