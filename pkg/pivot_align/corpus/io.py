"""On-disk formats for captions, image features and generated worlds.

* captions: JSONL, one ``{"id", "lang", "text", "image_id"}`` object per line.
* features: ``GTRF`` binary (u32 version, u32 dtype, u32 ndim=2, u64 dims, little-endian row-major payload) with a
  sidecar JSON index mapping image id to row.
* worlds: a directory holding the above plus ``manifest.json`` and, kept apart from everything training reads,
  ``ground_truth.json``.
"""
import json
import logging
from pathlib import Path
from typing import List, Tuple, Union

from pivot_align.codec import PayloadDecoder, PayloadEncoder, dtype_code, dtype_from_code
from pivot_align.corpus.records import CaptionRecord, CaptionTable, ImageTable, SplitManifest, World
from pivot_align.exceptions import DataError, FormatError

_logger = logging.getLogger(__name__)

FEATURE_MAGIC = b'GTRF'
FEATURE_VERSION = 1
CAPTIONS_FILE = 'captions.jsonl'
FEATURES_FILE = 'features.gtrf'
MANIFEST_FILE = 'manifest.json'
GROUND_TRUTH_FILE = 'ground_truth.json'

PathLike = Union[str, Path]


def index_path(features_path: PathLike) -> Path:
    """Sidecar index location for a feature file."""
    return Path(f'{features_path}.index.json')


def write_captions(path: PathLike, captions: CaptionTable) -> None:
    """Write captions as JSONL (token ids are not persisted)."""
    with open(path, 'w', encoding='utf-8') as f:
        for r in captions:
            record = {'id': r.id, 'lang': r.lang, 'text': r.text, 'image_id': r.image_id}
            f.write(json.dumps(record, ensure_ascii=False) + '\n')


def read_captions(path: PathLike) -> CaptionTable:
    """Read a JSONL caption file; every malformed line is reported by number."""
    records: List[CaptionRecord] = []
    bad: List[int] = []
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                records.append(
                    CaptionRecord(id=raw['id'], lang=raw['lang'], text=raw['text'], image_id=raw['image_id'])
                )
            except (ValueError, KeyError, TypeError) as e:
                _logger.warning(f'{path}:{line_no}: malformed caption record ({e})')
                bad.append(line_no)
    if bad:
        raise DataError(f'{path}: malformed caption lines {", ".join(str(n) for n in bad[:20])}', offenders=bad)
    return CaptionTable(records)


def encode_features(images: ImageTable) -> bytes:
    """Serialise a feature matrix in the GTRF format."""
    n, feat_dim = images.features.shape
    encoder = PayloadEncoder()
    encoder.add_bytes(FEATURE_MAGIC)
    encoder.add_32bit_uint(FEATURE_VERSION)
    encoder.add_32bit_uint(dtype_code(images.features.dtype))
    encoder.add_32bit_uint(2)
    encoder.add_64bit_uint(n)
    encoder.add_64bit_uint(feat_dim)
    encoder.add_array(images.features)
    return encoder.to_bytes()


def decode_features(payload: bytes, ids: List[str]) -> ImageTable:
    """Parse a GTRF payload whose rows are labelled by ``ids``."""
    decoder = PayloadDecoder(payload)
    decoder.decode_magic(FEATURE_MAGIC)
    version = decoder.decode_32bit_uint()
    if version != FEATURE_VERSION:
        raise FormatError(f'Unsupported feature file version {version}', header=payload[:16])
    dtype = dtype_from_code(decoder.decode_32bit_uint())
    ndim = decoder.decode_32bit_uint()
    if ndim != 2:
        raise FormatError(f'Feature file has {ndim} dimensions, expected 2', header=payload[:16])
    shape = (decoder.decode_64bit_uint(), decoder.decode_64bit_uint())
    features = decoder.decode_array(dtype, shape)
    if not decoder.exhausted:
        raise FormatError(f'{decoder.remaining_bytes} trailing bytes after feature payload', header=payload[:16])
    if len(ids) != shape[0]:
        raise DataError(f'Feature index lists {len(ids)} images but the payload has {shape[0]} rows')
    return ImageTable(ids, features)


def write_features(path: PathLike, images: ImageTable) -> None:
    """Write a GTRF file and its sidecar index."""
    Path(path).write_bytes(encode_features(images))
    index_path(path).write_text(json.dumps({image_id: row for row, image_id in enumerate(images.ids)}))


def read_features(path: PathLike) -> ImageTable:
    """Read a GTRF file and its sidecar index."""
    try:
        index = json.loads(index_path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f'Cannot read feature index for {path}: {e}')
    ids = [''] * len(index)
    for image_id, row in index.items():
        if not isinstance(row, int) or not 0 <= row < len(ids) or ids[row]:
            raise DataError(f'Feature index entry {image_id!r} -> {row!r} is invalid', offenders=[image_id])
        ids[row] = image_id
    return decode_features(Path(path).read_bytes(), ids)


def load_external(corpus_path: PathLike, features_path: PathLike) -> Tuple[CaptionTable, ImageTable]:
    """Load an external caption corpus with its precomputed image features.

    Raises:
        DataError: a caption references an image that has no features, or a file is malformed.
    """
    captions = read_captions(corpus_path)
    images = read_features(features_path)
    orphans = sorted({r.image_id for r in captions if r.image_id not in images})
    if orphans:
        raise DataError(f'Captions reference missing images: {", ".join(orphans[:20])}', offenders=orphans)
    _logger.info(f'Loaded {len(captions)} captions over {len(images)} images from {corpus_path}')
    return captions, images


def save_world(directory: PathLike, world: World) -> None:
    """Write a generated world into ``directory`` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_captions(directory / CAPTIONS_FILE, world.captions)
    write_features(directory / FEATURES_FILE, world.images)
    (directory / MANIFEST_FILE).write_text(world.manifest.json())
    (directory / GROUND_TRUTH_FILE).write_text(world.ground_truth.json())


def read_manifest(path: PathLike) -> SplitManifest:
    """Read a split manifest."""
    try:
        return SplitManifest.parse_file(path)
    except (OSError, ValueError) as e:
        raise DataError(f'Cannot read manifest {path}: {e}')


def load_corpus(directory: PathLike) -> Tuple[CaptionTable, ImageTable, SplitManifest]:
    """Load everything training may see from a world directory: captions, images and the split manifest."""
    directory = Path(directory)
    captions, images = load_external(directory / CAPTIONS_FILE, directory / FEATURES_FILE)
    return captions, images, read_manifest(directory / MANIFEST_FILE)
