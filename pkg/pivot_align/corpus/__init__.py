"""Caption/image tables, the synthetic world generator, splits and file formats."""

from pivot_align.config import WorldSpec
from pivot_align.corpus.io import load_corpus, load_external, read_captions, read_features, save_world
from pivot_align.corpus.records import (
    CaptionRecord,
    CaptionTable,
    GroundTruth,
    ImageTable,
    SplitManifest,
    World,
)
from pivot_align.corpus.splits import make_splits
from pivot_align.corpus.world import generate_world

__all__ = [
    'CaptionRecord',
    'CaptionTable',
    'GroundTruth',
    'ImageTable',
    'SplitManifest',
    'World',
    'WorldSpec',
    'generate_world',
    'load_corpus',
    'load_external',
    'make_splits',
    'read_captions',
    'read_features',
    'save_world',
]
