import logging
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Extra

from pivot_align.exceptions import DataError

_logger = logging.getLogger(__name__)


class CorpusBaseModel(BaseModel):
    """Immutable record base."""

    class Config:  # noqa: D106
        allow_mutation = False
        extra = Extra.forbid


class CaptionRecord(CorpusBaseModel):
    """One caption in one language, linked to one image."""

    id: str
    lang: str
    text: str
    image_id: str
    tokens: Optional[Tuple[int, ...]] = None


class CaptionTable:
    """Captions in insertion order with lookup by id."""

    def __init__(self, records: Iterable[CaptionRecord] = ()) -> None:
        self.records: List[CaptionRecord] = list(records)
        self._by_id: Dict[str, CaptionRecord] = {}
        duplicates = []
        for record in self.records:
            if record.id in self._by_id:
                duplicates.append(record.id)
            self._by_id[record.id] = record
        if duplicates:
            raise DataError(f'Duplicate caption ids: {", ".join(duplicates[:10])}', offenders=duplicates)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CaptionRecord]:
        return iter(self.records)

    def __getitem__(self, caption_id: str) -> CaptionRecord:
        return self._by_id[caption_id]

    def __contains__(self, caption_id: object) -> bool:
        return caption_id in self._by_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CaptionTable) and self.records == other.records

    def ids(self) -> List[str]:
        """Caption ids in order."""
        return [r.id for r in self.records]

    def languages(self) -> List[str]:
        """Sorted distinct language codes."""
        return sorted({r.lang for r in self.records})

    def subset(self, ids: Iterable[str]) -> 'CaptionTable':
        """New table holding ``ids``, in that order."""
        missing = [i for i in ids if i not in self._by_id]
        if missing:
            raise DataError(f'Unknown caption ids: {", ".join(missing[:10])}', offenders=missing)
        return CaptionTable(self._by_id[i] for i in ids)

    def by_language(self, lang: str) -> 'CaptionTable':
        """Captions of one language, in order."""
        return CaptionTable(r for r in self.records if r.lang == lang)

    def tokenized(self, encode) -> 'CaptionTable':
        """Copy with every record's ``tokens`` filled by ``encode(text)``."""
        return CaptionTable(r.copy(update={'tokens': tuple(encode(r.text))}) for r in self.records)


class ImageTable:
    """Image feature matrix with a row index by image id."""

    def __init__(self, ids: Sequence[str], features: np.ndarray) -> None:
        features = np.asarray(features)
        if features.ndim != 2 or features.shape[0] != len(ids):
            raise DataError(f'{len(ids)} image ids for a feature matrix of shape {features.shape}')
        if not np.all(np.isfinite(features)):
            bad = [ids[i] for i in np.flatnonzero(~np.all(np.isfinite(features), axis=1))]
            raise DataError(f'Non-finite image features for {", ".join(bad[:10])}', offenders=bad)
        self.ids: List[str] = list(ids)
        self.features = features
        self.index: Dict[str, int] = {image_id: row for row, image_id in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise DataError('Duplicate image ids')

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, image_id: object) -> bool:
        return image_id in self.index

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ImageTable)
            and self.ids == other.ids
            and self.features.dtype == other.features.dtype
            and np.array_equal(self.features, other.features)
        )

    @property
    def feat_dim(self) -> int:
        """Feature vector length."""
        return int(self.features.shape[1])

    def feature(self, image_id: str) -> np.ndarray:
        """Feature vector of one image."""
        return self.features[self.index[image_id]]

    def rows(self, image_ids: Sequence[str]) -> np.ndarray:
        """Feature matrix for ``image_ids``, in that order."""
        missing = [i for i in image_ids if i not in self.index]
        if missing:
            raise DataError(f'Unknown image ids: {", ".join(missing[:10])}', offenders=missing)
        return self.features[[self.index[i] for i in image_ids]]


class SplitManifest(CorpusBaseModel):
    """Disjoint train/val/test caption ids plus complete paraphrase groups for val and test.

    ``adapt`` holds single-language captions of held-out languages, reserved for adaptation.
    """

    languages: List[str]
    held_out: List[str] = []
    train: List[str]
    val: List[str]
    test: List[str]
    adapt: List[str] = []
    val_groups: List[Dict[str, str]]
    test_groups: List[Dict[str, str]]


class GroundTruth(CorpusBaseModel):
    """Generator-side truth about a synthetic world, for evaluation only."""

    word_map: Dict[str, Dict[int, str]]
    function_words: Dict[str, List[str]]
    families: List[List[str]]
    topics: List[List[int]]
    image_concepts: Dict[str, List[int]]
    caption_concepts: Dict[str, List[int]]
    corrupted: List[str]
    paraphrase_groups: Dict[str, Dict[str, str]]


class World(NamedTuple):
    """Everything :func:`~pivot_align.corpus.world.generate_world` emits."""

    captions: CaptionTable
    images: ImageTable
    manifest: SplitManifest
    ground_truth: GroundTruth

    @property
    def word_map(self) -> Dict[str, Dict[int, str]]:
        """Concept wordform per language."""
        return self.ground_truth.word_map

    @property
    def paraphrase_groups(self) -> Dict[str, Dict[str, str]]:
        """Caption id per language for every scene group."""
        return self.ground_truth.paraphrase_groups
