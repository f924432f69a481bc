"""Evaluation reports: one JSON document per protocol run, plus one CSV file per matrix."""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import arrow
import numpy as np
from pydantic import BaseModel, Extra

from pivot_align.exceptions import DataError, ShapeError

_logger = logging.getLogger(__name__)

VOLATILE_META = ('created',)

PathLike = Union[str, Path]


class ReportEncoder(json.JSONEncoder):
    """JSONEncoder that understands numpy scalars and arrays."""

    def default(self, o: Any) -> Any:
        """Convert numpy values to plain Python ones."""
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, Path):
            return str(o)
        return super().default(o)


class RetrievalReport(BaseModel):
    """Scalar metrics for one protocol, optionally with a language-by-language matrix and its asymmetry."""

    protocol: str
    metrics: Dict[str, float]
    languages: List[str] = []
    matrix: Optional[List[List[float]]] = None
    asymmetry: Optional[List[List[float]]] = None
    meta: Dict[str, Any] = {}

    class Config:  # noqa: D106
        extra = Extra.forbid

    @classmethod
    def build(
        cls,
        protocol: str,
        metrics: Dict[str, float],
        languages: Iterable[str] = (),
        matrix: Optional[np.ndarray] = None,
        meta: Optional[Dict[str, Any]] = None,
    ) -> 'RetrievalReport':
        """Assemble a report, deriving the asymmetry matrix when a matrix is given."""
        languages = list(languages)
        asymmetry = None
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=np.float64)
            if matrix.shape != (len(languages), len(languages)):
                raise ShapeError('RetrievalReport', matrix.shape, (len(languages), len(languages)))
            asymmetry = asymmetry_matrix(matrix).tolist()
            matrix = matrix.tolist()
        full_meta = {'created': arrow.utcnow().isoformat()}
        full_meta.update(json.loads(json.dumps(meta or {}, cls=ReportEncoder)))
        return cls(
            protocol=protocol,
            metrics={k: float(v) for k, v in metrics.items()},
            languages=languages,
            matrix=matrix,
            asymmetry=asymmetry,
            meta=full_meta,
        )

    def matrix_array(self) -> Optional[np.ndarray]:
        """The per-language-pair matrix as an array."""
        return None if self.matrix is None else np.asarray(self.matrix, dtype=np.float64)

    def to_json(self) -> str:
        """Serialise deterministically."""
        return json.dumps(self.dict(), cls=ReportEncoder, indent=2, sort_keys=True)


def asymmetry_matrix(a) -> np.ndarray:
    """A - Aᵀ: entry (i, j) > 0 means translating from language i to j is easier than from j to i.

    Raises:
        ShapeError: ``a`` is not square.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError('asymmetry_matrix', a.shape)
    return a - a.T


def _write_csv(path: Path, languages: List[str], rows: List[List[float]]) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['query\\target'] + languages)
        for lang, row in zip(languages, rows):
            writer.writerow([lang] + [repr(float(v)) for v in row])


def report_stem(protocol: str, checkpoint_hash: Optional[str] = None) -> str:
    """File stem encoding the protocol and the checkpoint it ran on."""
    return protocol if not checkpoint_hash else f'{protocol}-{checkpoint_hash}'


def write_report(report: RetrievalReport, directory: PathLike, checkpoint_hash: Optional[str] = None) -> Path:
    """Write ``<protocol>-<hash>.json`` and a CSV next to it for every matrix; returns the JSON path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = report_stem(report.protocol, checkpoint_hash)
    target = directory / f'{stem}.json'
    target.write_text(report.to_json())
    if report.matrix is not None:
        _write_csv(directory / f'{stem}.matrix.csv', report.languages, report.matrix)
    if report.asymmetry is not None:
        _write_csv(directory / f'{stem}.asymmetry.csv', report.languages, report.asymmetry)
    _logger.info(f'Wrote {report.protocol} report to {target}')
    return target


def read_report(path: PathLike) -> RetrievalReport:
    """Load a report written by :func:`write_report`."""
    try:
        return RetrievalReport.parse_raw(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise DataError(f'Cannot read report {path}: {e}')


def read_matrix_csv(path: PathLike) -> np.ndarray:
    """Read back a matrix CSV (header row and label column dropped)."""
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)


def merge_reports(paths: Iterable[PathLike]) -> Dict[str, Dict[str, Any]]:
    """One summary keyed by protocol, then by source file stem, holding each report's metrics and metadata.

    A stem seen twice (the same protocol and checkpoint from two run directories) is prefixed with its directory.
    Creation timestamps are left out so that merging the same reports again gives the same summary.
    """
    summary: Dict[str, Dict[str, Any]] = {}
    for path in sorted(Path(p) for p in paths):
        report = read_report(path)
        meta = {k: v for k, v in report.meta.items() if k not in VOLATILE_META}
        entry = {'metrics': report.metrics, 'meta': meta, 'languages': report.languages}
        entries = summary.setdefault(report.protocol, {})
        key = path.stem if path.stem not in entries else f'{path.parent.name}/{path.stem}'
        entries[key] = entry
    if not summary:
        raise DataError('No reports to merge')
    return summary
