import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import arrow

from pivot_align.config import RunConfig
from pivot_align.exceptions import DataError

_logger = logging.getLogger(__name__)

CONFIG_FILE = 'config.json'
METRICS_FILE = 'metrics.jsonl'
CHECKPOINT_DIR = 'checkpoints'
BEST_FILE = 'best'


class RunDirectory:
    """One invocation's output directory: config, metric log, checkpoints and the best-checkpoint pointer.

    Checkpoints live in ``checkpoints/`` inside the run unless ``checkpoints`` names another directory.
    """

    def __init__(self, path: Union[str, Path], checkpoints: Optional[Union[str, Path]] = None) -> None:
        self.path = Path(path)
        self.checkpoints = self.path / CHECKPOINT_DIR if checkpoints is None else Path(checkpoints).resolve()

    @classmethod
    def create(cls, root: Union[str, Path], config: RunConfig, label: Optional[str] = None) -> 'RunDirectory':
        """Make ``root/<UTC timestamp>-<config digest>``, adding a numeric suffix rather than reusing a directory.

        With ``train.checkpoint_dir`` set, checkpoints go to a subdirectory of it named after the run.
        """
        stem = f'{arrow.utcnow().format("YYYYMMDDTHHmmss")}-{config.digest()}'
        if label:
            stem = f'{stem}-{label}'
        path = Path(root) / stem
        suffix = 1
        while path.exists():
            path = Path(root) / f'{stem}.{suffix}'
            suffix += 1
        path.mkdir(parents=True)
        shared = config.train.checkpoint_dir
        run = cls(path, None if shared is None else Path(shared) / path.name)
        run.write_config(config)
        _logger.info(f'Run directory {path}')
        return run

    def write_config(self, config: RunConfig) -> None:
        """Record the fully-resolved config."""
        (self.path / CONFIG_FILE).write_text(json.dumps(json.loads(config.json()), indent=2, sort_keys=True))

    def append_metrics(self, record: Dict[str, Any]) -> None:
        """Append one record to ``metrics.jsonl``."""
        with open(self.path / METRICS_FILE, 'a', encoding='utf-8') as f:
            f.write(json.dumps(record, sort_keys=True) + '\n')

    def read_metrics(self) -> List[Dict[str, Any]]:
        """All metric records so far."""
        target = self.path / METRICS_FILE
        if not target.exists():
            return []
        return [json.loads(line) for line in target.read_text().splitlines() if line.strip()]

    def checkpoint_file(self, name: str) -> Path:
        """Path of a named checkpoint, creating the checkpoint directory if needed."""
        self.checkpoints.mkdir(parents=True, exist_ok=True)
        return self.checkpoints / name

    def checkpoint_path(self, epoch: int) -> Path:
        """Where the checkpoint after ``epoch`` goes."""
        return self.checkpoint_file(f'epoch-{epoch}.gtck')

    def set_best(self, epoch: int) -> None:
        """Point ``best`` at the checkpoint of ``epoch``, relative to the run when it lives inside it."""
        target = self.checkpoints / f'epoch-{epoch}.gtck'
        if self.checkpoints == self.path / CHECKPOINT_DIR:
            target = target.relative_to(self.path)
        (self.path / BEST_FILE).write_text(f'{target.as_posix()}\n')

    def best_checkpoint(self) -> Path:
        """Resolve the ``best`` pointer."""
        pointer = self.path / BEST_FILE
        if not pointer.exists():
            raise DataError(f'{self.path} has no best checkpoint yet')
        return self.path / pointer.read_text().strip()

    def write_json(self, name: str, payload: Any) -> Path:
        """Write an auxiliary JSON file into the run directory."""
        target = self.path / name
        target.write_text(json.dumps(payload, indent=2, sort_keys=True))
        return target
