"""Configuration models.

Every section rejects unknown keys. A :class:`RunConfig` is loaded from one JSON file and may be adjusted from the
command line with ``--section.key=value`` overrides, applied before validation.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from pydantic import BaseModel, Extra, ValidationError, root_validator, validator

from pivot_align.codec import crc32
from pivot_align.exceptions import ConfigError

_logger = logging.getLogger(__name__)


class ConfigModel(BaseModel):
    """Base for all configuration sections."""

    class Config:  # noqa: D106
        extra = Extra.forbid
        validate_assignment = True


def _probability(v: float) -> float:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f'must be in [0, 1], got {v}')
    return v


def _positive(v: int) -> int:
    if v < 1:
        raise ValueError(f'must be >= 1, got {v}')
    return v


class WorldSpec(ConfigModel):
    """Synthetic multilingual world: concepts, languages, scenes and their noise."""

    n_concepts: int = 50
    n_languages: int = 6
    feat_dim: int = 32
    n_pairs: int = 5000
    scene_size: Tuple[int, int] = (1, 3)
    p_cognate: float = 0.1
    p_noise: float = 0.1
    noise_sigma: float = 0.1
    seed: int = 0

    families: int = 1
    p_cognate_family: Optional[float] = None
    topics: int = 1
    p_topic: float = 0.8
    held_out: int = 0
    n_function_words: int = 5
    p_function_word: float = 0.5
    mean_length: float = 10.0
    word_length: Tuple[int, int] = (4, 8)
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    _check_positive = validator(
        'n_concepts', 'n_languages', 'feat_dim', 'n_pairs', 'families', 'topics', allow_reuse=True
    )(_positive)
    _check_probability = validator('p_cognate', 'p_noise', 'p_topic', 'p_function_word', allow_reuse=True)(_probability)

    @validator('p_cognate_family')
    def _family_probability(cls, v: Optional[float]) -> Optional[float]:  # noqa: N805
        return None if v is None else _probability(v)

    @validator('held_out', 'n_function_words')
    def _non_negative(cls, v: int) -> int:  # noqa: N805
        if v < 0:
            raise ValueError(f'must be >= 0, got {v}')
        return v

    @validator('noise_sigma', 'mean_length')
    def _non_negative_float(cls, v: float) -> float:  # noqa: N805
        if v < 0:
            raise ValueError(f'must be >= 0, got {v}')
        return v

    @validator('scene_size', 'word_length')
    def _ordered_range(cls, v: Tuple[int, int]) -> Tuple[int, int]:  # noqa: N805
        if v[0] < 1 or v[1] < v[0]:
            raise ValueError(f'must satisfy 1 <= min <= max, got {v}')
        return v

    @validator('split_ratios')
    def _ratios(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:  # noqa: N805
        if any(r < 0 for r in v) or sum(v) > 1.0 + 1e-9:
            raise ValueError(f'ratios must be non-negative and sum to at most 1, got {v}')
        return v


class TokenizerConfig(ConfigModel):
    """Byte-pair-encoding vocabulary training."""

    vocab_size: int = 2000
    min_pair_count: int = 2

    @validator('min_pair_count')
    def _min_count(cls, v: int) -> int:  # noqa: N805
        if v < 2:
            raise ValueError(f'a merge needs a pair seen at least twice, got {v}')
        return v


class ModelConfig(ConfigModel):
    """Shapes of the text and image branches."""

    layers: int = 2
    heads: int = 4
    hidden: int = 64
    head_dim: int = 32
    max_len: int = 64
    vocab_size: int = 2000
    image_feat_dim: int = 32
    precision: str = 'float32'
    init_scale: float = 0.02
    seed: int = 0

    _check_positive = validator(
        'layers', 'heads', 'hidden', 'head_dim', 'max_len', 'vocab_size', 'image_feat_dim', allow_reuse=True
    )(_positive)

    @validator('precision')
    def _precision(cls, v: str) -> str:  # noqa: N805
        if v not in ('float32', 'float64'):
            raise ValueError(f'must be float32 or float64, got {v}')
        return v

    @root_validator(skip_on_failure=True)
    def _shapes(cls, values: Dict[str, Any]) -> Dict[str, Any]:  # noqa: N805
        if values['hidden'] % values['heads']:
            raise ValueError(f'hidden={values["hidden"]} is not divisible by heads={values["heads"]}')
        if values['head_dim'] > values['hidden']:
            raise ValueError(f'head_dim={values["head_dim"]} exceeds hidden={values["hidden"]}')
        return values


class LossConfig(ConfigModel):
    """Loss weights, temperature, margin and ablation switches."""

    lambda_v: float = 0.2
    lambda_x: float = 0.2
    lambda_c: float = 0.2
    tau: float = 0.1
    margin_m: float = 0.4
    alpha_grad_flow: bool = False
    symmetric_views: bool = True
    alpha_from_views: bool = True
    use_lt: bool = True
    use_lv: bool = True
    use_lx: bool = True
    use_lc: bool = True

    @validator('tau')
    def _tau(cls, v: float) -> float:  # noqa: N805
        if v <= 0:
            raise ValueError(f'temperature must be > 0, got {v}')
        return v

    @validator('margin_m')
    def _margin(cls, v: float) -> float:  # noqa: N805
        if not 0.0 <= v < 1.0:
            raise ValueError(f'margin must be in [0, 1), got {v}')
        return v

    @property
    def any_enabled(self) -> bool:
        """Whether at least one objective term is switched on."""
        return self.use_lt or self.use_lv or self.use_lx or self.use_lc

    @property
    def needs_negatives(self) -> bool:
        """Whether a contrastive term that needs in-batch negatives is switched on."""
        return self.use_lt or self.use_lx


class TrainConfig(ConfigModel):
    """Optimisation loop."""

    batch_size: int = 64
    epochs: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    val_every: int = 1
    val_queries: int = 50
    aug_sigma: float = 0.1
    aug_dropout: float = 0.1
    mask_prob: float = 0.15
    supervised_alpha: bool = False
    text_only: bool = False
    prefetch: bool = True
    save_optimizer_state: bool = True
    adapt_epochs: int = 1
    checkpoint_dir: Optional[str] = None

    _check_positive = validator('batch_size', 'val_every', 'adapt_epochs', allow_reuse=True)(_positive)
    _check_probability = validator('aug_dropout', 'mask_prob', allow_reuse=True)(_probability)

    @validator('epochs')
    def _epochs(cls, v: int) -> int:  # noqa: N805
        if v < 0:
            raise ValueError(f'must be >= 0, got {v}')
        return v


class AlignConfig(ConfigModel):
    """Word-level mining and Procrustes refinement."""

    min_count: int = 3
    k: int = 5
    gt_top: int = 5
    rounds: int = 10
    tol: float = 1e-4
    init: str = 'identity'

    _check_positive = validator('min_count', 'k', 'gt_top', 'rounds', allow_reuse=True)(_positive)

    @validator('init')
    def _init(cls, v: str) -> str:  # noqa: N805
        if v not in ('identity', 'profile'):
            raise ValueError(f"must be 'identity' or 'profile', got {v!r}")
        return v


class EvalConfig(ConfigModel):
    """Evaluation protocol sizes."""

    n_queries: int = 50
    pairs_per_language: int = 200
    recall_k: int = 10
    exclude_identical: bool = False
    probe_lr: float = 1e-3
    probe_epochs: int = 1
    probe_batch: int = 32
    cluster_k: int = 50
    cluster_restarts: int = 20
    seed: int = 0

    _check_positive = validator(
        'n_queries',
        'pairs_per_language',
        'recall_k',
        'probe_epochs',
        'probe_batch',
        'cluster_restarts',
        allow_reuse=True,
    )(_positive)


class RunConfig(ConfigModel):
    """Every section, as one document."""

    world: WorldSpec = WorldSpec()
    tokenizer: TokenizerConfig = TokenizerConfig()
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    align: AlignConfig = AlignConfig()
    eval: EvalConfig = EvalConfig()
    threads: int = 1

    _check_positive = validator('threads', allow_reuse=True)(_positive)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()) -> 'RunConfig':
        """Read a JSON config file (or start from defaults) and apply ``section.key=value`` overrides."""
        raw: Dict[str, Any] = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f'Cannot read config {path}: {e}')
            if not isinstance(raw, dict):
                raise ConfigError(f'Config {path} must hold a JSON object')
        for override in overrides:
            apply_override(raw, override)
        try:
            return cls.parse_obj(raw)
        except ValidationError as e:
            raise ConfigError(f'Invalid configuration: {_one_line(e)}')

    def canonical_json(self) -> str:
        """Fully resolved config as sorted, compact JSON."""
        return json.dumps(json.loads(self.json()), sort_keys=True, separators=(',', ':'))

    def digest(self) -> str:
        """8 hex digit CRC-32 of the canonical JSON form."""
        return f'{crc32(self.canonical_json().encode()):08x}'


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: Dict[str, Any], override: str) -> None:
    """Apply one ``[--]section.key=value`` override to a raw config mapping in place."""
    text = override[2:] if override.startswith('--') else override
    if '=' not in text:
        raise ConfigError(f'Override {override!r} is not of the form --section.key=value')
    dotted, value = text.split('=', 1)
    path = dotted.replace('-', '_').split('.')
    model: Any = RunConfig
    for part in path:
        if model is None or part not in model.__fields__:
            raise ConfigError(f'Unknown config key {dotted!r}')
        field_type = model.__fields__[part].type_
        model = field_type if isinstance(field_type, type) and issubclass(field_type, BaseModel) else None
    node = raw
    for part in path[:-1]:
        node = node.setdefault(part, {})
    node[path[-1]] = _parse_value(value)


def _one_line(e: ValidationError) -> str:
    return '; '.join(f'{".".join(str(p) for p in err["loc"])}: {err["msg"]}' for err in e.errors())
