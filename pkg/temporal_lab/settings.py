"""
Settings Module
Typed run configuration: defaults, YAML/JSON loading with unknown-key
rejection, named sub-seeds, fingerprints and the published JSON schema
"""

import hashlib
import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, Optional

import numpy as np
import yaml
from dotenv import load_dotenv

from .audio_synth import CorpusSpec
from .encoder import EncoderConfig, FeatureConfig
from .errors import ConfigError, DataIOError
from .tnce_loss import LossCoefficients
from .trainer import TrainConfig
from .zste_harness import EvalConfig

logger = logging.getLogger(__name__)

SUBSEED_NAMES = ('corpus', 'split', 'init', 'batch', 'eval')
OUTPUT_ROOT_ENV = 'TEMPORAL_LAB_OUTPUT_ROOT'
SCHEMA_ID = 'https://temporal-audio-text-lab/run_config.schema.json'


@dataclass
class LoggingConfig:
    """Console log level and the JSONL session log"""

    log_level: str = 'INFO'
    log_dir: str = 'logs'
    enabled: bool = True
    log_epochs: bool = True
    log_evaluations: bool = True

    def validate(self):
        if self.log_level.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ConfigError(f"Unknown log level '{self.log_level}'")


# RunConfig section -> dataclass
SECTIONS = {
    'corpus': CorpusSpec,
    'features': FeatureConfig,
    'encoder': EncoderConfig,
    'loss': LossCoefficients,
    'train': TrainConfig,
    'eval': EvalConfig,
    'logging': LoggingConfig,
}

# derived from the global seed, never read from the corpus section
_DERIVED_FIELDS = {'corpus': ('seed',)}


def derive_seed(global_seed: int, name: str) -> int:
    """Stable 32-bit sub-seed for a named component"""
    if isinstance(global_seed, bool) or not isinstance(global_seed, int) or global_seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {global_seed!r}")
    sequence = np.random.SeedSequence([int(global_seed), zlib.crc32(name.encode('utf-8'))])
    return int(sequence.generate_state(1)[0])


@dataclass
class RunConfig:
    """Everything a command needs; all randomness flows from seed through named sub-seeds"""

    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossCoefficients = field(default_factory=LossCoefficients)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    output_dir: str = 'runs'
    seed: int = 0
    seeds: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.corpus = replace(self.corpus, seed=self.seed_for('corpus'))

    def seed_for(self, name: str) -> int:
        if name not in SUBSEED_NAMES:
            raise ConfigError(f"Unknown sub-seed '{name}'")
        if name in self.seeds:
            return int(self.seeds[name])
        return derive_seed(self.seed, name)

    def resolved_seeds(self) -> Dict[str, int]:
        return {name: self.seed_for(name) for name in SUBSEED_NAMES}

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name, value in self.seeds.items():
            if name not in SUBSEED_NAMES:
                raise ConfigError(f"Unknown sub-seed '{name}', expected one of {SUBSEED_NAMES}")
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigError(f"seeds.{name} must be a non-negative integer")
        self.corpus = replace(self.corpus, seed=self.seed_for('corpus'))
        for section in SECTIONS:
            getattr(self, section).validate()

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for section, derived in _DERIVED_FIELDS.items():
            for name in derived:
                data[section].pop(name, None)
        return data

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON of everything that affects results"""
        data = self.to_dict()
        data.pop('logging')
        data.pop('output_dir')
        data['seeds'] = self.resolved_seeds()
        canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def output_root(self) -> str:
        return os.environ.get(OUTPUT_ROOT_ENV) or self.output_dir


def _coerce(path: str, value: Any, default: Any) -> Any:
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path} must be a list, got {value!r}")
        return list(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path} must be a mapping, got {value!r}")
        return dict(value)
    return value


def _merge_section(instance: Any, data: Dict[str, Any], path: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping")
    allowed = {f.name for f in fields(instance)} - set(_DERIVED_FIELDS.get(path, ()))
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"Unknown key(s) in {path}: {', '.join(unknown)}")
    updates = {key: _coerce(f"{path}.{key}", value, getattr(instance, key)) for key, value in data.items()}
    return replace(instance, **updates)


def merge(cfg: RunConfig, data: Optional[Dict[str, Any]]) -> RunConfig:
    """Layer a nested mapping over cfg, rejecting unknown keys"""
    if not data:
        return cfg
    if not isinstance(data, dict):
        raise ConfigError("Run config must be a mapping")
    allowed = set(SECTIONS) | {'output_dir', 'seed', 'seeds'}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"Unknown top-level key(s): {', '.join(unknown)}")
    updates: Dict[str, Any] = {}
    for key, value in data.items():
        if key in SECTIONS:
            updates[key] = _merge_section(getattr(cfg, key), value, key)
        else:
            updates[key] = _coerce(key, value, getattr(cfg, key))
    return replace(cfg, **updates)


def apply_overrides(cfg: RunConfig, overrides: Optional[Dict[str, Any]]) -> RunConfig:
    """Apply dotted-key overrides such as {'train.stages': 'B', 'seed': 3}; None values are skipped"""
    nested: Dict[str, Any] = {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        parts = dotted.split('.')
        target = nested
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return merge(cfg, nested)


def read_config_file(path: str) -> Dict[str, Any]:
    """YAML or JSON document (JSON is read through the YAML parser)"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise DataIOError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {path} is not valid YAML/JSON: {e}") from e
    return data or {}


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve the run config: flags over file over defaults

    Args:
        path: Optional YAML/JSON config file
        overrides: Dotted-key values from the command line

    Returns:
        Validated RunConfig
    """
    load_dotenv()
    cfg = RunConfig()
    if path:
        cfg = merge(cfg, read_config_file(path))
    cfg = apply_overrides(cfg, overrides)
    cfg.validate()
    logger.debug(f"Resolved run config {cfg.fingerprint()[:12]}")
    return cfg


_JSON_TYPES = {bool: 'boolean', int: 'integer', float: 'number', str: 'string', list: 'array', dict: 'object'}


def _property_schema(value: Any) -> Dict[str, Any]:
    if value is None:
        return {}
    if is_dataclass(value):
        return _object_schema(value)
    schema: Dict[str, Any] = {'type': _JSON_TYPES[type(value)], 'default': value}
    if isinstance(value, list):
        schema['items'] = _property_schema(value[0]) if value else {}
        schema['items'].pop('default', None)
    if isinstance(value, dict):
        schema['additionalProperties'] = {'type': 'integer'}
    return schema


def _object_schema(instance: Any, path: str = '') -> Dict[str, Any]:
    skipped = _DERIVED_FIELDS.get(path, ())
    properties = {}
    for f in fields(instance):
        if f.name in skipped:
            continue
        value = getattr(instance, f.name)
        properties[f.name] = _object_schema(value, f.name) if is_dataclass(value) else _property_schema(value)
    return {'type': 'object', 'additionalProperties': False, 'properties': properties}


def json_schema() -> Dict[str, Any]:
    """JSON schema of the run config, generated from the dataclass defaults"""
    schema = _object_schema(RunConfig())
    schema['properties']['seeds']['propertyNames'] = {'enum': list(SUBSEED_NAMES)}
    schema['properties']['corpus']['properties']['class_names'] = {
        'type': ['array', 'null'], 'items': {'type': 'string'}}
    schema['properties']['features']['properties']['f_max'] = {'type': ['number', 'null']}
    schema['properties']['eval']['properties']['max_pairs'] = {'type': ['integer', 'null']}
    return {'$schema': 'http://json-schema.org/draft-07/schema#', '$id': SCHEMA_ID,
            'title': 'Run configuration', **schema}


def write_schema(path: str):
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(json_schema(), f, indent=2)
            f.write('\n')
    except OSError as e:
        raise DataIOError(f"Failed to write schema {path}: {e}") from e
