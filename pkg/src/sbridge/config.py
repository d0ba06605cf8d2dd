"""Experiment configuration: JSON files with defaults, dotted overrides and the resolved-config echo"""
import json
import logging
from dataclasses import dataclass, field, asdict, fields, replace
from typing import Optional, Tuple

from .csbi import TrainConfig
from .data import SignalConfig, TargetStrategy
from .errors import ValidationError
from .sde import SdeSpec

logger = logging.getLogger(__name__)

CONFIG_FILE = 'config.json'


@dataclass(frozen=True)
class SinkhornSettings:
    """Settings of an approximate IPF sweep on a random EOT instance"""
    n: int = 16
    m: int = 16
    d: int = 2
    reg: float = 0.5
    sde: SdeSpec = field(default_factory=SdeSpec)
    eps_list: Tuple[float, ...] = (0.0, 1e-4, 1e-3, 1e-2)
    n_iters: int = 200
    oracle_iters: int = 2000
    n_seeds: int = 1
    slack: float = 10.0
    tail_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, 'eps_list', tuple(float(e) for e in self.eps_list))
        if not self.eps_list:
            raise ValidationError("eps_list must not be empty")
        if any(e < 0 for e in self.eps_list):
            raise ValidationError("every eps must be nonnegative, got %s" % (self.eps_list,))
        for name in ('n', 'm', 'd', 'n_iters', 'oracle_iters', 'n_seeds'):
            if getattr(self, name) < 1:
                raise ValidationError("%s must be >= 1, got %r" % (name, getattr(self, name)))
        if not self.reg > 0:
            raise ValidationError("reg must be positive, got %r" % self.reg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d['eps_list'] = list(self.eps_list)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> 'SinkhornSettings':
        d = dict(d)
        if isinstance(d.get('sde'), dict):
            d['sde'] = SdeSpec.from_dict(d['sde'])
        return cls(**d)


@dataclass(frozen=True)
class ImputeSettings:
    n_samples: int = 100
    split: str = 'val'
    strategy: Optional[str] = None
    max_windows: Optional[int] = None
    n_corrector_steps: int = 0
    snr: float = 0.16

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1, got %r" % self.n_samples)
        if self.split not in ('train', 'val', 'all'):
            raise ValidationError("split must be one of train, val, all; got %r" % (self.split,))
        if self.strategy is not None:
            TargetStrategy.parse(self.strategy)
        if self.max_windows is not None and self.max_windows < 1:
            raise ValidationError("max_windows must be >= 1, got %r" % self.max_windows)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> 'ImputeSettings':
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    threads: int = 1
    n_train: Optional[int] = None
    data: SignalConfig = field(default_factory=SignalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sinkhorn: SinkhornSettings = field(default_factory=SinkhornSettings)
    impute: ImputeSettings = field(default_factory=ImputeSettings)

    def to_dict(self) -> dict:
        return {'seed': self.seed,
                'threads': self.threads,
                'n_train': self.n_train,
                'data': self.data.to_dict(),
                'train': self.train.to_dict(),
                'sinkhorn': self.sinkhorn.to_dict(),
                'impute': self.impute.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> 'ExperimentConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError("unknown configuration sections: %s" % ", ".join(sorted(unknown)))
        try:
            return cls(seed=d.get('seed', 0),
                       threads=d.get('threads', 1),
                       n_train=d.get('n_train'),
                       data=SignalConfig.from_dict(d.get('data', {})),
                       train=TrainConfig.from_dict(d.get('train', {})),
                       sinkhorn=SinkhornSettings.from_dict(d.get('sinkhorn', {})),
                       impute=ImputeSettings.from_dict(d.get('impute', {})))
        except TypeError as e:
            raise ValidationError("invalid configuration: %s" % e) from e


def _set_dotted(d: dict, key: str, value):
    node = d
    parts = key.split('.')
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ValidationError("unknown configuration key %r" % key)
        node = node[part]
    if parts[-1] not in node:
        raise ValidationError("unknown configuration key %r" % key)
    node[parts[-1]] = value


def resolve_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """
    Build the experiment configuration from defaults, an optional JSON file and dotted-key
    overrides such as ``{'train.stages': 0}``; overrides win over the file.
    """
    resolved = ExperimentConfig().to_dict()
    if path is not None:
        with open(path) as f:
            try:
                from_file = json.load(f)
            except ValueError as e:
                raise ValidationError("config file %s is not valid JSON: %s" % (path, e)) from e
        if isinstance(from_file, dict) and 'version' in from_file and 'config' in from_file:
            from_file = from_file['config']  # an echoed config.json
        if not isinstance(from_file, dict):
            raise ValidationError("config file %s must hold a JSON object" % path)
        for section, values in from_file.items():
            if isinstance(values, dict) and isinstance(resolved.get(section), dict):
                for key, value in values.items():
                    _set_dotted(resolved, "%s.%s" % (section, key), value)
            else:
                _set_dotted(resolved, section, values)
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(resolved, key, value)
    config = ExperimentConfig.from_dict(resolved)
    if config.threads < 1:
        raise ValidationError("threads must be >= 1, got %r" % config.threads)
    if (config.train.seed, config.train.number_of_jobs) != (config.seed, config.threads):
        config = replace(config, train=replace(config.train, seed=config.seed, number_of_jobs=config.threads))
    return config


def echo_config(config: ExperimentConfig, path: str, version: str, command: str):
    """Write the resolved configuration and the code version next to the outputs"""
    with open(path, 'w') as f:
        f.write(json.dumps({'version': version, 'command': command, 'config': config.to_dict()}, indent=2))
    logger.info("wrote resolved configuration to %s" % path)
