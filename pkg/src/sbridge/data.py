"""
Synthetic sinusoid windows, observation/condition/target masks and the JSON-lines dataset format.

A dataset file starts with a header line ``{"version", "K", "L", "seed", "config", "n_records"}``
followed by one record per window ``{"values", "m_obs", "m_cond", "m_target"}`` holding plain
nested lists (masks as 0/1).
"""
import csv
import json
import logging
from dataclasses import dataclass, asdict, field
from typing import List, Optional, Tuple

import numpy as np

from hdmf.utils import docval, getargs

from .errors import DatasetFormatError, ValidationError
from .utils import stream

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

CONSECUTIVE_BLOCK = 'consecutive_block'
RANDOM_RATIO = 'random_ratio'
FORECAST = 'forecast'

# purpose key of the per-sample generation streams
DATA_STREAM = 1


def _sin(t):
    return np.sin(2.0 * np.pi * t)


def _cos(t):
    return np.cos(2.0 * np.pi * t)


_SIGNALS = (
    lambda t: _sin(t),
    lambda t: _cos(t),
    lambda t: _sin(t) ** 2,
    lambda t: 2.0 * _sin(t) ** 2 * _cos(t),
    lambda t: _sin(t) ** 2 * _cos(t) + 0.3 * t,
    lambda t: _sin(t) ** 3 - 0.3 * t,
    lambda t: _cos(t) ** 2 * np.exp(-0.1 * t) - 0.2 * t,
    lambda t: _cos(t) ** 2 * _sin(t) * np.exp(0.4 * t) + 0.2 * t,
)


def signal(k: int, t):
    """Evaluate the k-th (1-based) sinusoid mixture at time(s) t"""
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= len(_SIGNALS)):
        raise ValidationError("signal index must be an integer in 1..%d, got %r" % (len(_SIGNALS), k))
    return _SIGNALS[k - 1](np.asarray(t, dtype=float))


@dataclass(frozen=True)
class TargetStrategy:
    """
    How targets are selected among the observed entries.

    ``consecutive_block`` takes ``value`` consecutive time points per feature, ``random_ratio``
    selects each observed entry with probability ``value`` and ``forecast`` targets every observed
    entry from time index ``value`` on.
    """
    kind: str = CONSECUTIVE_BLOCK
    value: float = 20

    def __post_init__(self):
        if self.kind not in (CONSECUTIVE_BLOCK, RANDOM_RATIO, FORECAST):
            raise ValidationError("unknown target strategy %r" % (self.kind,))
        if self.kind == RANDOM_RATIO and not 0 <= self.value < 1:
            raise ValidationError("random_ratio must lie in [0, 1), got %r" % (self.value,))
        if self.kind != RANDOM_RATIO and (int(self.value) != self.value or self.value < 0):
            raise ValidationError("%s needs a nonnegative integer length, got %r" % (self.kind, self.value))

    @classmethod
    def parse(cls, text: str) -> 'TargetStrategy':
        """Parse ``kind:value``, e.g. ``consecutive_block:20`` or ``forecast:40``"""
        kind, _, value = text.partition(':')
        if not value:
            raise ValidationError("target strategy must be written as kind:value, got %r" % text)
        try:
            return cls(kind, float(value) if kind == RANDOM_RATIO else int(value))
        except ValueError as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError("invalid target strategy value in %r" % text) from e

    def __str__(self):
        return "%s:%s" % (self.kind, self.value)


@dataclass(frozen=True)
class SignalConfig:
    K: int = 8
    L: int = 50
    noise_sigma: float = 0.1
    n_samples: int = 1000
    drop_ratio: float = 0.0
    strategy: TargetStrategy = field(default_factory=TargetStrategy)

    def __post_init__(self):
        if not 1 <= self.K <= len(_SIGNALS):
            raise ValidationError("K must lie in [1, %d], got %r" % (len(_SIGNALS), self.K))
        if self.L < 2:
            raise ValidationError("L must be >= 2, got %r" % self.L)
        if not self.noise_sigma >= 0:
            raise ValidationError("noise_sigma must be nonnegative, got %r" % self.noise_sigma)
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1, got %r" % self.n_samples)
        if not 0 <= self.drop_ratio < 1:
            raise ValidationError("drop_ratio must lie in [0, 1), got %r" % self.drop_ratio)
        if self.strategy.kind == CONSECUTIVE_BLOCK and self.strategy.value > self.L:
            raise ValidationError("block length %d exceeds L=%d" % (self.strategy.value, self.L))

    def to_dict(self) -> dict:
        d = asdict(self)
        d['strategy'] = str(self.strategy)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> 'SignalConfig':
        d = dict(d)
        strategy = d.pop('strategy', None)
        if isinstance(strategy, str):
            strategy = TargetStrategy.parse(strategy)
        elif isinstance(strategy, dict):
            strategy = TargetStrategy(**strategy)
        return cls(**d) if strategy is None else cls(strategy=strategy, **d)


@dataclass(frozen=True)
class MaskSet:
    """Observed, condition and target masks of one K x L window"""
    m_obs: np.ndarray
    m_cond: np.ndarray
    m_target: np.ndarray

    def __post_init__(self):
        shapes = {self.m_obs.shape, self.m_cond.shape, self.m_target.shape}
        if len(shapes) != 1 or self.m_obs.ndim != 2:
            raise ValidationError("masks must share one K x L shape, got %s" % sorted(shapes))
        for name in ('m_obs', 'm_cond', 'm_target'):
            if getattr(self, name).dtype != bool:
                object.__setattr__(self, name, np.asarray(getattr(self, name)).astype(bool))
        if np.any(self.m_cond & self.m_target):
            raise ValidationError("condition and target masks overlap")
        if np.any(self.m_cond & ~self.m_obs):
            raise ValidationError("condition mask covers unobserved entries")

    @property
    def shape(self):
        return self.m_obs.shape

    def check_evaluable(self):
        """Targets must carry ground truth"""
        if np.any(self.m_target & ~self.m_obs):
            raise ValidationError("target mask covers unobserved entries")


@dataclass(frozen=True)
class TimeSeriesWindow:
    """A K x L window; entries outside ``masks.m_obs`` hold the sentinel 0"""
    values: np.ndarray
    masks: MaskSet

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.masks.shape:
            raise ValidationError("values of shape %s do not match masks of shape %s"
                                  % (values.shape, self.masks.shape))
        if not np.all(np.isfinite(values[self.masks.m_obs])):
            raise ValidationError("observed values must be finite")
        object.__setattr__(self, 'values', np.where(self.masks.m_obs, values, 0.0))

    @property
    def x_cond(self) -> np.ndarray:
        return self.values * self.masks.m_cond


@dataclass
class Dataset:
    windows: List[TimeSeriesWindow]
    K: int
    L: int
    seed: Optional[int] = None
    config: Optional[dict] = None

    def __post_init__(self):
        for i, w in enumerate(self.windows):
            if w.values.shape != (self.K, self.L):
                raise ValidationError("window %d has shape %s, expected (%d, %d)" % (i, w.values.shape, self.K, self.L))

    def __len__(self):
        return len(self.windows)

    def __getitem__(self, i):
        return self.windows[i]

    def stacked(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(values, m_obs, m_cond, m_target), each of shape (N, K, L)"""
        return (np.stack([w.values for w in self.windows]),
                np.stack([w.masks.m_obs for w in self.windows]),
                np.stack([w.masks.m_cond for w in self.windows]),
                np.stack([w.masks.m_target for w in self.windows]))

    def subset(self, indices) -> 'Dataset':
        return Dataset([self.windows[i] for i in indices], self.K, self.L, self.seed, self.config)


@docval({'name': 'm_obs', 'type': 'array_data', 'doc': 'K x L observed mask'},
        {'name': 'strategy', 'type': TargetStrategy, 'doc': 'target selection rule'},
        {'name': 'rng', 'type': np.random.Generator, 'doc': 'random stream'},
        is_method=False, returns='the mask set', rtype=MaskSet)
def make_masks(**kwargs):
    """Select targets among the observed entries; conditions are the remaining observed entries"""
    m_obs, strategy, rng = getargs('m_obs', 'strategy', 'rng', kwargs)
    m_obs = np.asarray(m_obs).astype(bool)
    if m_obs.ndim != 2:
        raise ValidationError("m_obs must be a K x L grid, got shape %s" % (m_obs.shape,))
    K, L = m_obs.shape
    if strategy.kind == CONSECUTIVE_BLOCK:
        length = int(strategy.value)
        if length > L:
            raise ValidationError("block length %d exceeds L=%d" % (length, L))
        starts = rng.integers(0, L - length + 1, size=K)
        block = (np.arange(L)[None, :] >= starts[:, None]) & (np.arange(L)[None, :] < starts[:, None] + length)
        m_target = block & m_obs
    elif strategy.kind == RANDOM_RATIO:
        m_target = m_obs & (rng.uniform(size=(K, L)) < strategy.value)
    else:
        m_target = m_obs & (np.arange(L)[None, :] >= int(strategy.value))
    return MaskSet(m_obs=m_obs, m_cond=m_obs & ~m_target, m_target=m_target)


def time_grid(L: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, L)


def _generate_window(cfg: SignalConfig, rng: np.random.Generator) -> TimeSeriesWindow:
    shift = rng.uniform(0.0, 1.0)
    grid = time_grid(cfg.L) + shift
    values = np.stack([signal(k, grid) for k in range(1, cfg.K + 1)])
    values = values + cfg.noise_sigma * rng.standard_normal(values.shape)
    m_obs = rng.uniform(size=values.shape) >= cfg.drop_ratio
    return TimeSeriesWindow(values, make_masks(m_obs, cfg.strategy, rng))


@docval({'name': 'cfg', 'type': SignalConfig, 'doc': 'generation settings'},
        {'name': 'seed', 'type': int, 'doc': 'experiment seed; window i draws from its own stream'},
        is_method=False, returns='the generated dataset', rtype=Dataset)
def generate(**kwargs):
    """
    Generate noisy sinusoid windows ``signal_k(t + omega_i) + sigma * eps``, one phase shift
    ``omega_i ~ U(0, 1)`` per window shared by all features, on the uniform grid over [0, 1].
    """
    cfg, seed = getargs('cfg', 'seed', kwargs)
    windows = [_generate_window(cfg, stream(seed, DATA_STREAM, i)) for i in range(cfg.n_samples)]
    logger.debug("generated %d windows of shape (%d, %d)" % (len(windows), cfg.K, cfg.L))
    return Dataset(windows, cfg.K, cfg.L, seed, cfg.to_dict())


def _to_record(w: TimeSeriesWindow) -> dict:
    return {'values': w.values.tolist(),
            'm_obs': w.masks.m_obs.astype(int).tolist(),
            'm_cond': w.masks.m_cond.astype(int).tolist(),
            'm_target': w.masks.m_target.astype(int).tolist()}


def save_dataset(dataset: Dataset, path: str):
    """Write the dataset as JSON-lines"""
    header = {'version': FORMAT_VERSION, 'K': dataset.K, 'L': dataset.L, 'seed': dataset.seed,
              'config': dataset.config, 'n_records': len(dataset)}
    with open(path, 'w') as f:
        f.write(json.dumps(header) + '\n')
        for w in dataset.windows:
            f.write(json.dumps(_to_record(w)) + '\n')
    logger.info("wrote %d windows to %s" % (len(dataset), path))


def _parse_mask(record, name, shape, line):
    m = np.asarray(record[name])
    if m.shape != shape or not np.all((m == 0) | (m == 1)):
        raise DatasetFormatError("%s must be a 0/1 grid of shape %s" % (name, shape), line=line)
    return m.astype(bool)


def load_dataset(path: str) -> Dataset:
    """Read a JSON-lines dataset; malformed or truncated files raise DatasetFormatError"""
    with open(path) as f:
        lines = f.read().split('\n')
    if lines and lines[-1] == '':
        lines.pop()
    if not lines:
        raise DatasetFormatError("empty dataset file", line=1)
    try:
        header = json.loads(lines[0])
        K, L, n_records = int(header['K']), int(header['L']), int(header['n_records'])
        version = header['version']
    except (ValueError, KeyError, TypeError) as e:
        raise DatasetFormatError("invalid header: %s" % e, line=1) from e
    if version != FORMAT_VERSION:
        raise DatasetFormatError("unsupported dataset version %r" % (version,), line=1)
    windows = []
    for line, text in enumerate(lines[1:], start=2):
        try:
            record = json.loads(text)
            values = np.asarray(record['values'], dtype=float)
            if values.shape != (K, L):
                raise DatasetFormatError("values must have shape (%d, %d), got %s" % (K, L, values.shape), line=line)
            masks = MaskSet(*(_parse_mask(record, name, (K, L), line) for name in ('m_obs', 'm_cond', 'm_target')))
            windows.append(TimeSeriesWindow(values, masks))
        except DatasetFormatError:
            raise
        except (ValueError, KeyError, TypeError) as e:
            raise DatasetFormatError(str(e), line=line) from e
    if len(windows) != n_records:
        raise DatasetFormatError("header declares %d records but the file holds %d" % (n_records, len(windows)),
                                 line=len(lines) + 1)
    return Dataset(windows, K, L, header.get('seed'), header.get('config'))


def split_dataset(dataset: Dataset, n_train: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    """Split into leading train and trailing validation windows (default 80/20, i.e. 800/200 for 1000)"""
    n_train = int(round(0.8 * len(dataset))) if n_train is None else n_train
    if not 0 < n_train <= len(dataset):
        raise ValidationError("n_train must lie in [1, %d], got %d" % (len(dataset), n_train))
    return dataset.subset(range(n_train)), dataset.subset(range(n_train, len(dataset)))


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {'mean': self.mean.tolist(), 'std': self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d['mean'], dtype=float), np.asarray(d['std'], dtype=float))


def feature_stats(dataset: Dataset) -> FeatureStats:
    """Per-feature mean and standard deviation over observed entries (std 0 is replaced by 1)"""
    values, m_obs, _, _ = dataset.stacked()
    count = np.maximum(m_obs.sum(axis=(0, 2)), 1)
    mean = (values * m_obs).sum(axis=(0, 2)) / count
    var = (((values - mean[None, :, None]) ** 2) * m_obs).sum(axis=(0, 2)) / count
    std = np.sqrt(var)
    return FeatureStats(mean, np.where(std > 0, std, 1.0))


def standardize(dataset: Dataset, stats: FeatureStats) -> Dataset:
    windows = [TimeSeriesWindow((w.values - stats.mean[:, None]) / stats.std[:, None], w.masks)
               for w in dataset.windows]
    return Dataset(windows, dataset.K, dataset.L, dataset.seed, dataset.config)


def destandardize(x: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Map arrays of trailing shape (K, L) back to data units"""
    return np.asarray(x) * stats.std[:, None] + stats.mean[:, None]


def window_to_csv(window: TimeSeriesWindow, path: str):
    """Write ``feature,time,value,obs,cond,target`` rows of one window"""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['feature', 'time', 'value', 'obs', 'cond', 'target'])
        _write_window_rows(writer, window)


def windows_to_csv(windows: List[TimeSeriesWindow], path: str):
    """Write several windows into one CSV with an extra leading ``window`` column"""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['window', 'feature', 'time', 'value', 'obs', 'cond', 'target'])
        for i, w in enumerate(windows):
            _write_window_rows(writer, w, prefix=[i])


def _write_window_rows(writer, window, prefix=()):
    K, L = window.values.shape
    grid = time_grid(L)
    m = window.masks
    for k in range(K):
        for t in range(L):
            writer.writerow(list(prefix) + [k + 1, repr(float(grid[t])),
                                            repr(float(window.values[k, t])), int(m.m_obs[k, t]),
                                            int(m.m_cond[k, t]), int(m.m_target[k, t])])

