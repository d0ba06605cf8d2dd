"""Masked point metrics and the quantile-loss CRPS estimator over imputation samples"""
import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from hdmf.utils import docval, getargs

from .errors import ValidationError

QUANTILE_LEVELS = np.arange(1, 20) / 20.0

CRPS_CONVENTION = ("mean over quantile levels 0.05..0.95 of 2 (y - q) (level - 1[y < q]) summed over target "
                   "entries, divided by the sum of |truth| over target entries; empirical quantiles with "
                   "linear interpolation between order statistics")


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    crps: float
    crps_unnormalized: float
    crps_normalized: bool
    n_target_entries: int
    n_samples: int
    convention: str = CRPS_CONVENTION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> 'MetricReport':
        return cls(**json.loads(text))


def _target_mask(m_target, shape) -> np.ndarray:
    m_target = np.asarray(m_target).astype(bool)
    if m_target.shape != shape:
        raise ValidationError("target mask of shape %s does not match truth of shape %s" % (m_target.shape, shape))
    if not m_target.any():
        raise ValidationError("target mask is empty")
    return m_target


@docval({'name': 'point_estimate', 'type': 'array_data', 'doc': 'per-entry point estimate, e.g. the sample median'},
        {'name': 'truth', 'type': 'array_data', 'doc': 'ground truth of the same shape'},
        {'name': 'm_target', 'type': 'array_data', 'doc': 'entries to score'},
        is_method=False, returns='(rmse, mae) over the target entries', rtype=tuple)
def rmse_mae(**kwargs):
    """Root mean square and mean absolute error restricted to the target entries"""
    point, truth, m_target = getargs('point_estimate', 'truth', 'm_target', kwargs)
    truth = np.asarray(truth, dtype=float)
    point = np.asarray(point, dtype=float)
    if point.shape != truth.shape:
        raise ValidationError("estimate of shape %s does not match truth of shape %s" % (point.shape, truth.shape))
    m_target = _target_mask(m_target, truth.shape)
    err = point[m_target] - truth[m_target]
    return float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err)))


def _quantile_loss_sum(samples: np.ndarray, truth: np.ndarray, m_target: np.ndarray) -> float:
    """Quantile losses summed over target entries and averaged over the levels"""
    quantiles = np.quantile(samples, QUANTILE_LEVELS, axis=0, method='linear')
    y = truth[None, ...]
    levels = QUANTILE_LEVELS.reshape((-1,) + (1,) * truth.ndim)
    loss = 2.0 * (y - quantiles) * (levels - (y < quantiles))
    return float(np.mean(np.sum(loss[:, m_target], axis=1)))


def _check_samples(samples, truth):
    samples = np.asarray(samples, dtype=float)
    if samples.shape[1:] != truth.shape:
        raise ValidationError("samples of shape %s do not match truth of shape %s" % (samples.shape, truth.shape))
    if samples.shape[0] < 2:
        raise ValidationError("CRPS needs at least two samples, got %d" % samples.shape[0])
    return samples


@docval({'name': 'samples', 'type': 'array_data', 'doc': 'samples with the sample axis first, shape (n, ...)'},
        {'name': 'truth', 'type': 'array_data', 'doc': 'ground truth'},
        {'name': 'm_target', 'type': 'array_data', 'doc': 'entries to score'},
        {'name': 'normalize', 'type': bool, 'doc': 'divide by the sum of |truth| over the target entries',
         'default': True},
        is_method=False, returns='the CRPS estimate', rtype=float)
def crps(**kwargs):
    """
    CRPS estimated by quantile losses over 19 levels. If normalization is requested but the target
    truth is all zero, the unnormalized value is returned with a warning.
    """
    samples, truth, m_target, normalize = getargs('samples', 'truth', 'm_target', 'normalize', kwargs)
    truth = np.asarray(truth, dtype=float)
    samples = _check_samples(samples, truth)
    m_target = _target_mask(m_target, truth.shape)
    value = _quantile_loss_sum(samples, truth, m_target)
    if not normalize:
        return value / m_target.sum()
    denominator = np.sum(np.abs(truth[m_target]))
    if denominator == 0:
        warnings.warn("truth is zero on every target entry, CRPS is reported unnormalized")
        return value / m_target.sum()
    return value / denominator


@docval({'name': 'samples', 'type': 'array_data',
         'doc': 'imputation samples, shape (n, K, L) or (windows, n, K, L)'},
        {'name': 'truth', 'type': 'array_data', 'doc': 'ground truth, shape (K, L) or (windows, K, L)'},
        {'name': 'm_target', 'type': 'array_data', 'doc': 'target mask, same shape as truth'},
        is_method=False, returns='the metric report', rtype=MetricReport)
def evaluate(**kwargs):
    """Score samples with the median as point estimate; both CRPS normalizations are reported"""
    samples, truth, m_target = getargs('samples', 'truth', 'm_target', kwargs)
    truth = np.asarray(truth, dtype=float)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == truth.ndim + 1 and samples.ndim == 4:
        samples = np.moveaxis(samples, 1, 0)
    samples = _check_samples(samples, truth)
    m_target = _target_mask(m_target, truth.shape)
    rmse, mae = rmse_mae(np.median(samples, axis=0), truth, m_target)
    loss = _quantile_loss_sum(samples, truth, m_target)
    unnormalized = loss / m_target.sum()
    denominator = np.sum(np.abs(truth[m_target]))
    normalized = denominator > 0
    if not normalized:
        warnings.warn("truth is zero on every target entry, CRPS is reported unnormalized")
    return MetricReport(rmse=rmse, mae=mae, crps=loss / denominator if normalized else unnormalized,
                        crps_unnormalized=unnormalized, crps_normalized=bool(normalized),
                        n_target_entries=int(m_target.sum()), n_samples=int(samples.shape[0]))
