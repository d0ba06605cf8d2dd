"""
On-disk formats: policy checkpoints (flat little-endian f64 parameters plus a JSON sidecar) and
Zarr stores of imputation samples.
"""
import os
import json
import logging
from typing import Optional

import numpy as np
import numcodecs
import zarr

from hdmf.utils import docval, getargs, popargs

from .errors import ValidationError
from .neural import EmbeddingSpec, flatten_params, unflatten_params

CHECKPOINT_FORMAT = 'sbridge-checkpoint'
CHECKPOINT_VERSION = 1
SAMPLE_STORE_VERSION = 1

logger = logging.getLogger(__name__)


def checkpoint_paths(prefix: str):
    """The (binary, sidecar) file names of a checkpoint"""
    return prefix + '.bin', prefix + '.json'


@docval({'name': 'policy', 'type': None, 'doc': 'the csbi.Policy to save'},
        {'name': 'prefix', 'type': str, 'doc': 'path prefix; writes <prefix>.bin and <prefix>.json'},
        {'name': 'step', 'type': int, 'doc': 'training step of the parameters', 'default': 0},
        {'name': 'seed', 'type': int, 'doc': 'seed of the training run', 'default': None},
        {'name': 'extra', 'type': dict, 'doc': 'additional JSON-serializable sidecar entries', 'default': None},
        is_method=False)
def save_checkpoint(**kwargs):
    """Write a policy as flat little-endian f64 parameters with a JSON sidecar"""
    policy, prefix, step, seed, extra = getargs('policy', 'prefix', 'step', 'seed', 'extra', kwargs)
    bin_path, json_path = checkpoint_paths(prefix)
    flat = flatten_params(policy.params)
    flat.tofile(bin_path)
    sidecar = {'format': CHECKPOINT_FORMAT,
               'version': CHECKPOINT_VERSION,
               'dtype': '<f8',
               'n_params': int(flat.size),
               'widths': policy.params.widths,
               'embedding': policy.embedding.to_dict(),
               'K': policy.K,
               'L': policy.L,
               'conditional': policy.conditional,
               'step': step,
               'seed': seed,
               'extra': extra or {}}
    with open(json_path, 'w') as f:
        f.write(json.dumps(sidecar, indent=2))
    logger.info("wrote checkpoint %s (%d parameters)" % (bin_path, flat.size))


def load_checkpoint(prefix: str):
    """
    Read a checkpoint written by save_checkpoint.

    :returns: (csbi.Policy, sidecar dict)
    :raises OSError: if either file is missing
    """
    from .csbi import Policy

    bin_path, json_path = checkpoint_paths(prefix)
    with open(json_path) as f:
        sidecar = json.load(f)
    if sidecar.get('format') != CHECKPOINT_FORMAT:
        raise ValidationError("%s is not a checkpoint sidecar" % json_path)
    flat = np.fromfile(bin_path, dtype='<f8')
    if flat.size != sidecar['n_params']:
        raise ValidationError("%s holds %d parameters, sidecar declares %d" % (bin_path, flat.size,
                                                                               sidecar['n_params']))
    params = unflatten_params(flat.astype(float), sidecar['widths'])
    policy = Policy(params, EmbeddingSpec.from_dict(sidecar['embedding']), sidecar['K'], sidecar['L'],
                    sidecar['conditional'])
    return policy, sidecar


class SampleStore:
    """
    Zarr group holding imputation samples of ``W`` windows: ``samples`` of shape (W, n, K, L), chunked
    per window and compressed with Blosc/zstd, plus ``x_cond``, ``m_cond``, ``m_target`` and ``truth`` of
    shape (W, K, L). Group attributes carry ``n_samples``, ``K``, ``L`` and ``version``.
    """

    @staticmethod
    def can_read(path):
        try:
            group = zarr.open(path, mode="r")
            return 'samples' in group and 'n_samples' in group.attrs
        except Exception:
            return False

    @docval({'name': 'path', 'type': str, 'doc': 'the path to the Zarr store'},
            {'name': 'mode', 'type': str, 'doc': 'the mode to open the store with, one of ("w", "r", "r+", "a")',
             'default': 'r'})
    def __init__(self, **kwargs):
        self.logger = logging.getLogger('%s.%s' % (self.__class__.__module__, self.__class__.__qualname__))
        path, mode = popargs('path', 'mode', kwargs)
        self.__path = path
        self.__mode = mode
        if mode in ('r', 'r+'):
            self.__group = self.__open_consolidated(path, mode)
        else:
            self.__group = zarr.open_group(store=path, mode=mode)

    @staticmethod
    def __open_consolidated(store, mode):
        """Open with consolidated metadata if it exists, else fall back to a plain open"""
        try:
            return zarr.open_consolidated(store=store, mode=mode)
        except KeyError:  # A KeyError is raised when the '/.zmetadata' does not exist
            return zarr.open(store=store, mode=mode)

    @property
    def path(self):
        return self.__path

    @property
    def group(self):
        return self.__group

    @docval({'name': 'n_windows', 'type': int, 'doc': 'number of windows W'},
            {'name': 'n_samples', 'type': int, 'doc': 'samples per window n'},
            {'name': 'K', 'type': int, 'doc': 'number of features'},
            {'name': 'L', 'type': int, 'doc': 'window length'},
            {'name': 'compressor', 'type': (numcodecs.abc.Codec, bool),
             'doc': 'numcodecs compressor; False disables compression', 'default': None})
    def create(self, **kwargs):
        """Allocate the arrays of the store"""
        n_windows, n_samples, K, L, compressor = getargs('n_windows', 'n_samples', 'K', 'L', 'compressor', kwargs)
        if min(n_windows, n_samples, K, L) < 1:
            raise ValidationError("sample store dimensions must be positive")
        if compressor is None:
            compressor = numcodecs.Blosc(cname='zstd', clevel=5, shuffle=numcodecs.Blosc.SHUFFLE)
        elif compressor is False:
            compressor = None
        self.__group.create_dataset('samples', shape=(n_windows, n_samples, K, L), chunks=(1, n_samples, K, L),
                                    dtype='<f8', compressor=compressor, overwrite=True)
        for name, dtype in (('x_cond', '<f8'), ('truth', '<f8'), ('m_cond', 'u1'), ('m_target', 'u1')):
            self.__group.create_dataset(name, shape=(n_windows, K, L), chunks=(1, K, L), dtype=dtype,
                                        compressor=compressor, overwrite=True)
        self.__group.attrs.update({'n_samples': n_samples, 'K': K, 'L': L, 'version': SAMPLE_STORE_VERSION})

    def write_window(self, index: int, samples: np.ndarray, x_cond: np.ndarray, m_cond: np.ndarray,
                     m_target: np.ndarray, truth: np.ndarray):
        """Store the samples and conditioning of one window"""
        if samples.shape != self.__group['samples'].shape[1:]:
            raise ValidationError("samples of shape %s do not fit the store (%s)"
                                  % (samples.shape, self.__group['samples'].shape[1:]))
        self.__group['samples'][index] = samples
        self.__group['x_cond'][index] = x_cond
        self.__group['truth'][index] = truth
        self.__group['m_cond'][index] = np.asarray(m_cond).astype('u1')
        self.__group['m_target'][index] = np.asarray(m_target).astype('u1')

    def consolidate(self):
        zarr.consolidate_metadata(store=self.__path)

    @property
    def n_samples(self) -> int:
        return int(self.__group.attrs['n_samples'])

    @property
    def shape(self):
        return self.__group['samples'].shape

    def read(self, name: str) -> np.ndarray:
        """Load one array of the store into memory; masks are returned as booleans"""
        data = self.__group[name][...]
        return data.astype(bool) if name in ('m_cond', 'm_target') else data


def ensure_directory(path: Optional[str]):
    if path:
        os.makedirs(path, exist_ok=True)
