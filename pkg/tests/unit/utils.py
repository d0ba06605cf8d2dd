import tempfile

import numpy as np

from sbridge.csbi import TrainConfig
from sbridge.data import SignalConfig, TargetStrategy, generate
from sbridge.neural import EmbeddingSpec
from sbridge.sde import SdeSpec
from sbridge.sinkhorn import DiscreteMarginal, random_instance
from sbridge.utils import stream


def get_temp_filepath():
    # The temp file is closed right away; callers remove it during the tearDown step.
    temp_file = tempfile.NamedTemporaryFile()
    temp_file.close()
    return temp_file.name


def small_instance(seed=0, n=16, m=16, d=2, reg=0.5):
    """The seeded 16 x 16 VE-cost EOT instance used across the Sinkhorn tests"""
    return random_instance(n, m, d, SdeSpec(), reg, stream(seed, 20))


def two_point(a, b):
    return DiscreteMarginal.normalized(np.array([[0.0], [1.0]]), np.array([a, b]))


def tiny_dataset(n_samples=12, K=2, L=6, seed=0, block=2):
    cfg = SignalConfig(K=K, L=L, noise_sigma=0.1, n_samples=n_samples,
                       strategy=TargetStrategy('consecutive_block', block))
    return generate(cfg, seed)


def tiny_train_config(**kwargs):
    """A training configuration that runs in well under a second"""
    settings = dict(sde=SdeSpec(sigma_max=2.0, n_steps=5), hidden=(8,),
                    embedding=EmbeddingSpec(time_width=4), warmup_iters=3, stages=1, iters_per_stage=2,
                    refresh_period=2, batch_size=4, cache_paths=8, seed=0)
    settings.update(kwargs)
    return TrainConfig(**settings)
