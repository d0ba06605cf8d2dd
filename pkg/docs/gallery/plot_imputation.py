"""
.. _imputation_tutorial:

Conditional Imputation of Time Series
=====================================

A conditional Schrödinger bridge learns a backward drift that maps the prior of the reference
diffusion onto windows of a multivariate time series, given the observed conditions. This
tutorial trains a deliberately tiny model on synthetic sinusoids and draws imputations for a
window with a missing block.
"""

import matplotlib.pyplot as plt
import numpy as np

from sbridge.csbi import TrainConfig, impute, train
from sbridge.data import SignalConfig, TargetStrategy, feature_stats, generate, split_dataset, standardize, \
    destandardize, time_grid
from sbridge.metrics import evaluate
from sbridge.neural import EmbeddingSpec
from sbridge.sde import SdeSpec

###############################################################################
# Synthetic data
# --------------
#
# Each window holds ``K`` noisy sinusoid mixtures sharing one random phase shift. The target
# strategy hides a consecutive block of every feature.

data_config = SignalConfig(K=2, L=20, noise_sigma=0.05, n_samples=60,
                           strategy=TargetStrategy('consecutive_block', 6))
dataset = generate(data_config, 0)
train_set, val_set = split_dataset(dataset)
stats = feature_stats(train_set)

###############################################################################
# Training
# --------
#
# A short score-matching warmup is followed by one stage of alternating likelihood training.

config = TrainConfig(sde=SdeSpec(sigma_max=5.0, n_steps=25), hidden=(32,), embedding=EmbeddingSpec(time_width=8),
                     warmup_iters=100, stages=1, iters_per_stage=20, refresh_period=10, batch_size=16,
                     cache_paths=32)
pair, log = train(config, standardize(train_set, stats))

###############################################################################
# Imputation
# ----------

window = val_set[0]
x_cond = (window.values - stats.mean[:, None]) / stats.std[:, None] * window.masks.m_cond
samples = destandardize(impute(pair.backward, x_cond, window.masks.m_cond, 50, config.sde, 1), stats)
samples = np.where(window.masks.m_cond, window.values, samples)
report = evaluate(samples, window.values, window.masks.m_target)
print("rmse %.3f, crps %.3f" % (report.rmse, report.crps))

grid = time_grid(data_config.L)
median, q10, q90 = np.quantile(samples, [0.5, 0.1, 0.9], axis=0)
fig, axes = plt.subplots(data_config.K, 1, figsize=(6, 5), sharex=True)
for k, ax in enumerate(axes):
    ax.fill_between(grid, q10[k], q90[k], alpha=0.3)
    ax.plot(grid, median[k])
    ax.plot(grid[window.masks.m_cond[k]], window.values[k][window.masks.m_cond[k]], '.', label='condition')
    ax.plot(grid[window.masks.m_target[k]], window.values[k][window.masks.m_target[k]], 'x', label='target')
axes[0].legend()
fig.tight_layout()
