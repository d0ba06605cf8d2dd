"""
.. _sinkhorn_tutorial:

Approximate IPF Convergence
===========================

Iterative proportional fitting (IPF, i.e., Sinkhorn) alternately matches the row and column
marginals of an entropic optimal transport coupling. When every half-step only hits its
marginal up to a multiplicative tilt of size ``eps``, the iteration no longer converges to the
optimum but to a neighbourhood whose size grows with ``eps``.

This tutorial runs :py:func:`~sbridge.sinkhorn.run_aipf` on a small random instance with the
cost induced by the variance-exploding reference diffusion and fits the ``A / k + B`` envelope
with :py:func:`~sbridge.sinkhorn.diagnose_trace`.
"""
# sphinx_gallery_thumbnail_number = 1

import matplotlib.pyplot as plt
import numpy as np

from sbridge.sde import SdeSpec
from sbridge.sinkhorn import (coupling_from_potentials, diagnose_trace, random_instance, run_aipf,
                              run_exact_ipf, sublinear_bound_constant)
from sbridge.utils import stream

###############################################################################
# A seeded instance and its exact optimum
# ---------------------------------------
#
# The exact IPF run serves as the oracle; the bound constant is the largest value the partial
# sums of the marginal KL divergences may reach for exact iterations.

mu, nu, cost = random_instance(16, 16, 2, SdeSpec(), 0.5, stream(0, 20))
oracle = run_exact_ipf(mu, nu, cost, 2000)
pi_star = coupling_from_potentials(oracle, cost, mu, nu)
bound = sublinear_bound_constant(pi_star, cost, mu, nu)

###############################################################################
# Sweeping the approximation level
# --------------------------------

fig, ax = plt.subplots(figsize=(6, 4))
for eps in (0.0, 1e-4, 1e-3, 1e-2):
    trace = run_aipf(mu, nu, cost, eps, 200, rng=stream(0, 21, 0), pi_star=pi_star)
    diagnostics = diagnose_trace(trace, eps, bound=bound)
    ax.loglog(trace.k, np.maximum(trace.kl_mu, 1e-16), label="eps=%g (B=%.2e)" % (eps, diagnostics.fit_b))
ax.set_xlabel("iteration k")
ax.set_ylabel("KL(mu_2k | mu)")
ax.legend()
fig.tight_layout()
