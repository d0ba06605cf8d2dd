"""
Discrete entropic optimal transport with exact and perturbed IPF (Sinkhorn) half-steps.

Couplings are plain ``(n, m)`` float arrays of the form ``pi_ij = exp(phi_i + psi_j - c_ij) mu_i nu_j``;
all arithmetic on potentials is carried out in log-space with ``scipy.special.logsumexp`` and
``+inf`` costs mark forbidden transitions.

The approximate IPF driver records, after every full iteration ``k``,

* ``kl_mu = KL(mu_2k | mu_star)``, the row marginal of the coupling after the psi half-step,
* ``kl_nu = KL(nu_star | nu_{2k-1})``, the column marginal of the coupling after the previous phi half-step,
* ``objective = KL(pi_2k | G)`` with ``G`` the Gibbs coupling,
* the Schrodinger residuals ``r1, r2`` against the true marginals,
* the dual value and the step divergences ``KL(pi_2k | pi_2k-1) + KL(pi_2k-1 | pi_2k-2)``.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar, nnls
from scipy.special import logsumexp, rel_entr

from hdmf.utils import docval, getargs

from .errors import AbsoluteContinuityError, DegenerateCostError, DomainError, ValidationError
from .sde import SdeSpec, eot_cost

logger = logging.getLogger(__name__)

TRACE_HEADER = ('k', 'kl_mu', 'kl_nu', 'objective', 'r1', 'r2')

MIN_WEIGHT = 1e-300
ORACLE_ITERS = 2000
ORACLE_TOL = 1e-11


class DiscreteMarginal:
    """
    A probability vector on a finite support in R^d.

    Atoms with weight exactly zero are dropped; positive weights below ``1e-300`` are rejected.
    """

    @docval({'name': 'support', 'type': 'array_data', 'doc': 'atom locations, shape (n, d) or (n,)'},
            {'name': 'weights', 'type': 'array_data', 'doc': 'nonnegative weights summing to 1, shape (n,)'},
            {'name': 'atol', 'type': float, 'doc': 'tolerance on the total mass', 'default': 1e-12})
    def __init__(self, **kwargs):
        support, weights, atol = getargs('support', 'weights', 'atol', kwargs)
        support = np.asarray(support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 1 or weights.shape[0] != support.shape[0]:
            raise ValidationError("weights of shape %s do not match support of shape %s"
                                  % (weights.shape, support.shape))
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValidationError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(support)):
            raise ValidationError("support must be finite")
        keep = weights > 0
        if np.any(weights[keep] < MIN_WEIGHT):
            raise ValidationError("atom weights below %g are not supported" % MIN_WEIGHT)
        if not keep.any():
            raise ValidationError("a marginal needs at least one atom with positive weight")
        if abs(weights.sum() - 1.0) > atol:
            raise ValidationError("weights sum to %.17g, expected 1" % weights.sum())
        self.__support = support[keep]
        self.__weights = weights[keep]

    @classmethod
    def normalized(cls, support, weights):
        """Build a marginal from unnormalized nonnegative weights"""
        weights = np.asarray(weights, dtype=float)
        return cls(support, weights / weights.sum())

    @property
    def support(self) -> np.ndarray:
        return self.__support

    @property
    def weights(self) -> np.ndarray:
        return self.__weights

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.__weights)

    def __len__(self):
        return self.__weights.shape[0]

    def __repr__(self):
        return "%s(n=%d, d=%d)" % (self.__class__.__name__, len(self), self.__support.shape[1])


@dataclass(frozen=True)
class PotentialPair:
    """Schrodinger potentials phi (on the mu support) and psi (on the nu support)"""
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.psi))):
            raise DomainError("potentials must be finite")

    def shifted(self, a: float) -> 'PotentialPair':
        """The gauge-equivalent pair (phi + a, psi - a)"""
        return PotentialPair(self.phi + a, self.psi - a)


@dataclass
class ConvergenceTrace:
    """Per-iteration records of an (approximate) IPF run, iteration k = 1..n"""
    kl_mu: np.ndarray
    kl_nu: np.ndarray
    objective: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    dual: Optional[np.ndarray] = None
    kl_step: Optional[np.ndarray] = None
    kl_star: Optional[np.ndarray] = None
    eps: float = 0.0
    bound: Optional[float] = None
    potentials: Optional[PotentialPair] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.kl_mu)
        for name in ('kl_nu', 'objective', 'r1', 'r2', 'dual', 'kl_step', 'kl_star'):
            value = getattr(self, name)
            if value is not None and len(value) != n:
                raise ValidationError("trace column %s has %d records, expected %d" % (name, len(value), n))

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, len(self.kl_mu) + 1)

    def __len__(self):
        return len(self.kl_mu)


@dataclass(frozen=True)
class EotObjective:
    """The two terms of the EOT objective: sum(c pi) and KL(pi | mu x nu)"""
    transport: float
    entropy_reg: float

    @property
    def total(self) -> float:
        return self.transport + self.entropy_reg


@dataclass(frozen=True)
class TraceDiagnostics:
    """
    Diagnostics of a trace: bounded partial sums of step divergences, approximate
    monotonicity of kl_mu and the fitted envelope ``A/k + B``.
    """
    partial_sums: Optional[np.ndarray]
    bound: Optional[float]
    bound_ok: Optional[bool]
    violations: int
    slack: float
    fit_a: float
    fit_b: float

    def to_dict(self) -> dict:
        return {'partial_sums': None if self.partial_sums is None else self.partial_sums.tolist(),
                'bound': self.bound,
                'bound_ok': self.bound_ok,
                'violations': self.violations,
                'slack': self.slack,
                'fit_a': self.fit_a,
                'fit_b': self.fit_b}


def _check_cost(cost: np.ndarray, n: int, m: int) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (n, m):
        raise DomainError("cost of shape %s does not match marginals of sizes (%d, %d)" % (cost.shape, n, m))
    if np.any(np.isnan(cost)) or np.any(cost == -np.inf):
        raise DomainError("cost must not contain NaN or -inf")
    if np.any(np.all(np.isinf(cost), axis=1)) or np.any(np.all(np.isinf(cost), axis=0)):
        raise DegenerateCostError("cost has a row or column that forbids every transition")
    return cost


def _check_vector(v, n: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DomainError("%s must have shape (%d,), got %s" % (what, n, v.shape))
    if np.any(np.isnan(v)):
        raise DomainError("%s contains NaN" % what)
    return v


def _log_coupling(phi, psi, cost, mu, nu):
    return phi[:, None] + psi[None, :] - cost + mu.log_weights[:, None] + nu.log_weights[None, :]


@docval({'name': 'cost', 'type': 'array_data', 'doc': 'n x m cost matrix'},
        {'name': 'mu', 'type': DiscreteMarginal, 'doc': 'row marginal'},
        {'name': 'nu', 'type': DiscreteMarginal, 'doc': 'column marginal'},
        is_method=False, returns='(G, log Z)', rtype=tuple)
def gibbs_coupling(**kwargs):
    """The Gibbs coupling G_ij = exp(-c_ij) mu_i nu_j / Z and its log-normalizer"""
    cost, mu, nu = getargs('cost', 'mu', 'nu', kwargs)
    cost = _check_cost(cost, len(mu), len(nu))
    log_g = -cost + mu.log_weights[:, None] + nu.log_weights[None, :]
    log_z = float(logsumexp(log_g))
    return np.exp(log_g - log_z), log_z


def ipf_psi_step(phi, cost, mu: DiscreteMarginal) -> np.ndarray:
    """psi_j = -logsumexp_i(phi_i - c_ij + log mu_i); afterwards the nu-marginal is exact"""
    cost = np.asarray(cost, dtype=float)
    phi = _check_vector(phi, len(mu), 'phi')
    if cost.shape[0] != len(mu):
        raise DomainError("cost has %d rows, mu has %d atoms" % (cost.shape[0], len(mu)))
    if np.any(np.isnan(cost)):
        raise DomainError("cost contains NaN")
    return -logsumexp(phi[:, None] - cost + mu.log_weights[:, None], axis=0)


def ipf_phi_step(psi, cost, nu: DiscreteMarginal) -> np.ndarray:
    """phi_i = -logsumexp_j(psi_j - c_ij + log nu_j); afterwards the mu-marginal is exact"""
    cost = np.asarray(cost, dtype=float)
    psi = _check_vector(psi, len(nu), 'psi')
    if cost.shape[1] != len(nu):
        raise DomainError("cost has %d columns, nu has %d atoms" % (cost.shape[1], len(nu)))
    if np.any(np.isnan(cost)):
        raise DomainError("cost contains NaN")
    return -logsumexp(psi[None, :] - cost + nu.log_weights[None, :], axis=1)


@docval({'name': 'm', 'type': DiscreteMarginal, 'doc': 'the marginal to perturb'},
        {'name': 'eps', 'type': (int, float), 'doc': 'tilt amplitude, >= 0'},
        {'name': 'rng', 'type': np.random.Generator, 'doc': 'random stream for the tilt', 'default': None},
        is_method=False, returns='the tilted marginal', rtype=DiscreteMarginal)
def perturb_marginal(**kwargs):
    """
    Tilt the log-weights by ``eps * sin(<a, x> + b)`` with a random unit direction ``a`` and
    phase ``b ~ U(0, 2 pi)``, then renormalize.
    """
    m, eps, rng = getargs('m', 'eps', 'rng', kwargs)
    if not eps >= 0:
        raise DomainError("eps must be nonnegative, got %r" % (eps,))
    if eps == 0:
        return m
    d = m.support.shape[1]
    a = rng.standard_normal(d)
    a /= np.linalg.norm(a)
    b = rng.uniform(0.0, 2.0 * math.pi)
    log_w = m.log_weights + eps * np.sin(m.support @ a + b)
    return DiscreteMarginal(m.support, np.exp(log_w - logsumexp(log_w)))


def coupling_from_potentials(pp: PotentialPair, cost, mu: DiscreteMarginal, nu: DiscreteMarginal) -> np.ndarray:
    """pi_ij = exp(phi_i + psi_j - c_ij) mu_i nu_j, without renormalization"""
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (len(mu), len(nu)) or pp.phi.shape != (len(mu),) or pp.psi.shape != (len(nu),):
        raise DomainError("potentials, cost and marginals have inconsistent shapes")
    return np.exp(_log_coupling(pp.phi, pp.psi, cost, mu, nu))


def schrodinger_residuals(pp: PotentialPair, cost, mu: DiscreteMarginal, nu: DiscreteMarginal) -> Tuple[float, float]:
    """
    Sup-norm residuals of the discrete Schrodinger equations:
    ``r1 = max_j |sum_i e^(phi_i+psi_j-c_ij) mu_i - 1|`` and ``r2 = max_i |sum_j e^(phi_i+psi_j-c_ij) nu_j - 1|``.
    """
    pi = coupling_from_potentials(pp, cost, mu, nu)
    r1 = np.max(np.abs(pi.sum(axis=0) / nu.weights - 1.0))
    r2 = np.max(np.abs(pi.sum(axis=1) / mu.weights - 1.0))
    return float(r1), float(r2)


def _as_array(p):
    return p.weights if isinstance(p, DiscreteMarginal) else np.asarray(p, dtype=float)


def kl(p, q) -> float:
    """KL(p | q) = sum p log(p / q) with 0 log 0 = 0 for marginals or couplings of one shape"""
    p, q = _as_array(p), _as_array(q)
    if p.shape != q.shape:
        raise DomainError("KL arguments have shapes %s and %s" % (p.shape, q.shape))
    if np.any((q <= 0) & (p > 0)):
        raise AbsoluteContinuityError("p is not absolutely continuous with respect to q")
    return max(float(np.sum(rel_entr(p, q))), 0.0)


def eot_objective(pi, cost, mu: DiscreteMarginal, nu: DiscreteMarginal) -> EotObjective:
    """Split the EOT objective into sum(c pi) and KL(pi | mu x nu)"""
    pi = np.asarray(pi, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if pi.shape != cost.shape or pi.shape != (len(mu), len(nu)):
        raise DomainError("coupling, cost and marginals have inconsistent shapes")
    if np.any(np.isinf(cost) & (pi > 0)):
        raise AbsoluteContinuityError("coupling puts mass on a forbidden transition")
    transport = float(np.sum(np.where(pi > 0, pi * np.where(np.isinf(cost), 0.0, cost), 0.0)))
    return EotObjective(transport, kl(pi, np.outer(mu.weights, nu.weights)))


def dual_value(pp: PotentialPair, cost, mu: DiscreteMarginal, nu: DiscreteMarginal, log_z: float) -> float:
    """
    Sinkhorn dual ``mu(phi) + nu(psi) - log mass(pi) + log Z``; it is nondecreasing under exact
    half-steps and equals KL(pi_star | G) at the fixed point.
    """
    log_mass = logsumexp(_log_coupling(pp.phi, pp.psi, np.asarray(cost, dtype=float), mu, nu))
    return float(mu.weights @ pp.phi + nu.weights @ pp.psi - log_mass + log_z)


def run_exact_ipf(mu: DiscreteMarginal, nu: DiscreteMarginal, cost, n_iters: int = 2000,
                  tol: float = 0.0) -> PotentialPair:
    """
    Run exact Sinkhorn from phi = 0, ending on a phi half-step; stop early once both residuals
    fall below ``tol``.
    """
    cost = _check_cost(cost, len(mu), len(nu))
    phi = np.zeros(len(mu))
    psi = np.zeros(len(nu))
    for it in range(n_iters):
        psi = ipf_psi_step(phi, cost, mu)
        phi = ipf_phi_step(psi, cost, nu)
        if tol > 0 and max(schrodinger_residuals(PotentialPair(phi, psi), cost, mu, nu)) < tol:
            logger.debug("exact IPF converged after %d iterations" % (it + 1))
            break
    return PotentialPair(phi, psi)


def sublinear_bound_constant(pi_star, cost, mu: DiscreteMarginal, nu: DiscreteMarginal) -> float:
    """
    The leading constant ``KL(pi_star | G) - KL(pi_0 | G)`` of the sublinear marginal rate, where
    pi_0 is the coupling after the first exact psi half-step from phi = 0.
    """
    cost = _check_cost(cost, len(mu), len(nu))
    g, _ = gibbs_coupling(cost, mu, nu)
    phi = np.zeros(len(mu))
    pi_0 = coupling_from_potentials(PotentialPair(phi, ipf_psi_step(phi, cost, mu)), cost, mu, nu)
    return kl(pi_star, g) - kl(pi_0, g)


@docval({'name': 'mu_star', 'type': DiscreteMarginal, 'doc': 'target row marginal'},
        {'name': 'nu_star', 'type': DiscreteMarginal, 'doc': 'target column marginal'},
        {'name': 'cost', 'type': 'array_data', 'doc': 'n x m cost matrix'},
        {'name': 'eps', 'type': (int, float), 'doc': 'approximation level of each half-step, >= 0'},
        {'name': 'n_iters', 'type': int, 'doc': 'number of full iterations, >= 1'},
        {'name': 'rng', 'type': np.random.Generator, 'doc': 'random stream for the marginal tilts',
         'default': None},
        {'name': 'phi0', 'type': 'array_data', 'doc': 'initial phi potential (zeros by default)', 'default': None},
        {'name': 'pi_star', 'type': 'array_data',
         'doc': 'reference optimum; if given, KL(pi_star | pi_2k) is traced and the bound constant uses it '
                'instead of an exact IPF oracle run', 'default': None},
        is_method=False, returns='the convergence trace', rtype=ConvergenceTrace)
def run_aipf(**kwargs):
    """
    Approximate IPF: alternating psi/phi half-steps where every half-step projects onto a freshly
    tilted copy of its target marginal. With ``eps = 0`` this is exact Sinkhorn.

    The trace carries the bound constant ``KL(pi_star | G) - KL(pi_0 | G)`` that :func:`diagnose_trace`
    checks the partial sums against.
    """
    mu_star, nu_star, cost, eps, n_iters, rng, phi0, pi_star = getargs(
        'mu_star', 'nu_star', 'cost', 'eps', 'n_iters', 'rng', 'phi0', 'pi_star', kwargs)
    if n_iters < 1:
        raise ValidationError("n_iters must be >= 1, got %d" % n_iters)
    if not eps >= 0:
        raise DomainError("eps must be nonnegative, got %r" % (eps,))
    if eps > 0 and rng is None:
        raise ValidationError("run_aipf needs an rng when eps > 0")
    cost = _check_cost(cost, len(mu_star), len(nu_star))
    g, log_z = gibbs_coupling(cost, mu_star, nu_star)
    mu_tilde, nu_tilde = mu_star, nu_star

    def psi_half_step(phi):
        nonlocal nu_tilde
        nu_tilde = perturb_marginal(nu_star, eps, rng)
        psi = ipf_psi_step(phi, cost, mu_tilde)
        return psi, np.exp(_log_coupling(phi, psi, cost, mu_tilde, nu_tilde))

    def phi_half_step(psi):
        nonlocal mu_tilde
        mu_tilde = perturb_marginal(mu_star, eps, rng)
        phi = ipf_phi_step(psi, cost, nu_tilde)
        return phi, np.exp(_log_coupling(phi, psi, cost, mu_tilde, nu_tilde))

    phi = np.zeros(len(mu_star)) if phi0 is None else _check_vector(phi0, len(mu_star), 'phi0')
    psi, pi_even = psi_half_step(phi)
    phi, pi_odd = phi_half_step(psi)

    columns = {name: np.empty(n_iters) for name in ('kl_mu', 'kl_nu', 'objective', 'r1', 'r2', 'dual', 'kl_step')}
    kl_star = None if pi_star is None else np.empty(n_iters)
    for k in range(n_iters):
        psi, pi_next = psi_half_step(phi)
        pp = PotentialPair(phi, psi)
        columns['kl_mu'][k] = kl(pi_next.sum(axis=1), mu_star.weights)
        columns['kl_nu'][k] = kl(nu_star.weights, pi_odd.sum(axis=0))
        columns['objective'][k] = kl(pi_next, g)
        columns['r1'][k], columns['r2'][k] = schrodinger_residuals(pp, cost, mu_star, nu_star)
        columns['dual'][k] = dual_value(pp, cost, mu_star, nu_star, log_z)
        columns['kl_step'][k] = kl(pi_next, pi_odd) + kl(pi_odd, pi_even)
        if kl_star is not None:
            kl_star[k] = kl(pi_star, pi_next)
        logger.debug("iteration %d: kl_mu=%.3e, objective=%.6f" % (k + 1, columns['kl_mu'][k],
                                                                   columns['objective'][k]))
        pi_even = pi_next
        phi, pi_odd = phi_half_step(psi)
    if pi_star is None:
        pi_star = coupling_from_potentials(run_exact_ipf(mu_star, nu_star, cost, ORACLE_ITERS, tol=ORACLE_TOL), cost,
                                           mu_star, nu_star)
    bound = sublinear_bound_constant(pi_star, cost, mu_star, nu_star)
    return ConvergenceTrace(eps=float(eps), kl_star=kl_star, bound=bound, potentials=PotentialPair(phi, psi),
                            **columns)


@docval({'name': 'trace', 'type': ConvergenceTrace, 'doc': 'trace of an IPF run'},
        {'name': 'eps', 'type': (int, float), 'doc': 'approximation level the trace was produced with'},
        {'name': 'slack', 'type': (int, float), 'doc': 'monotonicity slack constant c (violation if > c eps)',
         'default': 10.0},
        {'name': 'bound', 'type': (int, float),
         'doc': 'fixed constant bounding the partial sums (defaults to the bound carried by the trace)',
         'default': None},
        {'name': 'tail_fraction', 'type': float, 'doc': 'trailing fraction of the trace used for the fit',
         'default': 0.5},
        {'name': 'atol', 'type': float, 'doc': 'absolute round-off tolerance of the monotonicity check',
         'default': 1e-12},
        is_method=False, returns='trace diagnostics', rtype=TraceDiagnostics)
def diagnose_trace(**kwargs):
    """
    Check a trace against the sublinear-rate picture: partial sums of step divergences stay below
    ``bound + slack * eps * n``, kl_mu decreases up to ``slack * eps``, and kl_mu follows ``A/k + B``
    (nonnegative least squares on the trailing part of the trace).
    """
    trace, eps, slack, bound, tail_fraction, atol = getargs(
        'trace', 'eps', 'slack', 'bound', 'tail_fraction', 'atol', kwargs)
    n = len(trace)
    if n == 0:
        raise ValidationError("cannot diagnose an empty trace")
    if not 0 < tail_fraction <= 1:
        raise ValidationError("tail_fraction must lie in (0, 1], got %g" % tail_fraction)
    if bound is None:
        bound = trace.bound
    partial_sums = None if trace.kl_step is None else np.cumsum(trace.kl_step)
    bound_ok = None
    if partial_sums is not None and bound is not None:
        bound_ok = bool(np.all(partial_sums <= bound + slack * eps * np.arange(1, n + 1) + atol))
    violations = int(np.sum(np.diff(trace.kl_mu) > slack * eps + atol))

    start = min(int(n * (1.0 - tail_fraction)), n - 1)
    k = trace.k[start:].astype(float)
    design = np.column_stack([1.0 / k, np.ones_like(k)])
    (fit_a, fit_b), _ = nnls(design, trace.kl_mu[start:])
    return TraceDiagnostics(partial_sums=partial_sums, bound=None if bound is None else float(bound),
                            bound_ok=bound_ok, violations=violations, slack=float(slack),
                            fit_a=float(fit_a), fit_b=float(fit_b))


def trace_to_csv(trace: ConvergenceTrace, path: str):
    """Write the trace as CSV with header ``k,kl_mu,kl_nu,objective,r1,r2``"""
    table = np.column_stack([trace.k, trace.kl_mu, trace.kl_nu, trace.objective, trace.r1, trace.r2])
    np.savetxt(path, table, delimiter=',', header=','.join(TRACE_HEADER), comments='',
               fmt=['%d'] + ['%.17g'] * (len(TRACE_HEADER) - 1))


def trace_from_csv(path: str) -> ConvergenceTrace:
    """Read a trace written by trace_to_csv"""
    with open(path) as f:
        header = f.readline().strip()
    if tuple(header.split(',')) != TRACE_HEADER:
        raise ValidationError("unexpected trace header %r" % header)
    table = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    if not np.array_equal(table[:, 0], np.arange(1, table.shape[0] + 1)):
        raise ValidationError("trace iterations in %s are not numbered 1..n" % path)
    return ConvergenceTrace(*(table[:, i] for i in range(1, len(TRACE_HEADER))))


def random_instance(n: int, m: int, d: int, spec: SdeSpec, reg: float, rng: np.random.Generator):
    """
    A seeded EOT instance with supports uniform in the unit box, weights uniform in [0.5, 1.5]
    (normalized) and the cost induced by the constant-coefficient kernel with regularizer ``reg``.

    :returns: (mu, nu, cost)
    """
    xs = rng.uniform(0.0, 1.0, (n, d))
    ys = rng.uniform(0.0, 1.0, (m, d))
    mu = DiscreteMarginal.normalized(xs, rng.uniform(0.5, 1.5, n))
    nu = DiscreteMarginal.normalized(ys, rng.uniform(0.5, 1.5, m))
    return mu, nu, eot_cost(spec, reg, xs, ys)


def brute_force_2x2(mu: DiscreteMarginal, nu: DiscreteMarginal, cost, n_grid: int = 20001):
    """
    Minimize the EOT objective over the one-parameter transport polytope of a 2 x 2 problem,
    ``pi = [[a, mu_1 - a], [nu_1 - a, 1 - mu_1 - nu_1 + a]]``, by grid search refined with a bounded
    scalar search around the best grid cell.

    :returns: (pi, objective value)
    """
    cost = _check_cost(cost, 2, 2)
    if len(mu) != 2 or len(nu) != 2:
        raise DomainError("brute_force_2x2 needs two atoms per marginal")
    mu1, nu1 = mu.weights[0], nu.weights[0]
    lo, hi = max(0.0, mu1 + nu1 - 1.0), min(mu1, nu1)

    def coupling(a):
        return np.array([[a, mu1 - a], [nu1 - a, 1.0 - mu1 - nu1 + a]]).clip(min=0.0)

    def objective(a):
        try:
            return eot_objective(coupling(a), cost, mu, nu).total
        except AbsoluteContinuityError:
            return np.inf

    grid = np.linspace(lo, hi, n_grid)
    values = np.array([objective(a) for a in grid])
    best = int(np.argmin(values))
    bracket = (grid[max(best - 1, 0)], grid[min(best + 1, n_grid - 1)])
    refined = minimize_scalar(objective, bounds=bracket, method='bounded', options={'xatol': 1e-14})
    a = refined.x if refined.success and refined.fun < values[best] else grid[best]
    return coupling(a), float(min(values[best], objective(a)))
