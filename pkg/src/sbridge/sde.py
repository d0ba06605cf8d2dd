"""
Reference diffusions for the bridge: VE/VP schedules, closed-form transition kernels,
Euler-Maruyama samplers in both time directions, and the EOT cost induced by the kernel.

Two kernel parameterizations are exposed:

* ``form='schedule'`` -- the schedules used for training and imputation
  (VE: ``sigma(t) = sigma_min (sigma_max/sigma_min)^(t/T)``, VP: linear ``beta(t)``).
* ``form='constant'`` -- the constant-coefficient kernels with regularizer ``eps`` used to
  build EOT costs (VE: ``N(x_s, 2 eps (t-s))``, VP: OU kernel with rate ``gamma``).
"""
import math
import logging
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Tuple

import numpy as np

from hdmf.utils import docval, getargs

from .errors import DomainError, ValidationError
from .utils import ParallelMap, check_finite, path_noise, split_evenly

logger = logging.getLogger(__name__)

VE = 'VE'
VP = 'VP'

Policy = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SdeSpec:
    """
    Parameters of the reference diffusion.

    ``gamma`` is only used by the constant-coefficient VP (Ornstein-Uhlenbeck) kernel.
    """
    kind: str = VE
    sigma_min: float = 0.001
    sigma_max: float = 20.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0
    n_steps: int = 100
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in (VE, VP):
            raise ValidationError("SdeSpec.kind must be 'VE' or 'VP', got %r" % (self.kind,))
        if self.kind == VE and not (0 < self.sigma_min < self.sigma_max):
            raise ValidationError("VE requires 0 < sigma_min < sigma_max, got sigma_min=%g, sigma_max=%g"
                                  % (self.sigma_min, self.sigma_max))
        if self.kind == VP and not (0 <= self.beta_min <= self.beta_max):
            raise ValidationError("VP requires 0 <= beta_min <= beta_max, got beta_min=%g, beta_max=%g"
                                  % (self.beta_min, self.beta_max))
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive, got %g" % self.horizon)
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError("n_steps must be a positive integer, got %r" % (self.n_steps,))
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive, got %g" % self.gamma)

    @property
    def step(self) -> float:
        """The uniform step size Delta = T / n_steps"""
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        """The uniform time grid t_i = i * Delta, i = 0..n_steps"""
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def with_steps(self, n_steps: int) -> 'SdeSpec':
        return SdeSpec(**{**asdict(self), 'n_steps': int(n_steps)})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> 'SdeSpec':
        return cls(**d)

    # -- schedule helpers (no domain checks, vectorized over t) --

    def sigma(self, t):
        """VE noise scale sigma(t)"""
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** (np.asarray(t) / self.horizon)

    def beta(self, t):
        """VP rate beta(t)"""
        return self.beta_min + np.asarray(t) / self.horizon * (self.beta_max - self.beta_min)

    def beta_integral(self, s, t):
        """Integral of beta over [s, t]"""
        s, t = np.asarray(s), np.asarray(t)
        return self.beta_min * (t - s) + 0.5 * (self.beta_max - self.beta_min) * (t ** 2 - s ** 2) / self.horizon

    def g(self, t):
        if self.kind == VE:
            return self.sigma(t) * math.sqrt(2.0 * math.log(self.sigma_max / self.sigma_min) / self.horizon)
        return np.sqrt(self.beta(t))

    def drift(self, x, t):
        """The reference drift f(x, t): zero for VE, -beta(t) x / 2 for VP"""
        if self.kind == VE:
            return np.zeros_like(x)
        return -0.5 * self.beta(t) * x


@dataclass(frozen=True)
class PathSample:
    """
    A discretized trajectory (or a batch of trajectories sharing one time grid).

    ``states[i]`` is the state at ``times[i]``; its trailing shape is constant along the path.
    """
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ValidationError("PathSample has %d times but %d states" % (self.times.shape[0],
                                                                             self.states.shape[0]))
        if self.times.shape[0] > 1 and not np.all(np.diff(self.times) > 0):
            raise ValidationError("PathSample times must be strictly increasing")

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def _check_time(spec: SdeSpec, t: float):
    if not (0.0 <= t <= spec.horizon) or not np.isfinite(t):
        raise DomainError("t=%r outside [0, %g]" % (t, spec.horizon))


@docval({'name': 'spec', 'type': SdeSpec, 'doc': 'the reference diffusion'},
        {'name': 't', 'type': (int, float), 'doc': 'time in [0, T]'},
        is_method=False, returns='g(t)', rtype=float)
def diffusion_coefficient(**kwargs):
    """Evaluate the diffusion coefficient g(t) of the configured schedule"""
    spec, t = getargs('spec', 't', kwargs)
    _check_time(spec, t)
    return float(spec.g(t))


def _schedule_kernel(spec: SdeSpec, s: float, t: float):
    """Scale a and variance v of p(x_t | x_s) = N(a x_s, v I) under the schedule"""
    if spec.kind == VE:
        return 1.0, float(spec.sigma(t) ** 2 - spec.sigma(s) ** 2)
    b = float(spec.beta_integral(s, t))
    return math.exp(-0.5 * b), -math.expm1(-b)


def _constant_kernel(spec: SdeSpec, s: float, t: float, eps: float):
    """Scale a and variance v of the constant-coefficient kernel with regularizer eps"""
    if spec.kind == VE:
        return 1.0, 2.0 * eps * (t - s)
    return math.exp(-spec.gamma * (t - s)), -eps * math.expm1(-2.0 * spec.gamma * (t - s))


@docval({'name': 'spec', 'type': SdeSpec, 'doc': 'the reference diffusion'},
        {'name': 's', 'type': (int, float), 'doc': 'start time'},
        {'name': 't', 'type': (int, float), 'doc': 'end time, s < t'},
        {'name': 'x_s', 'type': ('array_data', int, float), 'doc': 'the state at time s'},
        {'name': 'form', 'type': str, 'doc': "'schedule' or 'constant'", 'default': 'schedule'},
        {'name': 'eps', 'type': (int, float), 'doc': "regularizer of the 'constant' form", 'default': 0.5},
        is_method=False, returns='(mean, var) of the Gaussian kernel p(x_t | x_s)', rtype=tuple)
def transition_kernel(**kwargs):
    """
    Gaussian parameters of p(x_t | x_s) under the uncontrolled reference SDE.

    The variance is returned per coordinate, i.e., with the shape of the mean.
    """
    spec, s, t, x_s, form, eps = getargs('spec', 's', 't', 'x_s', 'form', 'eps', kwargs)
    if not s < t:
        raise DomainError("transition_kernel requires s < t, got s=%r, t=%r" % (s, t))
    _check_time(spec, s)
    _check_time(spec, t)
    x_s = np.asarray(x_s, dtype=float)
    if form == 'schedule':
        a, v = _schedule_kernel(spec, s, t)
    elif form == 'constant':
        if not eps > 0:
            raise DomainError("eps must be positive, got %r" % (eps,))
        a, v = _constant_kernel(spec, s, t, eps)
    else:
        raise ValidationError("unknown kernel form %r" % (form,))
    mean = a * x_s
    return mean, np.full_like(mean, v)


def forward_step(spec: SdeSpec, x: np.ndarray, i: int, z: Optional[np.ndarray], xi: np.ndarray) -> np.ndarray:
    """
    One Euler-Maruyama step t_i -> t_{i+1} of dx = [f + g z] dt + g dw.

    VE increments use the exact variance sigma^2(t_{i+1}) - sigma^2(t_i) of the driftless kernel;
    VP follows x_{i+1} = (1 - beta Delta / 2) x_i + g z Delta + sqrt(beta Delta) xi.
    """
    delta = spec.step
    t = i * delta
    g = spec.g(t)
    if spec.kind == VE:
        scale = math.sqrt(spec.sigma(t + delta) ** 2 - spec.sigma(t) ** 2)
        x_next = x + scale * xi
    else:
        beta = spec.beta(t)
        x_next = (1.0 - 0.5 * beta * delta) * x + math.sqrt(beta * delta) * xi
    if z is not None:
        x_next = x_next + g * z * delta
    return x_next


def reverse_step(spec: SdeSpec, x: np.ndarray, i: int, z: Optional[np.ndarray], xi: np.ndarray) -> np.ndarray:
    """
    One reverse-time step t_i -> t_{i-1} of dx = [f - g z] dt + g dw, i.e.,
    x_{i-1} = x_i - (f - g z) Delta + s_i xi with coefficients at t_i.

    VE takes the exact increment s_i = sqrt(sigma^2(t_i) - sigma^2(t_{i-1})), which tends to g(t_i) sqrt(Delta) as
    Delta shrinks; VP takes s_i = sqrt(beta(t_i) Delta).
    """
    delta = spec.step
    t = i * delta
    g = spec.g(t)
    if spec.kind == VE:
        scale = math.sqrt(spec.sigma(t) ** 2 - spec.sigma(t - delta) ** 2)
        x_prev = x + scale * xi
    else:
        beta = spec.beta(t)
        x_prev = (1.0 + 0.5 * beta * delta) * x + math.sqrt(beta * delta) * xi
    if z is not None:
        x_prev = x_prev + g * z * delta
    return x_prev


def _draw_noise(spec, shape, rng, noise):
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (spec.n_steps,) + tuple(shape):
            raise ValidationError("noise must have shape %s, got %s" % ((spec.n_steps,) + tuple(shape), noise.shape))
        return noise
    if rng is None:
        raise ValidationError("either rng or noise must be given")
    return rng.standard_normal((spec.n_steps,) + tuple(shape))


@docval({'name': 'spec', 'type': SdeSpec, 'doc': 'the reference diffusion'},
        {'name': 'x0', 'type': 'array_data', 'doc': 'initial state, shape (d,) or (batch, d)'},
        {'name': 'policy', 'type': None, 'doc': 'forward drift callback z(x, t); None for the reference SDE',
         'default': None},
        {'name': 'rng', 'type': np.random.Generator, 'doc': 'random stream', 'default': None},
        {'name': 'noise', 'type': 'array_data', 'doc': 'pre-drawn standard normals, shape (n_steps, *x0.shape)',
         'default': None},
        is_method=False, returns='the sampled trajectory', rtype=PathSample)
def em_forward(**kwargs):
    """Simulate the controlled forward SDE from t=0 to t=T"""
    spec, x0, policy, rng, noise = getargs('spec', 'x0', 'policy', 'rng', 'noise', kwargs)
    x = np.array(x0, dtype=float)
    check_finite(x, "initial state", step=0)
    noise = _draw_noise(spec, x.shape, rng, noise)
    states = np.empty((spec.n_steps + 1,) + x.shape)
    states[0] = x
    for i in range(spec.n_steps):
        z = None if policy is None else policy(x, i * spec.step)
        x = forward_step(spec, x, i, z, noise[i])
        check_finite(x, "state", step=i + 1)
        states[i + 1] = x
    return PathSample(times=spec.times, states=states)


@docval({'name': 'spec', 'type': SdeSpec, 'doc': 'the reference diffusion'},
        {'name': 'xT', 'type': 'array_data', 'doc': 'terminal state, shape (d,) or (batch, d)'},
        {'name': 'backward_policy', 'type': None, 'doc': 'backward drift callback z(x, t); None for zero',
         'default': None},
        {'name': 'rng', 'type': np.random.Generator, 'doc': 'random stream', 'default': None},
        {'name': 'noise', 'type': 'array_data', 'doc': 'pre-drawn standard normals, shape (n_steps, *xT.shape)',
         'default': None},
        is_method=False, returns='the sampled trajectory, ordered by increasing time', rtype=PathSample)
def em_backward(**kwargs):
    """Simulate the controlled backward SDE from t=T down to t=0"""
    spec, xT, policy, rng, noise = getargs('spec', 'xT', 'backward_policy', 'rng', 'noise', kwargs)
    x = np.array(xT, dtype=float)
    check_finite(x, "terminal state", step=spec.n_steps)
    noise = _draw_noise(spec, x.shape, rng, noise)
    states = np.empty((spec.n_steps + 1,) + x.shape)
    states[spec.n_steps] = x
    for i in range(spec.n_steps, 0, -1):
        z = None if policy is None else policy(x, i * spec.step)
        x = reverse_step(spec, x, i, z, noise[spec.n_steps - i])
        check_finite(x, "state", step=i - 1)
        states[i - 1] = x
    return PathSample(times=spec.times, states=states)


def prior_sample(spec: SdeSpec, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Draw x_T from the prior: N(0, sigma_max^2 I) for VE, N(0, I) for VP"""
    scale = spec.sigma_max if spec.kind == VE else 1.0
    return scale * rng.standard_normal(shape)


@docval({'name': 'spec', 'type': SdeSpec, 'doc': 'the reference diffusion'},
        {'name': 'eps', 'type': (int, float), 'doc': 'entropic regularizer, > 0'},
        {'name': 'xs', 'type': 'array_data', 'doc': 'source points, shape (n, d)'},
        {'name': 'ys', 'type': 'array_data', 'doc': 'target points, shape (m, d)'},
        is_method=False, returns='the n x m cost matrix', rtype=np.ndarray)
def eot_cost(**kwargs):
    """
    Cost c_eps(x, y) = -log Ker_eps(0, x, T, y) of the constant-coefficient kernel over the horizon,
    normalizing constant included.
    """
    spec, eps, xs, ys = getargs('spec', 'eps', 'xs', 'ys', kwargs)
    if not eps > 0:
        raise DomainError("eps must be positive, got %r" % (eps,))
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape[1] != ys.shape[1]:
        raise DomainError("points must share one dimension, got %d and %d" % (xs.shape[1], ys.shape[1]))
    d = xs.shape[1]
    a, v = _constant_kernel(spec, 0.0, spec.horizon, eps)
    diff = ys[None, :, :] - a * xs[:, None, :]
    return np.sum(diff ** 2, axis=-1) / (2.0 * v) + 0.5 * d * math.log(2.0 * math.pi * v)


def _sample_block(spec: SdeSpec, x0: np.ndarray, indices: range, seed: int, policy: Optional[Policy]):
    x = np.broadcast_to(np.asarray(x0, dtype=float), (len(indices), np.size(x0)))
    noise = path_noise(seed, indices, spec.n_steps, x.shape[1])
    return em_forward(spec, x, policy=policy, noise=noise).states


@docval({'name': 'spec', 'type': SdeSpec, 'doc': 'the reference diffusion'},
        {'name': 'x0', 'type': 'array_data', 'doc': 'initial point shared by all paths, shape (d,)'},
        {'name': 'n_paths', 'type': int, 'doc': 'number of paths'},
        {'name': 'seed', 'type': int, 'doc': 'experiment seed; path j draws from stream (seed, j)'},
        {'name': 'policy', 'type': None, 'doc': 'forward drift callback (picklable if number_of_jobs > 1)',
         'default': None},
        {'name': 'number_of_jobs', 'type': int, 'doc': 'number of worker processes', 'default': 1},
        {'name': 'block_size', 'type': int, 'doc': 'paths per unit of work', 'default': 2048},
        is_method=False, returns='batched trajectory with states of shape (n_steps+1, n_paths, d)', rtype=PathSample)
def sample_ensemble(**kwargs):
    """
    Sample an ensemble of forward paths with one independent random stream per path.

    The result is bitwise independent of ``number_of_jobs`` and ``block_size`` for
    element-wise dynamics (no policy); with a policy it is reproducible for fixed settings.
    """
    spec, x0, n_paths, seed, policy, number_of_jobs, block_size = getargs(
        'spec', 'x0', 'n_paths', 'seed', 'policy', 'number_of_jobs', 'block_size', kwargs)
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1, got %d" % n_paths)
    blocks = split_evenly(n_paths, max(number_of_jobs, -(-n_paths // block_size)))
    logger.debug("sampling %d paths in %d blocks" % (n_paths, len(blocks)))
    runner = ParallelMap(number_of_jobs=number_of_jobs, max_threads_per_process=1 if number_of_jobs > 1 else None)
    parts = runner.map(_sample_block, [(spec, x0, block, seed, policy) for block in blocks])
    return PathSample(times=spec.times, states=np.concatenate(parts, axis=1))
