"""
Conditional Schrodinger-bridge imputation: policies, denoising score-matching warmup, alternating
likelihood training of the backward and forward policies on cached trajectories, and conditional
sampling.

Windows of shape ``(K, L)`` are flattened to ``D = K * L`` state channels. The backward policy sees
``[x * (1 - m_cond) + x_cond * m_cond, m_cond, embedding(t)]``; the forward policy sees
``[x, embedding(t)]``. The embedding carries the diffusion-time sinusoid and, when configured, a
feature/time index code for every entry of the window. Both networks output the drift ``z = g(t) * score`` directly.

Per sampled ``(x_t, t)`` the backward objective is

    1/2 |z_b * m|^2 + g(t) div(z_b * m) + (z_f * m) . (z_b * m)

with ``m`` the target mask (the divergence runs over target coordinates only); the forward objective
is the same expression with the roles of the policies swapped and ``m = 1``.
"""
import json
import logging
import itertools
import warnings
from dataclasses import dataclass, field, asdict, replace
from typing import List, Optional, Tuple

import numpy as np

from hdmf.utils import docval, getargs

from .data import Dataset, TargetStrategy, RANDOM_RATIO, make_masks
from .errors import CacheContractError, DivergenceError, TrainingError, ValidationError
from .neural import (AdamWConfig, EmbeddingSpec, MlpParams, OptimizerState, adamw_step, dual_backward,
                     dual_forward, embed, exact_tangents, init_mlp, policy_widths, rademacher)
from .sde import SdeSpec, VE, _schedule_kernel, forward_step, prior_sample, reverse_step
from .utils import ParallelMap, check_finite, path_noise, split_evenly, stream

logger = logging.getLogger(__name__)

EXACT = 'exact'
HUTCHINSON = 'hutchinson'
HUTCHINSON_FULL = 'hutchinson_full'

WARMUP = 'warmup'
BACKWARD = 'backward'
FORWARD = 'forward'

# purpose keys of the random streams
INIT_STREAM = 10
WARMUP_STREAM = 11
CACHE_STREAM = 12
BATCH_STREAM = 13
IMPUTE_STREAM = 14

MAX_FULL_PROBE_WIDTH = 12


@dataclass(frozen=True)
class TrainConfig:
    """Training settings; the defaults are the desk-scale configuration"""
    sde: SdeSpec = field(default_factory=SdeSpec)
    hidden: Tuple[int, ...] = (128, 128)
    embedding: EmbeddingSpec = field(default_factory=EmbeddingSpec)
    warmup_iters: int = 2000
    stages: int = 8
    iters_per_stage: int = 120
    refresh_period: int = 40
    batch_size: int = 32
    cache_paths: int = 256
    lr_forward: float = 1e-3
    lr_backward: float = 1e-3
    lr_decay: float = 1.0
    weight_decay: float = 0.0
    divergence: str = EXACT
    n_probes: int = 1
    freeze_forward: bool = False
    strategy_mix: float = 0.5
    number_of_jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))
        for name in ('warmup_iters', 'iters_per_stage', 'refresh_period', 'batch_size', 'cache_paths',
                     'n_probes', 'number_of_jobs'):
            if getattr(self, name) < 1:
                raise ValidationError("%s must be >= 1, got %r" % (name, getattr(self, name)))
        if self.stages < 0:
            raise ValidationError("stages must be >= 0, got %r" % self.stages)
        if not (self.lr_forward > 0 and self.lr_backward > 0):
            raise ValidationError("learning rates must be positive")
        if self.divergence not in (EXACT, HUTCHINSON, HUTCHINSON_FULL):
            raise ValidationError("unknown divergence mode %r" % (self.divergence,))
        if not 0 <= self.strategy_mix <= 1:
            raise ValidationError("strategy_mix must lie in [0, 1], got %r" % self.strategy_mix)
        AdamWConfig(lr=self.lr_backward, weight_decay=self.weight_decay, lr_decay=self.lr_decay)

    def to_dict(self) -> dict:
        d = asdict(self)
        d['hidden'] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> 'TrainConfig':
        d = dict(d)
        if isinstance(d.get('sde'), dict):
            d['sde'] = SdeSpec.from_dict(d['sde'])
        if isinstance(d.get('embedding'), dict):
            d['embedding'] = EmbeddingSpec.from_dict(d['embedding'])
        return cls(**d)

    def optimizer(self, direction: str) -> AdamWConfig:
        lr = self.lr_forward if direction == FORWARD else self.lr_backward
        return AdamWConfig(lr=lr, weight_decay=self.weight_decay, lr_decay=self.lr_decay)


@dataclass(frozen=True)
class Policy:
    """A drift network together with its input contract"""
    params: MlpParams
    embedding: EmbeddingSpec
    K: int
    L: int
    conditional: bool

    def __post_init__(self):
        expected = policy_widths(self.n_state, [], self.embedding, self.conditional)[0]
        if self.params.n_in != expected or self.params.n_out != self.n_state:
            raise ValidationError("network of widths %s does not fit a %s policy on %d x %d windows"
                                  % (self.params.widths, 'conditional' if self.conditional else 'plain',
                                     self.K, self.L))

    @property
    def n_state(self) -> int:
        return self.K * self.L

    def inputs(self, x, t, x_cond=None, m_cond=None) -> np.ndarray:
        """Network inputs for states x of shape (B, D) at times t (scalar or (B,))"""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        emb = np.broadcast_to(embed(self.embedding, t, self.K, self.L),
                              (x.shape[0], self.embedding.block_width(self.n_state)))
        if not self.conditional:
            return np.concatenate([x, emb], axis=1)
        if m_cond is None:
            m_cond = np.zeros_like(x)
            x_tilde = x
        else:
            m_cond = np.broadcast_to(np.asarray(m_cond, dtype=float), x.shape)
            x_cond = np.broadcast_to(np.asarray(x_cond, dtype=float), x.shape)
            x_tilde = x * (1.0 - m_cond) + x_cond * m_cond
        return np.concatenate([x_tilde, m_cond, emb], axis=1)

    def __call__(self, x, t, x_cond=None, m_cond=None) -> np.ndarray:
        z, _, _ = dual_forward(self.params, self.inputs(x, t, x_cond, m_cond))
        return z

    def with_params(self, params: MlpParams) -> 'Policy':
        return replace(self, params=params)


@dataclass(frozen=True)
class PolicyPair:
    """Forward policy (None when removed) and backward policy with their optimizer states"""
    forward: Optional[Policy]
    backward: Policy
    forward_state: Optional[OptimizerState] = None
    backward_state: Optional[OptimizerState] = None

    def without_forward(self) -> 'PolicyPair':
        return PolicyPair(None, self.backward, None, self.backward_state)


class TrainingLog:
    """
    Records of a training run, one per iteration ``{stage, iter, direction, loss, lr}`` plus
    ``{event: cache_refresh, ...}`` records. Stage 0 is the warmup.
    """

    def __init__(self, path: Optional[str] = None):
        self.logger = logging.getLogger('%s.%s' % (self.__class__.__module__, self.__class__.__qualname__))
        self.records: List[dict] = []
        self.path = path
        if path is not None:
            open(path, 'w').close()

    def append(self, record: dict):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, 'a') as f:
                f.write(json.dumps(record) + '\n')

    def iteration(self, stage: int, iteration: int, direction: str, loss: float, lr: float):
        self.append({'stage': stage, 'iter': iteration, 'direction': direction, 'loss': float(loss), 'lr': float(lr)})

    def refresh(self, stage: int, iteration: int, direction: str, n_paths: int):
        self.logger.debug("stage %d, iteration %d: refreshed %s cache with %d paths"
                          % (stage, iteration, direction, n_paths))
        self.append({'event': 'cache_refresh', 'stage': stage, 'iter': iteration, 'direction': direction,
                     'n_paths': n_paths})

    def losses(self, direction: str, stage: Optional[int] = None) -> np.ndarray:
        return np.array([r['loss'] for r in self.records
                         if r.get('direction') == direction and 'loss' in r
                         and (stage is None or r['stage'] == stage)])

    @classmethod
    def read(cls, path: str) -> 'TrainingLog':
        log = cls()
        with open(path) as f:
            log.records = [json.loads(line) for line in f if line.strip()]
        return log


@dataclass
class LossBatch:
    """
    One Monte-Carlo batch of a policy objective.

    ``counterpart`` holds the frozen opposite policy's drift at ``(x, t)``; ``mask`` selects the
    coordinates entering the objective.
    """
    x: np.ndarray
    t_index: np.ndarray
    counterpart: np.ndarray
    mask: np.ndarray
    x_cond: Optional[np.ndarray] = None
    m_cond: Optional[np.ndarray] = None
    probes: Optional[np.ndarray] = None


class TrajectoryCache:
    """
    Paths sampled from the frozen counterpart policy, with the masks drawn for each path.

    ``draw`` may be called at most ``refresh_period`` times before the cache must be rebuilt.
    """

    def __init__(self, states: np.ndarray, direction: str, refresh_period: int,
                 x_cond: Optional[np.ndarray] = None, m_cond: Optional[np.ndarray] = None,
                 m_target: Optional[np.ndarray] = None):
        self.states = states
        self.direction = direction
        self.refresh_period = refresh_period
        n_paths, D = states.shape[1], states.shape[2]
        self.x_cond = np.zeros((n_paths, D)) if x_cond is None else x_cond
        self.m_cond = np.zeros((n_paths, D)) if m_cond is None else m_cond
        self.m_target = np.ones((n_paths, D)) if m_target is None else m_target
        self.staleness = 0

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    def draw(self, rng: np.random.Generator, batch_size: int):
        """Pick batch_size (path, grid index) pairs uniformly; grid indices run over 1..N"""
        if self.staleness + 1 > self.refresh_period:
            raise CacheContractError("%s cache used %d times, refresh period is %d"
                                     % (self.direction, self.staleness + 1, self.refresh_period))
        self.staleness += 1
        paths = rng.integers(0, self.n_paths, size=batch_size)
        t_index = rng.integers(1, self.n_steps + 1, size=batch_size)
        return (self.states[t_index, paths], t_index, self.x_cond[paths], self.m_cond[paths],
                self.m_target[paths])


def init_pair(cfg: TrainConfig, K: int, L: int) -> PolicyPair:
    """
    Initialize both policies. The output layer of the forward network is zero, so the forward
    drift starts at exactly zero.
    """
    D = K * L
    backward = Policy(init_mlp(policy_widths(D, cfg.hidden, cfg.embedding, True), stream(cfg.seed, INIT_STREAM, 0)),
                      cfg.embedding, K, L, True)
    params = init_mlp(policy_widths(D, cfg.hidden, cfg.embedding, False), stream(cfg.seed, INIT_STREAM, 1))
    params = MlpParams(params.weights[:-1] + (np.zeros_like(params.weights[-1]),), params.biases)
    forward = Policy(params, cfg.embedding, K, L, False)
    return PolicyPair(forward, backward, OptimizerState.create(forward.params, cfg.optimizer(FORWARD)),
                      OptimizerState.create(backward.params, cfg.optimizer(BACKWARD)))


def _complete_probes(d: int) -> np.ndarray:
    if d > MAX_FULL_PROBE_WIDTH:
        raise ValidationError("the complete probe set is limited to %d coordinates, got %d"
                              % (MAX_FULL_PROBE_WIDTH, d))
    return np.array(list(itertools.product((-1.0, 1.0), repeat=d)))


def draw_probes(cfg: TrainConfig, batch_size: int, D: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Rademacher probes for the configured divergence mode (None for exact divergence)"""
    if cfg.divergence == EXACT:
        return None
    if cfg.divergence == HUTCHINSON_FULL:
        return np.broadcast_to(_complete_probes(D), (batch_size, 2 ** D, D))
    return rademacher(rng, (batch_size, cfg.n_probes, D))


def masked_policy_loss(policy: Policy, batch: LossBatch, spec: SdeSpec, with_grad: bool = True):
    """
    Mean over the batch of ``1/2 |z m|^2 + g div(z m) + (c m) . (z m)`` with ``c`` the counterpart drift.

    The divergence is exact when ``batch.probes`` is None, otherwise the Hutchinson estimate with
    probes restricted to the masked coordinates.

    :returns: loss, or (loss, parameter gradients) if with_grad
    """
    x = np.asarray(batch.x, dtype=float)
    B, D = x.shape
    m = np.asarray(batch.mask, dtype=float)
    t = batch.t_index * spec.step
    g = np.asarray(spec.g(t), dtype=float)
    inputs = policy.inputs(x, t, batch.x_cond, batch.m_cond)
    if batch.probes is None:
        tangents = exact_tangents(B, D, inputs.shape[1])
        weights = m[:, :, None] * np.eye(D)[None, :, :]
    else:
        masked = np.asarray(batch.probes, dtype=float) * m[:, None, :]
        tangents = np.zeros((B, masked.shape[1], inputs.shape[1]))
        tangents[:, :, :D] = masked
        weights = masked / masked.shape[1]
    z, jvp, cache = dual_forward(policy.params, inputs, tangents)
    div = np.einsum('bpo,bpo->b', weights, jvp)
    per_sample = 0.5 * np.sum(m * z * z, axis=1) + g * div + np.sum(m * batch.counterpart * z, axis=1)
    loss = float(np.mean(per_sample))
    if not with_grad:
        return loss
    out_bar = m * (z + batch.counterpart) / B
    tangent_bar = weights * (g / B)[:, None, None]
    grads, _ = dual_backward(policy.params, cache, out_bar, tangent_bar)
    return loss, grads


def dsm_loss(policy: Policy, x0: np.ndarray, t_index: np.ndarray, noise: np.ndarray, m_cond: np.ndarray,
             m_target: np.ndarray, spec: SdeSpec, with_grad: bool = True):
    """
    Variance-weighted denoising score matching on the target entries:
    ``1/2 sum_target (var s - (mean - x_t))^2 / var`` with ``s = z / g``.
    """
    B, D = x0.shape
    t = t_index * spec.step
    scale, var = np.empty(B), np.empty(B)
    for b in range(B):
        scale[b], var[b] = _schedule_kernel(spec, 0.0, float(t[b]))
    mean = scale[:, None] * x0
    x_t = mean + np.sqrt(var)[:, None] * noise
    x_cond = x0 * m_cond
    g = np.asarray(spec.g(t), dtype=float)
    z, _, cache = dual_forward(policy.params, policy.inputs(x_t, t, x_cond, m_cond))
    residual = (var / g)[:, None] * z - (mean - x_t)
    loss = float(np.mean(0.5 * np.sum(m_target * residual ** 2, axis=1) / var))
    if not with_grad:
        return loss
    grads, _ = dual_backward(policy.params, cache, m_target * residual / (g[:, None] * B))
    return loss, grads


def _training_masks(m_obs: np.ndarray, strategy: Optional[TargetStrategy], mix: float, rng: np.random.Generator):
    if strategy is not None and rng.uniform() < mix:
        masks = make_masks(m_obs, strategy, rng)
    else:
        masks = make_masks(m_obs, TargetStrategy(RANDOM_RATIO, float(rng.uniform(0.0, 1.0))), rng)
    return masks.m_cond.ravel().astype(float), masks.m_target.ravel().astype(float)


def _dataset_strategy(dataset: Dataset) -> Optional[TargetStrategy]:
    config = dataset.config or {}
    strategy = config.get('strategy')
    if isinstance(strategy, str):
        strategy = TargetStrategy.parse(strategy)
    if strategy is not None and strategy.kind != RANDOM_RATIO and strategy.value > dataset.L:
        return None
    return strategy


def _draw_windows(dataset: Dataset, n: int, cfg: TrainConfig, rng: np.random.Generator):
    """Random windows (with replacement) with freshly drawn training masks"""
    strategy = _dataset_strategy(dataset)
    index = rng.integers(0, len(dataset), size=n)
    x0 = np.stack([dataset[i].values.ravel() for i in index])
    masks = [_training_masks(dataset[i].masks.m_obs, strategy, cfg.strategy_mix, rng) for i in index]
    m_cond = np.stack([m[0] for m in masks])
    m_target = np.stack([m[1] for m in masks]) * np.stack([dataset[i].masks.m_obs.ravel() for i in index])
    return x0, m_cond, m_target


def _optimizer_step(policy: Policy, grads: MlpParams, state: OptimizerState, stage: int, iteration: int):
    try:
        params, state = adamw_step(policy.params, grads, state)
    except TrainingError as e:
        raise TrainingError("non-finite gradient", stage=stage, iteration=iteration) from e
    return policy.with_params(params), state


def _check_loss(loss: float, stage: int, iteration: int):
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss", stage=stage, iteration=iteration)


@docval({'name': 'pair', 'type': PolicyPair, 'doc': 'policies to warm up; only the backward policy is trained'},
        {'name': 'dataset', 'type': Dataset, 'doc': 'training windows'},
        {'name': 'cfg', 'type': TrainConfig, 'doc': 'training settings'},
        {'name': 'log', 'type': TrainingLog, 'doc': 'log receiving one record per iteration', 'default': None},
        is_method=False, returns='the warmed-up pair', rtype=PolicyPair)
def dsm_warmup(**kwargs):
    """Denoising score matching of the backward policy with the forward drift held at zero"""
    pair, dataset, cfg, log = getargs('pair', 'dataset', 'cfg', 'log', kwargs)
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    spec = cfg.sde
    policy, state = pair.backward, pair.backward_state or OptimizerState.create(pair.backward.params,
                                                                                cfg.optimizer(BACKWARD))
    for it in range(cfg.warmup_iters):
        rng = stream(cfg.seed, WARMUP_STREAM, it)
        x0, m_cond, m_target = _draw_windows(dataset, cfg.batch_size, cfg, rng)
        t_index = rng.integers(1, spec.n_steps + 1, size=cfg.batch_size)
        noise = rng.standard_normal(x0.shape)
        loss, grads = dsm_loss(policy, x0, t_index, noise, m_cond, m_target, spec)
        _check_loss(loss, 0, it)
        lr = state.config.lr * state.config.lr_decay ** state.step
        policy, state = _optimizer_step(policy, grads, state, 0, it)
        if log is not None:
            log.iteration(0, it, WARMUP, loss, lr)
    logger.info("warmup finished after %d iterations" % cfg.warmup_iters)
    return PolicyPair(pair.forward, policy, pair.forward_state, state)


def _forward_block(spec: SdeSpec, x0: np.ndarray, indices: range, seed: int, key: int, policy: Optional[Policy]):
    noise = path_noise(seed, indices, spec.n_steps, x0.shape[1], CACHE_STREAM, key)
    x = x0.copy()
    states = np.empty((spec.n_steps + 1,) + x.shape)
    states[0] = x
    for i in range(spec.n_steps):
        z = None if policy is None else policy(x, i * spec.step)
        x = forward_step(spec, x, i, z, noise[i])
        check_finite(x, "forward state", step=i + 1)
        states[i + 1] = x
    return states


def _backward_block(spec: SdeSpec, n: int, D: int, indices: range, seed: int, key: int, policy: Policy):
    noise = path_noise(seed, indices, spec.n_steps + 1, D, CACHE_STREAM, key)
    x = (spec.sigma_max if spec.kind == VE else 1.0) * noise[0]
    states = np.empty((spec.n_steps + 1, n, D))
    states[spec.n_steps] = x
    for i in range(spec.n_steps, 0, -1):
        x = reverse_step(spec, x, i, policy(x, i * spec.step), noise[spec.n_steps + 1 - i])
        check_finite(x, "backward state", step=i - 1)
        states[i - 1] = x
    return states


def _cache_key(stage: int, direction: str, refresh: int) -> int:
    return (stage * 2 + (direction == FORWARD)) * 100003 + refresh


def refresh_forward_cache(pair: PolicyPair, dataset: Dataset, cfg: TrainConfig, stage: int,
                          refresh: int) -> TrajectoryCache:
    """Sample data-initialized paths of the forward SDE driven by the frozen forward policy"""
    key = _cache_key(stage, BACKWARD, refresh)
    rng = stream(cfg.seed, CACHE_STREAM, key)
    x0, m_cond, m_target = _draw_windows(dataset, cfg.cache_paths, cfg, rng)
    blocks = split_evenly(cfg.cache_paths, cfg.number_of_jobs)
    runner = ParallelMap(number_of_jobs=cfg.number_of_jobs,
                         max_threads_per_process=1 if cfg.number_of_jobs > 1 else None)
    parts = runner.map(_forward_block, [(cfg.sde, x0[block.start:block.stop], block, cfg.seed, key, pair.forward)
                                        for block in blocks])
    return TrajectoryCache(np.concatenate(parts, axis=1), BACKWARD, cfg.refresh_period,
                           x_cond=x0 * m_cond, m_cond=m_cond, m_target=m_target)


def refresh_backward_cache(pair: PolicyPair, cfg: TrainConfig, stage: int, refresh: int) -> TrajectoryCache:
    """Sample prior-initialized paths of the backward SDE driven by the frozen, unconditioned backward policy"""
    key = _cache_key(stage, FORWARD, refresh)
    D = pair.backward.n_state
    blocks = split_evenly(cfg.cache_paths, cfg.number_of_jobs)
    runner = ParallelMap(number_of_jobs=cfg.number_of_jobs,
                         max_threads_per_process=1 if cfg.number_of_jobs > 1 else None)
    parts = runner.map(_backward_block, [(cfg.sde, len(block), D, block, cfg.seed, key, pair.backward)
                                         for block in blocks])
    return TrajectoryCache(np.concatenate(parts, axis=1), FORWARD, cfg.refresh_period)


def backward_batch(pair: PolicyPair, cache: TrajectoryCache, cfg: TrainConfig, rng: np.random.Generator) -> LossBatch:
    """Draw a batch for the backward objective; the forward drift is evaluated at the drawn points"""
    x, t_index, x_cond, m_cond, m_target = cache.draw(rng, cfg.batch_size)
    t = t_index * cfg.sde.step
    counterpart = np.zeros_like(x) if pair.forward is None else pair.forward(x, t)
    return LossBatch(x, t_index, counterpart, m_target, x_cond, m_cond,
                     draw_probes(cfg, cfg.batch_size, x.shape[1], rng))


def forward_batch(pair: PolicyPair, cache: TrajectoryCache, cfg: TrainConfig, rng: np.random.Generator) -> LossBatch:
    """Draw a batch for the forward objective; the unconditioned backward drift is evaluated at the drawn points"""
    x, t_index, _, _, _ = cache.draw(rng, cfg.batch_size)
    counterpart = pair.backward(x, t_index * cfg.sde.step)
    return LossBatch(x, t_index, counterpart, np.ones_like(x), probes=draw_probes(cfg, cfg.batch_size,
                                                                                  x.shape[1], rng))


def backward_loss(pair: PolicyPair, cache: TrajectoryCache, cfg: TrainConfig, rng: np.random.Generator,
                  with_grad: bool = False):
    """Backward-policy objective on a batch drawn from the forward-path cache"""
    return masked_policy_loss(pair.backward, backward_batch(pair, cache, cfg, rng), cfg.sde, with_grad)


def forward_loss(pair: PolicyPair, cache: TrajectoryCache, cfg: TrainConfig, rng: np.random.Generator,
                 with_grad: bool = False):
    """Forward-policy objective on a batch drawn from the backward-path cache"""
    if pair.forward is None:
        raise ValidationError("the pair has no forward policy")
    return masked_policy_loss(pair.forward, forward_batch(pair, cache, cfg, rng), cfg.sde, with_grad)


def _run_phase(pair: PolicyPair, direction: str, dataset: Dataset, cfg: TrainConfig, stage: int,
               log: Optional[TrainingLog]) -> PolicyPair:
    cache = None
    for it in range(cfg.iters_per_stage):
        if it % cfg.refresh_period == 0:
            refresh = it // cfg.refresh_period
            try:
                if direction == BACKWARD:
                    cache = refresh_forward_cache(pair, dataset, cfg, stage, refresh)
                else:
                    cache = refresh_backward_cache(pair, cfg, stage, refresh)
            except DivergenceError as e:
                raise DivergenceError("non-finite state while refreshing the %s cache" % direction,
                                      step=e.step, stage=stage, iteration=it) from e
            if log is not None:
                log.refresh(stage, it, direction, cache.n_paths)
        rng = stream(cfg.seed, BATCH_STREAM, _cache_key(stage, direction, 0), it)
        if direction == BACKWARD:
            loss, grads = backward_loss(pair, cache, cfg, rng, with_grad=True)
            state = pair.backward_state
        else:
            loss, grads = forward_loss(pair, cache, cfg, rng, with_grad=True)
            state = pair.forward_state
        _check_loss(loss, stage, it)
        lr = state.config.lr * state.config.lr_decay ** state.step
        if direction == BACKWARD:
            policy, state = _optimizer_step(pair.backward, grads, state, stage, it)
            pair = PolicyPair(pair.forward, policy, pair.forward_state, state)
        else:
            policy, state = _optimizer_step(pair.forward, grads, state, stage, it)
            pair = PolicyPair(policy, pair.backward, state, pair.backward_state)
        if log is not None:
            log.iteration(stage, it, direction, loss, lr)
        logger.debug("stage %d, %s iteration %d: loss %.6g" % (stage, direction, it, loss))
    return pair


@docval({'name': 'cfg', 'type': TrainConfig, 'doc': 'training settings'},
        {'name': 'dataset', 'type': Dataset, 'doc': 'training windows'},
        {'name': 'log', 'type': TrainingLog, 'doc': 'log receiving the training records', 'default': None},
        is_method=False, returns='(trained pair, training log)', rtype=tuple)
def train(**kwargs):
    """
    Warm up the backward policy by score matching, then alternate stages of backward and forward
    likelihood training, each on trajectories of the frozen counterpart. With ``freeze_forward``
    the forward policy is removed and stages train only the backward policy against a zero forward drift.
    """
    cfg, dataset, log = getargs('cfg', 'dataset', 'log', kwargs)
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    log = TrainingLog() if log is None else log
    pair = init_pair(cfg, dataset.K, dataset.L)
    if cfg.freeze_forward:
        pair = pair.without_forward()
    pair = dsm_warmup(pair, dataset, cfg, log)
    for stage in range(1, cfg.stages + 1):
        logger.info("stage %d of %d" % (stage, cfg.stages))
        pair = _run_phase(pair, BACKWARD, dataset, cfg, stage, log)
        if pair.forward is not None:
            pair = _run_phase(pair, FORWARD, dataset, cfg, stage, log)
    return pair, log


def langevin_correct(score, x: np.ndarray, t: float, n_corrector_steps: int, snr: float,
                     rng: np.random.Generator) -> np.ndarray:
    """
    Langevin corrector ``x <- x + delta s + sqrt(2 delta) xi`` with ``s = score(x, t)`` and
    ``delta = (snr |xi| / |s|)^2``, the norms averaged over the batch rows. A zero score skips the step.
    """
    if not snr > 0:
        raise ValidationError("snr must be positive, got %r" % (snr,))
    x = np.array(x, dtype=float)
    for _ in range(n_corrector_steps):
        s = score(x, t)
        xi = rng.standard_normal(x.shape)
        s_norm = np.mean(np.linalg.norm(s.reshape(s.shape[0], -1), axis=1))
        if s_norm == 0:
            warnings.warn("zero score, Langevin step skipped")
            continue
        xi_norm = np.mean(np.linalg.norm(xi.reshape(xi.shape[0], -1), axis=1))
        delta = (snr * xi_norm / s_norm) ** 2
        x = x + delta * s + np.sqrt(2.0 * delta) * xi
    return x


def _reverse_sampler(policy: Policy, x_cond: np.ndarray, m_cond: np.ndarray, n_samples: int, spec: SdeSpec,
                     seed: int, n_corrector_steps: int = 0, snr: float = 0.16) -> np.ndarray:
    D = policy.n_state
    x_cond = np.asarray(x_cond, dtype=float)
    m_cond = np.asarray(m_cond, dtype=float)
    if x_cond.size != D or m_cond.size != D:
        raise ValidationError("conditions must have %d entries" % D)
    m_cond = m_cond.reshape(1, D)
    x_cond = x_cond.reshape(1, D) * m_cond
    rng = stream(seed, IMPUTE_STREAM)
    x = prior_sample(spec, (n_samples, D), rng)
    keep = 1.0 - m_cond
    for i in range(spec.n_steps, 0, -1):
        x = x * keep + x_cond
        t = i * spec.step
        x = reverse_step(spec, x, i, policy(x, t, x_cond, m_cond), rng.standard_normal(x.shape))
        check_finite(x, "imputation state", step=i - 1)
        if n_corrector_steps:
            t_prev = (i - 1) * spec.step
            g_prev = float(spec.g(t_prev))

            def score(y, s):
                return policy(y * keep + x_cond, s, x_cond, m_cond) / g_prev
            x = langevin_correct(score, x, t_prev, n_corrector_steps, snr, rng)
            check_finite(x, "corrected imputation state", step=i - 1)
    x = np.where(m_cond > 0, x_cond, x)
    return x.reshape((n_samples, policy.K, policy.L))


@docval({'name': 'backward', 'type': Policy, 'doc': 'trained backward policy'},
        {'name': 'x_cond', 'type': 'array_data', 'doc': 'K x L conditions (zero outside m_cond)'},
        {'name': 'm_cond', 'type': 'array_data', 'doc': 'K x L condition mask'},
        {'name': 'n_samples', 'type': int, 'doc': 'number of imputation samples'},
        {'name': 'spec', 'type': SdeSpec, 'doc': 'reference diffusion'},
        {'name': 'seed', 'type': int, 'doc': 'seed of the sampling stream'},
        {'name': 'n_corrector_steps', 'type': int, 'doc': 'Langevin corrector steps per grid point', 'default': 0},
        {'name': 'snr', 'type': float, 'doc': 'corrector signal-to-noise ratio', 'default': 0.16},
        is_method=False, returns='samples of shape (n_samples, K, L)', rtype=np.ndarray)
def impute(**kwargs):
    """
    Draw imputations by running the backward SDE from the prior with the conditioned entries
    overwritten before every step and once more at the end.
    """
    backward, x_cond, m_cond, n_samples, spec, seed, n_corrector_steps, snr = getargs(
        'backward', 'x_cond', 'm_cond', 'n_samples', 'spec', 'seed', 'n_corrector_steps', 'snr', kwargs)
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1, got %d" % n_samples)
    return _reverse_sampler(backward, x_cond, m_cond, n_samples, spec, seed, n_corrector_steps, snr)


def conditional_score_sampler(pair: PolicyPair, x_cond, m_cond, n_samples: int, spec: SdeSpec, seed: int) -> np.ndarray:
    """Score-based conditional sampler of a pair whose forward policy has been removed"""
    if pair.forward is not None:
        raise ValidationError("the score-based sampler expects a pair without forward policy")
    return _reverse_sampler(pair.backward, x_cond, m_cond, n_samples, spec, seed)
