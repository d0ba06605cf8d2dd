"""
Hand-differentiated multilayer perceptrons for the bridge policies.

An MLP maps ``(batch, n_in)`` to ``(batch, n_out)`` with SiLU on hidden layers. Besides the plain
forward/backward passes, the module carries a *dual* pass that propagates ``P`` tangent directions
alongside the values (forward mode) together with its reverse-mode adjoint. The adjoint is what
makes divergence terms ``sum_i d z_i / d x_i`` differentiable with respect to the parameters.

Layer ``l`` computes ``A_l = H_{l-1} W_l^T + b_l`` and ``H_l = silu(A_l)``; the dual pass carries
``dA_l = dH_{l-1} W_l^T`` and ``dH_l = silu'(A_l) * dA_l`` for every tangent.
"""
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from hdmf.utils import docval, getargs

from .errors import DomainError, TrainingError, ValidationError


@dataclass(frozen=True)
class MlpParams:
    """
    Weights ``W_l`` of shape ``(n_out_l, n_in_l)`` and biases ``b_l`` of shape ``(n_out_l,)``.

    Gradients share this structure.
    """
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise ValidationError("an MLP needs one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValidationError("layer %d has weight shape %s and bias shape %s" % (i, w.shape, b.shape))
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValidationError("layer %d expects %d inputs but layer %d has %d outputs"
                                      % (i, w.shape[1], i - 1, self.weights[i - 1].shape[0]))

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in zip(self.weights, self.biases))

    def scaled(self, a: float) -> 'MlpParams':
        return MlpParams(tuple(a * w for w in self.weights), tuple(a * b for b in self.biases))

    def __add__(self, other: 'MlpParams') -> 'MlpParams':
        return MlpParams(tuple(w + v for w, v in zip(self.weights, other.weights)),
                         tuple(b + c for b, c in zip(self.biases, other.biases)))


def zeros_like(p: MlpParams) -> MlpParams:
    return MlpParams(tuple(np.zeros_like(w) for w in p.weights), tuple(np.zeros_like(b) for b in p.biases))


def init_mlp(widths: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)) and zero biases"""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValidationError("widths must list at least two positive layer widths, got %s" % (widths,))
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases))


def flatten_params(p: MlpParams) -> np.ndarray:
    """Concatenate W_1, b_1, W_2, b_2, ... (row-major) into one f64 vector"""
    return np.concatenate([a.ravel() for w, b in zip(p.weights, p.biases) for a in (w, b)]).astype('<f8')


def unflatten_params(flat: np.ndarray, widths: Sequence[int]) -> MlpParams:
    """Inverse of flatten_params for the given layer widths"""
    flat = np.asarray(flat, dtype=float)
    expected = sum(o * i + o for i, o in zip(widths[:-1], widths[1:]))
    if flat.shape != (expected,):
        raise ValidationError("expected %d parameters for widths %s, got %d" % (expected, list(widths), flat.size))
    weights, biases, offset = [], [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(flat[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in).copy())
        offset += fan_in * fan_out
        biases.append(flat[offset:offset + fan_out].copy())
        offset += fan_out
    return MlpParams(tuple(weights), tuple(biases))


def silu(a):
    return a * expit(a)


def silu_prime(a):
    s = expit(a)
    return s * (1.0 + a * (1.0 - s))


def silu_second(a):
    s = expit(a)
    return s * (1.0 - s) * (2.0 + a * (1.0 - 2.0 * s))


def _as_batch(p: MlpParams, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != p.n_in:
        raise ValidationError("input of shape %s does not match the %d input channels of the network"
                              % (x.shape, p.n_in))
    return x, single


def mlp_forward(p: MlpParams, x) -> np.ndarray:
    """Evaluate the network on one input of shape (n_in,) or a batch of shape (batch, n_in)"""
    h, single = _as_batch(p, x)
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        a = h @ w.T + b
        h = a if i == last else silu(a)
    return h[0] if single else h


@dataclass
class DualCache:
    """Activations of a dual pass kept for its adjoint"""
    inputs: List[np.ndarray] = field(default_factory=list)
    tangents: List[Optional[np.ndarray]] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    pre_tangents: List[Optional[np.ndarray]] = field(default_factory=list)


def dual_forward(p: MlpParams, x: np.ndarray, tangents: Optional[np.ndarray] = None):
    """
    Value and tangent pass.

    :param x: inputs of shape (batch, n_in)
    :param tangents: input directions of shape (batch, P, n_in), or None for a value-only pass
    :returns: (outputs (batch, n_out), output tangents (batch, P, n_out) or None, cache)
    """
    h, _ = _as_batch(p, x)
    dh = None if tangents is None else np.asarray(tangents, dtype=float)
    if dh is not None and (dh.ndim != 3 or dh.shape[0] != h.shape[0] or dh.shape[2] != p.n_in):
        raise ValidationError("tangents of shape %s do not match inputs of shape %s" % (dh.shape, h.shape))
    cache = DualCache()
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        cache.inputs.append(h)
        cache.tangents.append(dh)
        a = h @ w.T + b
        da = None if dh is None else dh @ w.T
        cache.pre.append(a)
        cache.pre_tangents.append(da)
        if i == last:
            h, dh = a, da
        else:
            h = silu(a)
            dh = None if da is None else silu_prime(a)[:, None, :] * da
    return h, dh, cache


def dual_backward(p: MlpParams, cache: DualCache, out_bar: np.ndarray, tangent_bar: Optional[np.ndarray] = None):
    """
    Reverse-mode adjoint of dual_forward.

    :param out_bar: adjoint of the outputs, shape (batch, n_out)
    :param tangent_bar: adjoint of the output tangents, shape (batch, P, n_out), or None
    :returns: (parameter gradients as MlpParams, adjoint of the inputs (batch, n_in))
    """
    a_bar = np.asarray(out_bar, dtype=float)
    da_bar = None if tangent_bar is None else np.asarray(tangent_bar, dtype=float)
    if da_bar is not None and cache.pre_tangents[-1] is None:
        raise ValidationError("tangent adjoints need a dual pass that carried tangents")
    dws, dbs = [], []
    for i in range(len(p.weights) - 1, -1, -1):
        w = p.weights[i]
        h_in, dh_in = cache.inputs[i], cache.tangents[i]
        dw = a_bar.T @ h_in
        if da_bar is not None:
            dw = dw + np.einsum('bpo,bpi->oi', da_bar, dh_in)
        dws.append(dw)
        dbs.append(a_bar.sum(axis=0))
        h_bar = a_bar @ w
        dh_bar = None if da_bar is None else da_bar @ w
        if i == 0:
            break
        a = cache.pre[i - 1]
        a_bar = silu_prime(a) * h_bar
        if dh_bar is not None:
            a_bar = a_bar + silu_second(a) * np.einsum('bpo,bpo->bo', cache.pre_tangents[i - 1], dh_bar)
            da_bar = silu_prime(a)[:, None, :] * dh_bar
    return MlpParams(tuple(reversed(dws)), tuple(reversed(dbs))), h_bar


def mlp_grad(p: MlpParams, x, upstream) -> Tuple[MlpParams, np.ndarray]:
    """Gradients of <upstream, mlp_forward(p, x)> w.r.t. the parameters (summed over the batch) and the input"""
    h, single = _as_batch(p, x)
    upstream = np.atleast_2d(np.asarray(upstream, dtype=float))
    if upstream.shape != (h.shape[0], p.n_out):
        raise ValidationError("upstream of shape %s does not match outputs of shape %s"
                              % (upstream.shape, (h.shape[0], p.n_out)))
    _, _, cache = dual_forward(p, h)
    grads, x_bar = dual_backward(p, cache, upstream)
    return grads, x_bar[0] if single else x_bar


def mlp_jvp(p: MlpParams, x, tangent) -> Tuple[np.ndarray, np.ndarray]:
    """Value and directional derivative J(x) tangent for one input or a batch"""
    h, single = _as_batch(p, x)
    tangent = np.atleast_2d(np.asarray(tangent, dtype=float))
    if tangent.shape != h.shape:
        raise ValidationError("tangent of shape %s does not match input of shape %s" % (tangent.shape, h.shape))
    value, dvalue, _ = dual_forward(p, h, tangent[:, None, :])
    if single:
        return value[0], dvalue[0, 0]
    return value, dvalue[:, 0]


def _state_width(p: MlpParams, n_state: Optional[int]) -> int:
    if n_state is None:
        if p.n_in != p.n_out:
            raise DomainError("divergence needs a square field, got %d inputs and %d outputs" % (p.n_in, p.n_out))
        return p.n_out
    if n_state != p.n_out or n_state > p.n_in:
        raise DomainError("divergence needs a square field: %d state inputs vs %d outputs" % (n_state, p.n_out))
    return n_state


def exact_tangents(batch: int, n_state: int, n_in: int) -> np.ndarray:
    """Tangents e_i on the first n_state input channels, shape (batch, n_state, n_in)"""
    t = np.zeros((batch, n_state, n_in))
    t[:, np.arange(n_state), np.arange(n_state)] = 1.0
    return t


def rademacher(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


def divergence_exact(p: MlpParams, x, n_state: Optional[int] = None):
    """
    Divergence sum_i d z_i / d x_i by n_state forward-mode passes.

    Without ``n_state`` the network must be square; with it, the field is taken w.r.t. the first
    ``n_state`` input channels (the remaining inputs are conditioning) and ``n_state`` must equal n_out.
    """
    n_state = _state_width(p, n_state)
    h, single = _as_batch(p, x)
    _, jvp, _ = dual_forward(p, h, exact_tangents(h.shape[0], n_state, p.n_in))
    div = np.trace(jvp, axis1=1, axis2=2)
    return float(div[0]) if single else div


def divergence_hutchinson(p: MlpParams, x, n_probes: int, rng: Optional[np.random.Generator] = None,
                          n_state: Optional[int] = None, probes: Optional[np.ndarray] = None):
    """
    Hutchinson estimate mean_v v^T J v with Rademacher probes v.

    ``probes`` of shape (n_probes, n_state) (or (batch, n_probes, n_state)) replace the random draw.
    """
    n_state = _state_width(p, n_state)
    if n_probes < 1:
        raise ValidationError("n_probes must be >= 1, got %d" % n_probes)
    h, single = _as_batch(p, x)
    batch = h.shape[0]
    if probes is None:
        probes = rademacher(rng, (batch, n_probes, n_state))
    probes = np.broadcast_to(np.asarray(probes, dtype=float), (batch, n_probes, n_state))
    tangents = np.zeros((batch, n_probes, p.n_in))
    tangents[:, :, :n_state] = probes
    _, jvp, _ = dual_forward(p, h, tangents)
    est = np.einsum('bps,bps->b', probes, jvp) / n_probes
    return float(est[0]) if single else est


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    eps: float = 1e-8
    lr_decay: float = 1.0

    def __post_init__(self):
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("AdamW needs lr > 0 and betas in [0, 1)")
        if not (self.weight_decay >= 0 and self.eps > 0 and 0 < self.lr_decay <= 1):
            raise ValidationError("AdamW needs weight_decay >= 0, eps > 0 and lr_decay in (0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class OptimizerState:
    """First and second moments (flat, matching flatten_params), step counter and hyperparameters"""
    m: np.ndarray
    v: np.ndarray
    step: int
    config: AdamWConfig

    @classmethod
    def create(cls, p: MlpParams, config: AdamWConfig = AdamWConfig()) -> 'OptimizerState':
        return cls(np.zeros(p.size), np.zeros(p.size), 0, config)


def adamw_step(p: MlpParams, grads: MlpParams, state: OptimizerState) -> Tuple[MlpParams, OptimizerState]:
    """
    One AdamW update with bias correction and decoupled weight decay; the learning rate of
    update t (1-based) is ``lr * lr_decay^(t-1)``.
    """
    cfg = state.config
    step = state.step + 1
    g = flatten_params(grads)
    if g.shape != state.m.shape:
        raise ValidationError("gradient has %d entries, optimizer state has %d" % (g.size, state.m.size))
    if not np.all(np.isfinite(g)):
        raise TrainingError("non-finite gradient", step=step)
    theta = flatten_params(p)
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1 ** step)
    v_hat = v / (1.0 - cfg.beta2 ** step)
    lr = cfg.lr * cfg.lr_decay ** (step - 1)
    theta = theta - lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)
    return unflatten_params(theta, p.widths), OptimizerState(m, v, step, cfg)


@dataclass(frozen=True)
class EmbeddingSpec:
    """
    Widths of the conditioning blocks appended to the network input.

    ``time_width`` sinusoid channels encode the diffusion time over a geometric frequency ladder
    from 1 to ``max_frequency``. ``feature_width`` and ``time_index_width`` are per-entry widths: every
    entry ``(k, l)`` of the window carries the projected one-hot code of its feature index ``k`` and of
    its time index ``l``.
    """
    time_width: int = 16
    feature_width: int = 0
    time_index_width: int = 0
    max_frequency: float = 1000.0

    def __post_init__(self):
        for name in ('time_width', 'feature_width', 'time_index_width'):
            value = getattr(self, name)
            if value < 0 or value % 2:
                raise ValidationError("%s must be a nonnegative even number, got %r" % (name, value))
        if not self.max_frequency >= 1:
            raise ValidationError("max_frequency must be >= 1, got %r" % self.max_frequency)

    @property
    def index_width(self) -> int:
        return self.feature_width + self.time_index_width

    def block_width(self, n_state: int) -> int:
        """Width of the whole conditioning block for windows of ``n_state = K * L`` entries"""
        return self.time_width + n_state * self.index_width

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _frequencies(width: int, max_frequency: float) -> np.ndarray:
    half = width // 2
    if half == 1:
        return np.ones(1)
    return max_frequency ** (np.arange(half) / (half - 1))


def sinusoid(values, width: int, max_frequency: float) -> np.ndarray:
    """[sin(v w_r), cos(v w_r)] for every value, shape (len(values), width)"""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if width == 0:
        return np.zeros((values.shape[0], 0))
    angles = values[:, None] * _frequencies(width, max_frequency)[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def index_projection(n: int, width: int) -> np.ndarray:
    """Fixed ``(n, width)`` matrix mapping the one-hot code of an index in ``0..n-1`` to ``width`` channels"""
    return sinusoid(np.arange(n) / max(n, 1), width, 2.0 * math.pi)


def index_codes(spec: EmbeddingSpec, K: int, L: int) -> np.ndarray:
    """
    Per-entry index channels of shape ``(K, L, spec.index_width)``: entry ``(k, l)`` holds
    ``[onehot_K(k) @ P_K, onehot_L(l) @ P_L]``.
    """
    # onehot(k) @ P is row k of P
    features = index_projection(K, spec.feature_width)
    times = index_projection(L, spec.time_index_width)
    return np.concatenate([np.broadcast_to(features[:, None, :], (K, L, spec.feature_width)),
                           np.broadcast_to(times[None, :, :], (K, L, spec.time_index_width))], axis=2)


def embed(spec: EmbeddingSpec, diffusion_t, K: int, L: int) -> np.ndarray:
    """
    Conditioning block ``[time sinusoid, per-entry index channels]`` of width ``spec.block_width(K * L)``.

    The index channels are :func:`index_codes` flattened in row-major ``(k, l)`` order, so every entry
    of the flattened window has its own feature/time code. ``diffusion_t`` may be a scalar (returns
    shape (width,)) or a vector (returns (len, width)).
    """
    scalar = np.ndim(diffusion_t) == 0
    t = np.atleast_1d(np.asarray(diffusion_t, dtype=float))
    codes = index_codes(spec, K, L).reshape(-1)
    out = np.concatenate([sinusoid(t, spec.time_width, spec.max_frequency),
                          np.broadcast_to(codes, (t.shape[0], codes.size))], axis=1)
    return out[0] if scalar else out


@docval({'name': 'n_state', 'type': int, 'doc': 'number of state channels (K*L)'},
        {'name': 'hidden', 'type': (list, tuple), 'doc': 'hidden layer widths'},
        {'name': 'embedding', 'type': EmbeddingSpec, 'doc': 'conditioning widths'},
        {'name': 'conditional', 'type': bool, 'doc': 'whether the input carries a condition mask block'},
        is_method=False, returns='layer widths of the policy network', rtype=list)
def policy_widths(**kwargs):
    """Layer widths of a policy: inputs are state (+ mask) + embedding, outputs are the state channels"""
    n_state, hidden, embedding, conditional = getargs('n_state', 'hidden', 'embedding', 'conditional', kwargs)
    n_in = n_state * (2 if conditional else 1) + embedding.block_width(n_state)
    return [n_in] + [int(h) for h in hidden] + [n_state]
