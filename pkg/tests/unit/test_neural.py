"""Tests of the hand-differentiated MLP: passes, adjoints, divergence estimators and AdamW"""
import itertools
import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from hdmf.testing import TestCase

from sbridge.errors import DomainError, TrainingError, ValidationError
from sbridge.neural import (AdamWConfig, EmbeddingSpec, MlpParams, OptimizerState, adamw_step, divergence_exact,
                            divergence_hutchinson, dual_backward, dual_forward, embed, flatten_params, index_codes,
                            init_mlp, mlp_forward, mlp_grad, mlp_jvp, policy_widths, silu, silu_prime, silu_second,
                            unflatten_params, zeros_like)
from sbridge.utils import stream

H = 1e-5


def finite_difference(loss, p: MlpParams):
    """Central differences of loss w.r.t. every flattened parameter"""
    theta = flatten_params(p)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += H
        down[i] -= H
        grad[i] = (loss(unflatten_params(up, p.widths)) - loss(unflatten_params(down, p.widths))) / (2 * H)
    return grad


def relative_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


class TestParams(TestCase):

    def test_init(self):
        p = init_mlp([3, 5, 2], stream(0))
        self.assertEqual(p.widths, [3, 5, 2])
        self.assertEqual(p.size, 3 * 5 + 5 + 5 * 2 + 2)
        self.assertTrue(np.all(np.abs(p.weights[0]) <= math.sqrt(6.0 / 8.0)))
        assert_array_equal(p.biases[1], np.zeros(2))

    def test_flatten_layout(self):
        p = init_mlp([2, 3, 1], stream(1))
        flat = flatten_params(p)
        self.assertEqual(flat.dtype, np.dtype('<f8'))
        assert_array_equal(flat[:6], p.weights[0].ravel())
        assert_array_equal(unflatten_params(flat, p.widths).weights[1], p.weights[1])

    def test_unflatten_size(self):
        with self.assertRaises(ValidationError):
            unflatten_params(np.zeros(5), [2, 3, 1])

    def test_layer_mismatch(self):
        with self.assertRaises(ValidationError):
            MlpParams((np.zeros((3, 2)), np.zeros((1, 4))), (np.zeros(3), np.zeros(1)))

    def test_input_width(self):
        with self.assertRaises(ValidationError):
            mlp_forward(init_mlp([3, 2], stream(0)), np.zeros((4, 2)))


class TestActivation(TestCase):

    def test_derivatives(self):
        a = np.linspace(-4.0, 4.0, 17)
        assert_allclose(silu_prime(a), (silu(a + H) - silu(a - H)) / (2 * H), atol=1e-8)
        assert_allclose(silu_second(a), (silu_prime(a + H) - silu_prime(a - H)) / (2 * H), atol=1e-8)


class TestGradients(TestCase):

    def setUp(self):
        rng = stream(2)
        # random biases on top of the zero-bias initialization
        biases = MlpParams(tuple(np.zeros((o, i)) for i, o in zip([4, 6, 5], [6, 5, 4])),
                           tuple(rng.normal(0.0, 0.3, o) for o in [6, 5, 4]))
        self.p = init_mlp([4, 6, 5, 4], rng) + biases
        self.x = rng.standard_normal((5, 4))
        self.upstream = rng.standard_normal((5, 4))

    def test_parameter_gradient(self):
        grads, _ = mlp_grad(self.p, self.x, self.upstream)

        def loss(q):
            return np.sum(self.upstream * mlp_forward(q, self.x))
        self.assertLess(relative_error(flatten_params(grads), finite_difference(loss, self.p)), 1e-4)

    def test_input_gradient(self):
        _, x_bar = mlp_grad(self.p, self.x, self.upstream)
        fd = np.empty_like(self.x)
        for i in range(self.x.shape[1]):
            e = np.zeros(self.x.shape[1])
            e[i] = H
            fd[:, i] = np.sum(self.upstream * (mlp_forward(self.p, self.x + e) - mlp_forward(self.p, self.x - e)),
                              axis=1) / (2 * H)
        self.assertLess(relative_error(x_bar, fd), 1e-4)

    def test_jvp(self):
        v = stream(3).standard_normal(self.x.shape)
        _, jv = mlp_jvp(self.p, self.x, v)
        fd = (mlp_forward(self.p, self.x + H * v) - mlp_forward(self.p, self.x - H * v)) / (2 * H)
        self.assertLess(relative_error(jv, fd), 1e-6)

    def test_tangent_adjoint(self):
        """Gradient of a loss on values and tangents, i.e., through the second-order terms"""
        rng = stream(4)
        tangents = rng.standard_normal((5, 3, 4))
        out_bar = rng.standard_normal((5, 4))
        tangent_bar = rng.standard_normal((5, 3, 4))

        def loss(q):
            out, dout, _ = dual_forward(q, self.x, tangents)
            return np.sum(out_bar * out) + np.sum(tangent_bar * dout)
        _, _, cache = dual_forward(self.p, self.x, tangents)
        grads, _ = dual_backward(self.p, cache, out_bar, tangent_bar)
        self.assertLess(relative_error(flatten_params(grads), finite_difference(loss, self.p)), 1e-4)

    def test_divergence_gradient(self):
        def loss(q):
            return np.sum(divergence_exact(q, self.x))
        _, _, cache = dual_forward(self.p, self.x, np.broadcast_to(np.eye(4), (5, 4, 4)))
        tangent_bar = np.broadcast_to(np.eye(4), (5, 4, 4))
        grads, _ = dual_backward(self.p, cache, np.zeros((5, 4)), tangent_bar)
        self.assertLess(relative_error(flatten_params(grads), finite_difference(loss, self.p)), 1e-4)

    def test_tangent_adjoint_needs_tangents(self):
        _, _, cache = dual_forward(self.p, self.x)
        with self.assertRaises(ValidationError):
            dual_backward(self.p, cache, np.zeros((5, 4)), np.zeros((5, 1, 4)))


class TestDivergence(TestCase):

    def setUp(self):
        self.p = init_mlp([4, 8, 4], stream(5))
        self.x = stream(6).standard_normal((3, 4))

    def test_exact_matches_jacobian_trace(self):
        div = divergence_exact(self.p, self.x)
        for b in range(3):
            jac = np.empty((4, 4))
            for i in range(4):
                e = np.zeros(4)
                e[i] = H
                jac[:, i] = (mlp_forward(self.p, self.x[b] + e) - mlp_forward(self.p, self.x[b] - e)) / (2 * H)
            self.assertAlmostEqual(div[b], np.trace(jac), delta=1e-7)

    def test_hutchinson_exact_on_diagonal_linear_field(self):
        d = np.array([1.0, -2.0, 0.5, 3.0])
        p = MlpParams((np.diag(d),), (np.zeros(4),))
        x = stream(7).standard_normal((6, 4))
        for seed in range(5):
            est = divergence_hutchinson(p, x, 1, rng=stream(seed))
            assert_allclose(est, np.full(6, d.sum()), atol=1e-12)

    def test_full_probe_set_is_exact(self):
        probes = np.array(list(itertools.product([-1.0, 1.0], repeat=4)))
        est = divergence_hutchinson(self.p, self.x, len(probes), probes=probes)
        assert_allclose(est, divergence_exact(self.p, self.x), atol=1e-10)

    def test_state_subset(self):
        p = init_mlp([6, 8, 4], stream(8))
        x = stream(9).standard_normal((2, 6))
        div = divergence_exact(p, x, n_state=4)
        full = np.zeros((2, 4, 6))
        full[:, np.arange(4), np.arange(4)] = 1.0
        _, jvp, _ = dual_forward(p, x, full)
        assert_allclose(div, np.trace(jvp, axis1=1, axis2=2))

    def test_requires_square_field(self):
        with self.assertRaises(DomainError):
            divergence_exact(init_mlp([3, 2], stream(0)), np.zeros((1, 3)))

    def test_probe_count(self):
        with self.assertRaisesWith(ValidationError, "n_probes must be >= 1, got 0"):
            divergence_hutchinson(self.p, self.x, 0, rng=stream(0))


class TestAdamW(TestCase):

    def test_first_step_is_sign_step(self):
        p = init_mlp([2, 3], stream(1))
        grads = MlpParams((np.full((3, 2), 0.5),), (np.full(3, -2.0),))
        state = OptimizerState.create(p, AdamWConfig(lr=0.1, eps=1e-12))
        q, state = adamw_step(p, grads, state)
        assert_allclose(q.weights[0], p.weights[0] - 0.1, atol=1e-10)
        assert_allclose(q.biases[0], p.biases[0] + 0.1, atol=1e-10)
        self.assertEqual(state.step, 1)

    def test_learning_rate_decay(self):
        p = zeros_like(init_mlp([1, 1], stream(0)))
        grads = MlpParams((np.ones((1, 1)),), (np.ones(1),))
        state = OptimizerState.create(p, AdamWConfig(lr=1.0, eps=1e-12, lr_decay=0.5))
        q, state = adamw_step(p, grads, state)
        r, state = adamw_step(q, grads, state)
        # constant gradients keep m_hat / sqrt(v_hat) at one
        assert_allclose(flatten_params(r) - flatten_params(q), [-0.5, -0.5])

    def test_weight_decay(self):
        p = MlpParams((np.full((1, 1), 2.0),), (np.zeros(1),))
        grads = zeros_like(p)
        state = OptimizerState.create(p, AdamWConfig(lr=0.1, weight_decay=0.5))
        q, _ = adamw_step(p, grads, state)
        assert_allclose(q.weights[0], [[2.0 - 0.1 * 0.5 * 2.0]])

    def test_non_finite_gradient(self):
        p = init_mlp([1, 1], stream(0))
        grads = MlpParams((np.full((1, 1), np.inf),), (np.zeros(1),))
        with self.assertRaises(TrainingError) as cm:
            adamw_step(p, grads, OptimizerState.create(p))
        self.assertEqual(cm.exception.step, 1)

    def test_invalid_config(self):
        with self.assertRaises(ValidationError):
            AdamWConfig(lr=0.0)


class TestEmbedding(TestCase):

    def test_widths(self):
        spec = EmbeddingSpec(time_width=8, feature_width=4, time_index_width=2)
        self.assertEqual(spec.block_width(10), 8 + 10 * 6)
        self.assertEqual(embed(spec, 0.3, 2, 5).shape, (68,))
        self.assertEqual(embed(spec, np.array([0.1, 0.2, 0.3]), 2, 5).shape, (3, 68))
        self.assertEqual(index_codes(spec, 2, 5).shape, (2, 5, 6))

    def test_index_codes_per_entry(self):
        spec = EmbeddingSpec(time_width=4, feature_width=4, time_index_width=2)
        K, L = 3, 7
        codes = index_codes(spec, K, L)
        entries = codes.reshape(K * L, -1)
        for a, b in itertools.combinations(range(K * L), 2):
            self.assertGreater(np.max(np.abs(entries[a] - entries[b])), 1e-3)
        # entries sharing a feature share the feature code, entries sharing a time share the time code
        assert_allclose(codes[1, 0, :4], codes[1, 6, :4])
        assert_allclose(codes[0, 2, 4:], codes[2, 2, 4:])
        out = embed(spec, 0.5, K, L)
        assert_allclose(out[4:].reshape(K, L, 6), codes)

    def test_index_codes_follow_time(self):
        spec = EmbeddingSpec(time_width=4, feature_width=2)
        out = embed(spec, np.array([0.0, 0.5, 1.0]), 2, 3)
        assert_allclose(out[:, 4:], np.broadcast_to(out[0, 4:], (3, 12)))
        self.assertFalse(np.allclose(out[0, :4], out[1, :4]))

    def test_time_code_at_zero(self):
        out = embed(EmbeddingSpec(time_width=6), 0.0, 1, 1)
        assert_allclose(out, [0, 0, 0, 1, 1, 1])

    def test_odd_width(self):
        with self.assertRaisesWith(ValidationError, "time_width must be a nonnegative even number, got 3"):
            EmbeddingSpec(time_width=3)

    def test_policy_widths(self):
        embedding = EmbeddingSpec(time_width=4)
        self.assertEqual(policy_widths(6, [16], embedding, True), [16, 16, 6])
        self.assertEqual(policy_widths(6, (), embedding, False), [10, 6])
        indexed = EmbeddingSpec(time_width=4, feature_width=2, time_index_width=2)
        self.assertEqual(policy_widths(6, (), indexed, True), [12 + 4 + 6 * 4, 6])
