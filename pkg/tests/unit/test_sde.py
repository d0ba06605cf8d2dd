"""Tests of the reference diffusions, their kernels and the Euler-Maruyama samplers"""
import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from hdmf.testing import TestCase

from sbridge.errors import DivergenceError, DomainError, ValidationError
from sbridge.sde import (VP, SdeSpec, diffusion_coefficient, em_backward, em_forward, eot_cost, forward_step,
                         prior_sample, reverse_step, sample_ensemble, transition_kernel)
from sbridge.utils import stream


class TestSdeSpec(TestCase):

    def test_defaults(self):
        spec = SdeSpec()
        self.assertEqual(spec.kind, 'VE')
        self.assertEqual(spec.n_steps, 100)
        self.assertAlmostEqual(spec.step, 0.01)
        self.assertEqual(spec.times.shape, (101,))

    def test_unknown_kind(self):
        with self.assertRaisesWith(ValidationError, "SdeSpec.kind must be 'VE' or 'VP', got 'XX'"):
            SdeSpec(kind='XX')

    def test_invalid_sigma_range(self):
        with self.assertRaises(ValidationError):
            SdeSpec(sigma_min=1.0, sigma_max=0.5)

    def test_invalid_steps(self):
        with self.assertRaises(ValidationError):
            SdeSpec(n_steps=0)

    def test_dict_round_trip(self):
        spec = SdeSpec(kind=VP, beta_min=0.5, beta_max=4.0, n_steps=7)
        self.assertEqual(SdeSpec.from_dict(spec.to_dict()), spec)

    def test_with_steps(self):
        spec = SdeSpec(sigma_max=3.0).with_steps(10)
        self.assertEqual(spec.n_steps, 10)
        self.assertEqual(spec.sigma_max, 3.0)


class TestDiffusionCoefficient(TestCase):

    def test_ve_value(self):
        spec = SdeSpec()
        expected = spec.sigma(0.3) * math.sqrt(2.0 * math.log(spec.sigma_max / spec.sigma_min))
        self.assertAlmostEqual(diffusion_coefficient(spec, 0.3), expected)

    def test_vp_value(self):
        spec = SdeSpec(kind=VP, beta_min=0.1, beta_max=20.0)
        self.assertAlmostEqual(diffusion_coefficient(spec, 0.5), math.sqrt(0.1 + 0.5 * 19.9))

    def test_ve_g_squared_is_derivative_of_variance(self):
        spec = SdeSpec()
        h = 1e-6
        derivative = (spec.sigma(0.4 + h) ** 2 - spec.sigma(0.4 - h) ** 2) / (2 * h)
        self.assertAlmostEqual(diffusion_coefficient(spec, 0.4) ** 2 / derivative, 1.0, places=6)

    def test_outside_horizon(self):
        with self.assertRaisesWith(DomainError, "t=1.5 outside [0, 1]"):
            diffusion_coefficient(SdeSpec(), 1.5)
        with self.assertRaises(DomainError):
            diffusion_coefficient(SdeSpec(), -0.1)


class TestTransitionKernel(TestCase):

    def test_ve_schedule(self):
        spec = SdeSpec()
        mean, var = transition_kernel(spec, 0.2, 0.7, np.array([1.0, -2.0]))
        assert_allclose(mean, [1.0, -2.0])
        assert_allclose(var, spec.sigma(0.7) ** 2 - spec.sigma(0.2) ** 2)

    def test_vp_schedule(self):
        spec = SdeSpec(kind=VP)
        mean, var = transition_kernel(spec, 0.0, 1.0, 2.0)
        integral = 0.1 + 0.5 * 19.9
        self.assertAlmostEqual(float(mean), 2.0 * math.exp(-0.5 * integral))
        self.assertAlmostEqual(float(var), 1.0 - math.exp(-integral))

    def test_constant_ve(self):
        mean, var = transition_kernel(SdeSpec(), 0.0, 1.0, np.zeros(3), form='constant', eps=0.25)
        assert_allclose(var, np.full(3, 0.5))

    def test_constant_vp_is_ornstein_uhlenbeck(self):
        spec = SdeSpec(kind=VP, gamma=2.0)
        mean, var = transition_kernel(spec, 0.0, 0.5, 1.0, form='constant', eps=0.5)
        self.assertAlmostEqual(float(mean), math.exp(-1.0))
        self.assertAlmostEqual(float(var), 0.5 * (1.0 - math.exp(-2.0)))

    def test_time_order(self):
        with self.assertRaisesWith(DomainError, "transition_kernel requires s < t, got s=0.5, t=0.5"):
            transition_kernel(SdeSpec(), 0.5, 0.5, 1.0)

    def test_nonpositive_eps(self):
        with self.assertRaises(DomainError):
            transition_kernel(SdeSpec(), 0.0, 1.0, 1.0, form='constant', eps=0.0)

    def test_unknown_form(self):
        with self.assertRaises(ValidationError):
            transition_kernel(SdeSpec(), 0.0, 1.0, 1.0, form='exact')


class TestSteps(TestCase):

    def test_zero_beta_keeps_initial_state(self):
        spec = SdeSpec(kind=VP, beta_min=0.0, beta_max=0.0, n_steps=8)
        x0 = np.array([[1.5, -0.5]])
        path = em_forward(spec, x0, noise=np.zeros((8, 1, 2)))
        assert_array_equal(path.terminal, x0)

    def test_controlled_vp_step_formula(self):
        spec = SdeSpec(kind=VP, beta_min=2.0, beta_max=2.0, n_steps=4)
        x = np.array([1.0, 2.0])
        z = np.array([0.5, -1.0])
        delta = 0.25
        expected = (1.0 - 0.5 * 2.0 * delta) * x + math.sqrt(2.0) * z * delta
        assert_allclose(forward_step(spec, x, 0, z, np.zeros(2)), expected)

    def test_reverse_ve_without_noise_or_policy(self):
        spec = SdeSpec(n_steps=10)
        x = np.array([0.3, 0.7])
        assert_array_equal(reverse_step(spec, x, 5, None, np.zeros(2)), x)

    def test_reverse_ve_single_step(self):
        spec = SdeSpec(sigma_min=0.1, sigma_max=2.0, n_steps=1)
        x = np.array([1.0, -1.0])
        z = np.array([0.5, 0.5])
        xi = np.array([0.3, -0.2])
        scale = math.sqrt(2.0 ** 2 - 0.1 ** 2)
        expected = x + scale * xi + spec.g(1.0) * z
        assert_allclose(reverse_step(spec, x, 1, z, xi), expected, rtol=1e-14)
        path = em_backward(spec, x[None], lambda y, t: np.broadcast_to(z, y.shape), noise=xi[None, None])
        assert_allclose(path.states[0, 0], expected, rtol=1e-14)

    def test_ve_increment_approaches_euler(self):
        spec = SdeSpec(sigma_max=5.0, n_steps=2000)
        for i in (1000, 1500, 2000):
            t = i * spec.step
            exact = math.sqrt(spec.sigma(t) ** 2 - spec.sigma(t - spec.step) ** 2)
            self.assertAlmostEqual(exact / (spec.g(t) * math.sqrt(spec.step)), 1.0, delta=1e-2)
            assert_allclose(reverse_step(spec, np.zeros(1), i, None, np.ones(1)), [exact])

    def test_reverse_vp_step_formula(self):
        spec = SdeSpec(kind=VP, beta_min=4.0, beta_max=4.0, n_steps=2)
        x = np.array([1.0])
        z = np.array([1.0])
        # coefficients taken at t_i = 1
        expected = (1.0 + 0.5 * 4.0 * 0.5) * x + 2.0 * z * 0.5
        assert_allclose(reverse_step(spec, x, 2, z, np.zeros(1)), expected)

    def test_backward_path_is_time_ordered(self):
        spec = SdeSpec(n_steps=6, sigma_max=2.0)
        xT = np.array([[3.0]])
        path = em_backward(spec, xT, None, rng=stream(0, 1))
        assert_array_equal(path.terminal, xT)
        assert_array_equal(path.times, spec.times)
        self.assertEqual(path.states.shape, (7, 1, 1))

    def test_noise_shape(self):
        with self.assertRaises(ValidationError):
            em_forward(SdeSpec(n_steps=3), np.zeros(2), noise=np.zeros((2, 2)))

    def test_needs_randomness(self):
        with self.assertRaisesWith(ValidationError, "either rng or noise must be given"):
            em_forward(SdeSpec(n_steps=3), np.zeros(2))

    def test_non_finite_state(self):
        def policy(x, t):
            return np.full_like(x, np.nan)

        with self.assertRaises(DivergenceError) as cm:
            em_forward(SdeSpec(n_steps=3), np.zeros(2), policy=policy, rng=stream(0, 2))
        self.assertEqual(cm.exception.step, 1)


class TestEnsembles(TestCase):

    def test_ve_terminal_moments(self):
        """Terminal mean and variance within three Monte-Carlo standard errors of the kernel"""
        spec = SdeSpec()
        n = 10000
        path = sample_ensemble(spec, np.array([0.5]), n, 7)
        terminal = path.terminal[:, 0]
        mean, var = transition_kernel(spec, 0.0, 1.0, np.array([0.5]))
        self.assertLess(abs(terminal.mean() - mean[0]), 3.0 * math.sqrt(var[0] / n))
        self.assertLess(abs(terminal.var(ddof=1) - var[0]), 3.0 * var[0] * math.sqrt(2.0 / (n - 1)))

    def test_weak_error_decreases_with_steps(self):
        spec = SdeSpec(kind=VP, beta_min=8.0, beta_max=8.0)
        exact = 10.0 * math.exp(-4.0)
        errors = []
        for n_steps in (10, 40):
            path = sample_ensemble(spec.with_steps(n_steps), np.array([10.0]), 10000, 3)
            errors.append(abs(path.terminal.mean() - exact))
        self.assertLess(errors[1], errors[0])

    def test_independent_of_blocking(self):
        spec = SdeSpec(n_steps=5)
        a = sample_ensemble(spec, np.array([0.0, 1.0]), 20, 11)
        b = sample_ensemble(spec, np.array([0.0, 1.0]), 20, 11, block_size=7)
        assert_array_equal(a.states, b.states)

    def test_path_streams_are_prefix_stable(self):
        spec = SdeSpec(n_steps=5)
        a = sample_ensemble(spec, np.array([0.0]), 10, 4)
        b = sample_ensemble(spec, np.array([0.0]), 4, 4)
        assert_array_equal(a.states[:, :4], b.states)

    def test_no_paths(self):
        with self.assertRaises(ValidationError):
            sample_ensemble(SdeSpec(), np.array([0.0]), 0, 1)


class TestPriorAndCost(TestCase):

    def test_prior_scale(self):
        draws = prior_sample(SdeSpec(sigma_max=5.0), (20000,), stream(1))
        self.assertAlmostEqual(draws.std(), 5.0, delta=0.15)
        draws = prior_sample(SdeSpec(kind=VP), (20000,), stream(1))
        self.assertAlmostEqual(draws.std(), 1.0, delta=0.03)

    def test_ve_cost(self):
        xs = np.array([[0.0, 0.0], [1.0, 0.0]])
        ys = np.array([[0.0, 1.0]])
        cost = eot_cost(SdeSpec(), 0.5, xs, ys)
        # Ker is N(x, 2 eps T) = N(x, 1)
        expected = np.array([[0.5], [1.0]]) + math.log(2.0 * math.pi)
        assert_allclose(cost, expected)

    def test_cost_dimension_mismatch(self):
        with self.assertRaises(DomainError):
            eot_cost(SdeSpec(), 0.5, np.zeros((2, 2)), np.zeros((2, 3)))

    def test_cost_nonpositive_eps(self):
        with self.assertRaises(DomainError):
            eot_cost(SdeSpec(), 0.0, np.zeros((2, 2)), np.zeros((2, 2)))
