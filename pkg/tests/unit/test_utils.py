import numpy as np
from numpy.testing import assert_array_equal

from hdmf.testing import TestCase

from sbridge.errors import DivergenceError
from sbridge.utils import ParallelMap, check_finite, path_noise, split_evenly, stream


def scaled_draw(seed, index, scale):
    return scale * stream(seed, index).standard_normal(3)


class TestStreams(TestCase):

    def test_reproducible(self):
        assert_array_equal(stream(4, 1, 2).uniform(size=5), stream(4, 1, 2).uniform(size=5))

    def test_keys_are_independent(self):
        a = stream(4, 1).standard_normal(20000)
        b = stream(4, 2).standard_normal(20000)
        self.assertLess(abs(np.corrcoef(a, b)[0, 1]), 0.05)
        self.assertFalse(np.array_equal(stream(4).uniform(size=3), stream(5).uniform(size=3)))

    def test_path_noise_depends_on_index_only(self):
        full = path_noise(1, range(6), 4, 2, 7)
        part = path_noise(1, [2, 5], 4, 2, 7)
        self.assertEqual(full.shape, (4, 6, 2))
        assert_array_equal(part[:, 0], full[:, 2])
        assert_array_equal(part[:, 1], full[:, 5])


class TestHelpers(TestCase):

    def test_split_evenly(self):
        blocks = split_evenly(10, 3)
        self.assertEqual([list(b) for b in blocks], [[0, 1, 2], [3, 4, 5], [6, 7, 8, 9]])
        self.assertEqual(len(split_evenly(2, 8)), 2)
        self.assertEqual(split_evenly(5, 0), [range(0, 5)])

    def test_check_finite(self):
        check_finite(np.ones(3), "state")
        with self.assertRaisesWith(DivergenceError, "non-finite state encountered (step 4)"):
            check_finite(np.array([1.0, np.inf]), "state", step=4)


class TestParallelMap(TestCase):

    def test_serial_matches_pool(self):
        arguments = [(3, i, 0.5) for i in range(5)]
        serial = ParallelMap().map(scaled_draw, arguments)
        pooled = ParallelMap(number_of_jobs=2, max_threads_per_process=1).map(scaled_draw, arguments)
        for a, b in zip(serial, pooled):
            assert_array_equal(a, b)

    def test_thread_limit_in_process(self):
        self.assertEqual(ParallelMap(max_threads_per_process=1).map(pow, [(2, 3), (3, 2)]), [8, 9])
