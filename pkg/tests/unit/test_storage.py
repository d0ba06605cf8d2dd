"""Tests of policy checkpoints and the Zarr sample store"""
import os
import shutil

import numcodecs
import numpy as np
from numpy.testing import assert_array_equal

from hdmf.testing import TestCase

from sbridge.csbi import init_pair
from sbridge.errors import ValidationError
from sbridge.neural import flatten_params
from sbridge.storage import SampleStore, checkpoint_paths, load_checkpoint, save_checkpoint
from sbridge.utils import stream

from .utils import get_temp_filepath, tiny_train_config


class TestCheckpoint(TestCase):

    def setUp(self):
        self.prefix = get_temp_filepath()
        self.policy = init_pair(tiny_train_config(), 2, 3).backward

    def tearDown(self):
        for path in checkpoint_paths(self.prefix):
            if os.path.exists(path):
                os.remove(path)

    def test_round_trip(self):
        save_checkpoint(self.policy, self.prefix, step=12, seed=3, extra={'note': 'x'})
        policy, sidecar = load_checkpoint(self.prefix)
        assert_array_equal(flatten_params(policy.params), flatten_params(self.policy.params))
        self.assertEqual(policy.embedding, self.policy.embedding)
        self.assertTrue(policy.conditional)
        self.assertEqual((sidecar['step'], sidecar['seed'], sidecar['extra']), (12, 3, {'note': 'x'}))
        self.assertEqual(sidecar['dtype'], '<f8')

    def test_binary_layout(self):
        save_checkpoint(self.policy, self.prefix)
        bin_path, _ = checkpoint_paths(self.prefix)
        self.assertEqual(os.path.getsize(bin_path), 8 * self.policy.params.size)

    def test_size_mismatch(self):
        save_checkpoint(self.policy, self.prefix)
        bin_path, _ = checkpoint_paths(self.prefix)
        np.zeros(3, dtype='<f8').tofile(bin_path)
        with self.assertRaises(ValidationError):
            load_checkpoint(self.prefix)

    def test_missing(self):
        with self.assertRaises(OSError):
            load_checkpoint(self.prefix)


class TestSampleStore(TestCase):

    def setUp(self):
        self.path = get_temp_filepath()

    def tearDown(self):
        if os.path.exists(self.path):
            shutil.rmtree(self.path)

    def write(self, compressor=None):
        store = SampleStore(self.path, mode='w')
        store.create(2, 5, 2, 3, compressor=compressor)
        rng = stream(0)
        self.samples = rng.standard_normal((2, 5, 2, 3))
        self.m_cond = rng.uniform(size=(2, 2, 3)) < 0.5
        for i in range(2):
            store.write_window(i, self.samples[i], self.samples[i, 0] * self.m_cond[i], self.m_cond[i],
                               ~self.m_cond[i], self.samples[i, 1])
        store.consolidate()
        return store

    def test_round_trip(self):
        self.write()
        self.assertTrue(SampleStore.can_read(self.path))
        store = SampleStore(self.path)
        self.assertEqual(store.n_samples, 5)
        self.assertEqual(store.shape, (2, 5, 2, 3))
        assert_array_equal(store.read('samples'), self.samples)
        m_cond = store.read('m_cond')
        self.assertEqual(m_cond.dtype, np.dtype(bool))
        assert_array_equal(m_cond, self.m_cond)
        assert_array_equal(store.read('m_target'), ~self.m_cond)

    def test_uncompressed(self):
        self.write(compressor=False)
        self.assertIsNone(SampleStore(self.path).group['samples'].compressor)

    def test_custom_compressor(self):
        self.write(compressor=numcodecs.Zlib(level=1))
        assert_array_equal(SampleStore(self.path).read('samples'), self.samples)

    def test_wrong_window_shape(self):
        store = SampleStore(self.path, mode='w')
        store.create(1, 5, 2, 3)
        with self.assertRaises(ValidationError):
            store.write_window(0, np.zeros((4, 2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)),
                               np.zeros((2, 3)))

    def test_dimensions(self):
        with self.assertRaisesWith(ValidationError, "sample store dimensions must be positive"):
            SampleStore(self.path, mode='w').create(0, 5, 2, 3)

    def test_can_read(self):
        self.assertFalse(SampleStore.can_read(self.path))
