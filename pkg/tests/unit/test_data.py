"""Tests of the synthetic windows, the mask rules and the JSON-lines dataset format"""
import csv
import json
import math
import os

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from hdmf.testing import TestCase

from sbridge.data import (DATA_STREAM, Dataset, FeatureStats, MaskSet, SignalConfig, TargetStrategy,
                          TimeSeriesWindow, destandardize, feature_stats, generate, load_dataset, make_masks,
                          save_dataset, signal, split_dataset, standardize, time_grid, window_to_csv,
                          windows_to_csv)
from sbridge.errors import DatasetFormatError, ValidationError
from sbridge.utils import stream

from .utils import get_temp_filepath, tiny_dataset


class TestSignals(TestCase):

    def test_known_values(self):
        self.assertAlmostEqual(float(signal(1, 0.0)), 0.0)
        self.assertAlmostEqual(float(signal(3, 0.25)), 1.0)
        self.assertAlmostEqual(float(signal(5, 0.5)), 0.15)

    def test_vectorized(self):
        self.assertEqual(signal(8, np.linspace(0, 1, 7)).shape, (7,))

    def test_index_range(self):
        with self.assertRaisesWith(ValidationError, "signal index must be an integer in 1..8, got 9"):
            signal(9, 0.0)


class TestTargetStrategy(TestCase):

    def test_parse(self):
        self.assertEqual(TargetStrategy.parse('random_ratio:0.25'), TargetStrategy('random_ratio', 0.25))
        self.assertEqual(TargetStrategy.parse('forecast:10'), TargetStrategy('forecast', 10))

    def test_parse_errors(self):
        with self.assertRaises(ValidationError):
            TargetStrategy.parse('forecast')
        with self.assertRaises(ValidationError):
            TargetStrategy.parse('forecast:ten')
        with self.assertRaises(ValidationError):
            TargetStrategy.parse('middle:3')

    def test_ratio_range(self):
        with self.assertRaises(ValidationError):
            TargetStrategy('random_ratio', 1.0)


class TestSignalConfig(TestCase):

    def test_limits(self):
        with self.assertRaisesWith(ValidationError, "K must lie in [1, 8], got 9"):
            SignalConfig(K=9)
        with self.assertRaises(ValidationError):
            SignalConfig(L=1)
        with self.assertRaises(ValidationError):
            SignalConfig(n_samples=0)
        with self.assertRaises(ValidationError):
            SignalConfig(drop_ratio=1.0)

    def test_block_longer_than_window(self):
        with self.assertRaisesWith(ValidationError, "block length 20 exceeds L=10"):
            SignalConfig(L=10)

    def test_dict_round_trip(self):
        cfg = SignalConfig(K=3, L=12, noise_sigma=0.2, n_samples=5, drop_ratio=0.1,
                           strategy=TargetStrategy('forecast', 8))
        self.assertEqual(SignalConfig.from_dict(cfg.to_dict()), cfg)


class TestMasks(TestCase):

    def test_zero_ratio(self):
        m_obs = stream(0).uniform(size=(4, 10)) > 0.3
        masks = make_masks(m_obs, TargetStrategy('random_ratio', 0.0), stream(1))
        self.assertFalse(masks.m_target.any())
        assert_array_equal(masks.m_cond, m_obs)

    def test_forecast_without_future(self):
        masks = make_masks(np.ones((3, 10)), TargetStrategy('forecast', 10), stream(0))
        self.assertFalse(masks.m_target.any())

    def test_forecast_tail(self):
        masks = make_masks(np.ones((2, 10)), TargetStrategy('forecast', 6), stream(0))
        self.assertTrue(masks.m_target[:, 6:].all())
        self.assertFalse(masks.m_target[:, :6].any())

    def test_random_ratio_concentration(self):
        masks = make_masks(np.ones((8, 50)), TargetStrategy('random_ratio', 0.5), stream(3))
        self.assertLess(abs(int(masks.m_target.sum()) - 200), 3.0 * math.sqrt(400 * 0.25))

    def test_consecutive_block_per_feature(self):
        masks = make_masks(np.ones((5, 12)), TargetStrategy('consecutive_block', 4), stream(2))
        for row in masks.m_target:
            idx = np.flatnonzero(row)
            self.assertEqual(len(idx), 4)
            assert_array_equal(np.diff(idx), np.ones(3))

    def test_block_too_long(self):
        with self.assertRaises(ValidationError):
            make_masks(np.ones((2, 5)), TargetStrategy('consecutive_block', 6), stream(0))

    def test_invariants_over_random_configs(self):
        rng = stream(4)
        kinds = ('consecutive_block', 'random_ratio', 'forecast')
        for _ in range(10000):
            K, L = int(rng.integers(1, 9)), int(rng.integers(2, 20))
            kind = kinds[int(rng.integers(3))]
            value = float(rng.uniform(0, 0.99)) if kind == 'random_ratio' else int(rng.integers(0, L + 1))
            m_obs = rng.uniform(size=(K, L)) >= rng.uniform(0, 0.99)
            m = make_masks(m_obs, TargetStrategy(kind, value), rng)
            self.assertFalse((m.m_cond & m.m_target).any())
            assert_array_equal(m.m_cond & m.m_obs, m.m_cond)
            assert_array_equal(m.m_target & m.m_obs, m.m_target)

    def test_overlap_rejected(self):
        ones = np.ones((2, 3), dtype=bool)
        with self.assertRaisesWith(ValidationError, "condition and target masks overlap"):
            MaskSet(ones, ones, ones)

    def test_condition_outside_observed(self):
        with self.assertRaises(ValidationError):
            MaskSet(np.zeros((2, 3)), np.ones((2, 3)), np.zeros((2, 3)))

    def test_unobserved_values_zeroed(self):
        m_obs = np.array([[True, False, True]])
        w = TimeSeriesWindow(np.array([[1.0, np.nan, 3.0]]), MaskSet(m_obs, m_obs, np.zeros((1, 3), bool)))
        assert_array_equal(w.values, [[1.0, 0.0, 3.0]])


class TestGenerate(TestCase):

    def test_deterministic(self):
        cfg = SignalConfig(K=3, L=10, noise_sigma=0.0, n_samples=2, strategy=TargetStrategy('forecast', 7))
        a, b = generate(cfg, 5), generate(cfg, 5)
        for wa, wb in zip(a.windows, b.windows):
            assert_array_equal(wa.values, wb.values)
            assert_array_equal(wa.masks.m_target, wb.masks.m_target)

    def test_noiseless_rows_are_shifted_signals(self):
        cfg = SignalConfig(K=4, L=10, noise_sigma=0.0, n_samples=3, strategy=TargetStrategy('forecast', 7))
        ds = generate(cfg, 2)
        for i, w in enumerate(ds.windows):
            shift = stream(2, DATA_STREAM, i).uniform(0.0, 1.0)
            for k in range(1, 5):
                assert_array_equal(w.values[k - 1], signal(k, time_grid(10) + shift))

    def test_noise_level(self):
        strategy = TargetStrategy('forecast', 10)
        clean = generate(SignalConfig(K=2, L=10, noise_sigma=0.0, n_samples=1000, strategy=strategy), 9)
        noisy = generate(SignalConfig(K=2, L=10, noise_sigma=0.1, n_samples=1000, strategy=strategy), 9)
        residual = noisy.stacked()[0] - clean.stacked()[0]
        self.assertAlmostEqual(residual.var() / 0.01, 1.0, delta=0.15)

    def test_drop_ratio(self):
        ds = generate(SignalConfig(K=8, L=50, n_samples=20, drop_ratio=0.3), 1)
        observed = ds.stacked()[1].mean()
        self.assertAlmostEqual(observed, 0.7, delta=0.05)

    def test_header_fields(self):
        ds = tiny_dataset()
        self.assertEqual((ds.K, ds.L, ds.seed, len(ds)), (2, 6, 0, 12))
        self.assertEqual(ds.config['strategy'], 'consecutive_block:2')


class TestDatasetFile(TestCase):

    def setUp(self):
        self.path = get_temp_filepath()

    def tearDown(self):
        if os.path.exists(self.path):
            os.remove(self.path)

    def test_round_trip(self):
        ds = generate(SignalConfig(K=3, L=8, n_samples=5, drop_ratio=0.2, strategy=TargetStrategy('forecast', 5)), 3)
        save_dataset(ds, self.path)
        read = load_dataset(self.path)
        self.assertEqual((read.K, read.L, read.seed), (3, 8, 3))
        self.assertEqual(read.config, ds.config)
        for a, b in zip(ds.windows, read.windows):
            assert_array_equal(a.values, b.values)
            assert_array_equal(a.masks.m_obs, b.masks.m_obs)
            assert_array_equal(a.masks.m_cond, b.masks.m_cond)
            assert_array_equal(a.masks.m_target, b.masks.m_target)

    def test_header_describes_shape(self):
        save_dataset(tiny_dataset(n_samples=3, K=4, L=7), self.path)
        with open(self.path) as f:
            header = json.loads(f.readline())
        self.assertEqual((header['K'], header['L'], header['n_records']), (4, 7, 3))

    def test_truncated(self):
        save_dataset(tiny_dataset(n_samples=4), self.path)
        with open(self.path) as f:
            lines = f.readlines()
        with open(self.path, 'w') as f:
            f.writelines(lines[:3])
        with self.assertRaises(DatasetFormatError) as cm:
            load_dataset(self.path)
        self.assertIn("header declares 4 records but the file holds 2", str(cm.exception))

    def test_partial_last_record(self):
        save_dataset(tiny_dataset(n_samples=3), self.path)
        with open(self.path) as f:
            text = f.read()
        with open(self.path, 'w') as f:
            f.write(text[:-20])
        with self.assertRaises(DatasetFormatError) as cm:
            load_dataset(self.path)
        self.assertEqual(cm.exception.line, 4)

    def test_bad_mask(self):
        save_dataset(tiny_dataset(n_samples=2), self.path)
        with open(self.path) as f:
            lines = f.readlines()
        record = json.loads(lines[2])
        record['m_cond'][0][0] = 2
        lines[2] = json.dumps(record) + '\n'
        with open(self.path, 'w') as f:
            f.writelines(lines)
        with self.assertRaisesWith(DatasetFormatError, "line 3: m_cond must be a 0/1 grid of shape (2, 6)"):
            load_dataset(self.path)

    def test_empty(self):
        open(self.path, 'w').close()
        with self.assertRaisesWith(DatasetFormatError, "line 1: empty dataset file"):
            load_dataset(self.path)

    def test_bad_version(self):
        with open(self.path, 'w') as f:
            f.write(json.dumps({'version': 99, 'K': 1, 'L': 2, 'n_records': 0}) + '\n')
        with self.assertRaisesWith(DatasetFormatError, "line 1: unsupported dataset version 99"):
            load_dataset(self.path)


class TestSplitAndScale(TestCase):

    def test_default_split(self):
        train, val = split_dataset(tiny_dataset(n_samples=10))
        self.assertEqual((len(train), len(val)), (8, 2))

    def test_explicit_split(self):
        ds = tiny_dataset(n_samples=10)
        train, val = split_dataset(ds, 3)
        assert_array_equal(val[0].values, ds[3].values)

    def test_split_range(self):
        with self.assertRaises(ValidationError):
            split_dataset(tiny_dataset(n_samples=4), 5)

    def test_standardize_round_trip(self):
        ds = tiny_dataset(n_samples=20)
        stats = feature_stats(ds)
        scaled = standardize(ds, stats)
        values, m_obs, _, _ = scaled.stacked()
        for k in range(ds.K):
            observed = values[:, k][m_obs[:, k]]
            self.assertAlmostEqual(observed.mean(), 0.0, places=10)
            self.assertAlmostEqual(observed.std(), 1.0, places=10)
        assert_allclose(destandardize(scaled[0].values, stats), ds[0].values)

    def test_constant_feature(self):
        masks = MaskSet(np.ones((1, 3)), np.ones((1, 3)), np.zeros((1, 3)))
        ds = Dataset([TimeSeriesWindow(np.full((1, 3), 2.0), masks)], 1, 3)
        stats = feature_stats(ds)
        assert_array_equal(stats.std, [1.0])
        self.assertEqual(FeatureStats.from_dict(stats.to_dict()).mean.tolist(), [2.0])


def test_windows_csv(tmpdir):
    ds = tiny_dataset(n_samples=2, K=2, L=6)
    path = str(tmpdir.join('preview.csv'))
    windows_to_csv(ds.windows, path)
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['window', 'feature', 'time', 'value', 'obs', 'cond', 'target']
    assert len(rows) == 1 + 2 * 2 * 6
    assert float(rows[1][3]) == ds[0].values[0, 0]


def test_window_csv(tmpdir):
    window = tiny_dataset(n_samples=1, K=2, L=6)[0]
    path = str(tmpdir.join('window.csv'))
    window_to_csv(window, path)
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['feature', 'time', 'value', 'obs', 'cond', 'target']
    assert len(rows) == 1 + 2 * 6
    assert [int(v) for v in rows[-1][3:]] == [int(window.masks.m_obs[1, 5]), int(window.masks.m_cond[1, 5]),
                                             int(window.masks.m_target[1, 5])]
