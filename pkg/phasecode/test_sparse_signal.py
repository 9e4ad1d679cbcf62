import cmath
import math
import os
import tempfile
import unittest

import numpy as np

from phasecode.sparse_signal import SparseSignal, global_phase_error, random_sparse_signal, read_signal, \
    support_error, trial_seed, write_signal


class TestRandomSparseSignal(unittest.TestCase):
    def test_zero_sparsity(self):
        signal = random_sparse_signal(10, 0, seed=1)
        self.assertEqual(signal.k, 0)
        self.assertEqual(signal.support, {})

    def test_full_support(self):
        signal = random_sparse_signal(10, 10, seed=1)
        self.assertEqual(signal.indices.tolist(), list(range(1, 11)))

    def test_same_seed_same_signal(self):
        first = random_sparse_signal(20_000, 1000, seed=7)
        second = random_sparse_signal(20_000, 1000, seed=7)
        self.assertEqual(first, second)
        self.assertEqual(first.k, 1000)
        self.assertNotEqual(first, random_sparse_signal(20_000, 1000, seed=8))

    def test_magnitudes_within_range(self):
        signal = random_sparse_signal(500, 200, seed=3, magnitude_range=(0.5, 2.0))
        magnitudes = np.abs(signal.values)
        self.assertTrue(np.all(magnitudes >= 0.5))
        self.assertTrue(np.all(magnitudes <= 2.0))

    def test_sparsity_above_length_is_rejected(self):
        with self.assertRaises(ValueError):
            random_sparse_signal(10, 11, seed=1)

    def test_bad_magnitude_range_is_rejected(self):
        with self.assertRaises(ValueError):
            random_sparse_signal(10, 3, seed=1, magnitude_range=(0.0, 1.0))


class TestSparseSignal(unittest.TestCase):
    def test_rejects_zero_values(self):
        with self.assertRaises(ValueError):
            SparseSignal(5, np.array([1, 2]), np.array([1.0, 0.0]))

    def test_rejects_out_of_range_indices(self):
        with self.assertRaises(ValueError):
            SparseSignal(5, np.array([0]), np.array([1.0]))
        with self.assertRaises(ValueError):
            SparseSignal(5, np.array([6]), np.array([1.0]))

    def test_from_support_drops_zeros_and_sorts(self):
        signal = SparseSignal.from_support(8, {5: 1j, 2: 3.0, 7: 0})
        self.assertEqual(signal.indices.tolist(), [2, 5])
        self.assertEqual(signal.get(5), 1j)
        self.assertEqual(signal.get(7), 0j)

    def test_json_file(self):
        signal = random_sparse_signal(100, 12, seed=11)
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'signal.json')
            write_signal(signal, path)
            self.assertEqual(read_signal(path), signal)

    def test_dense_view(self):
        signal = SparseSignal.from_support(4, {1: 2.0, 4: -1j})
        np.testing.assert_array_equal(signal.to_dense(), [2.0, 0, 0, -1j])


class TestGlobalPhaseError(unittest.TestCase):
    def test_rotation_invariance(self):
        rng = np.random.default_rng(5)
        for case in range(100):
            x = random_sparse_signal(200, 20, seed=case)
            phi = rng.uniform(0, 2 * math.pi)
            self.assertLess(global_phase_error(x, x.scaled(cmath.exp(1j * phi))), 1e-12)

    def test_fixed_rotation(self):
        x = random_sparse_signal(1000, 50, seed=2)
        self.assertLess(global_phase_error(x, x.scaled(cmath.exp(1.3j))), 1e-12)

    def test_joint_rotation_does_not_change_error(self):
        x = random_sparse_signal(300, 10, seed=4)
        xhat = SparseSignal(x.n, x.indices, x.values + 0.05)
        rotation = cmath.exp(0.7j)
        self.assertAlmostEqual(global_phase_error(x, xhat),
                               global_phase_error(x.scaled(rotation), xhat.scaled(rotation)), places=12)

    def test_dropped_entry_carrying_all_energy(self):
        x = SparseSignal.from_support(10, {4: 2 - 1j})
        self.assertEqual(global_phase_error(x, SparseSignal.empty(10)), 1.0)

    def test_dropped_entry_is_orthogonal_residual(self):
        x = SparseSignal.from_support(10, {1: 3.0, 2: 4j})
        xhat = x.restricted([1]).scaled(1j)
        self.assertAlmostEqual(global_phase_error(x, xhat), 0.8, places=12)

    def test_empty_conventions(self):
        self.assertEqual(global_phase_error(SparseSignal.empty(5), SparseSignal.empty(5)), 0.0)
        self.assertEqual(global_phase_error(SparseSignal.empty(5), SparseSignal.from_support(5, {1: 1.0})),
                         math.inf)

    def test_length_mismatch(self):
        with self.assertRaises(ValueError):
            global_phase_error(SparseSignal.empty(5), SparseSignal.empty(6))

    def test_agrees_with_grid_search(self):
        rng = np.random.default_rng(9)
        grid = np.linspace(0, 2 * math.pi, 1_000_000, endpoint=False)
        for case in range(5):
            x = random_sparse_signal(64, 8, seed=100 + case)
            noise = (rng.normal(size=8) + 1j * rng.normal(size=8)) * 0.3
            xhat = SparseSignal(x.n, x.indices, (x.values + noise) * cmath.exp(1j * rng.uniform(0, 6)))

            best = math.inf
            for start in range(0, grid.size, 100_000):
                rotations = np.exp(1j * grid[start:start + 100_000])[:, None]
                errors = np.linalg.norm(x.values[None, :] - rotations * xhat.values[None, :], axis=1)
                best = min(best, float(errors.min()))
            best /= x.norm()
            self.assertAlmostEqual(global_phase_error(x, xhat), best, delta=1e-6)


class TestSupportError(unittest.TestCase):
    def test_identical(self):
        x = random_sparse_signal(50, 5, seed=1)
        self.assertEqual(support_error(x, x), (0, 0))

    def test_empty_estimate(self):
        x = random_sparse_signal(50, 5, seed=1)
        self.assertEqual(support_error(x, SparseSignal.empty(50)), (5, 0))

    def test_extra_index(self):
        x = SparseSignal.from_support(50, {3: 1.0, 9: 2.0})
        xhat = SparseSignal.from_support(50, {3: 1.0, 9: 2.0, 40: 0.5})
        self.assertEqual(support_error(x, xhat), (0, 1))


class TestTrialSeed(unittest.TestCase):
    def test_deterministic_and_distinct(self):
        seeds = [trial_seed(42, trial) for trial in range(1000)]
        self.assertEqual(seeds, [trial_seed(42, trial) for trial in range(1000)])
        self.assertEqual(len(set(seeds)), 1000)
        self.assertTrue(all(0 <= s < 2 ** 64 for s in seeds))

    def test_rejects_negative_seed(self):
        with self.assertRaises(ValueError):
            trial_seed(-1, 0)
