import cmath
import math
import os
import tempfile
import unittest

import numpy as np

from phasecode.graph_design import CodeGraph, GraphParams, harmonic_lambda, sample_graph
from phasecode.measurement import GenericRow, Observations, TrigParams, bin_sums, measure, measure_rows, \
    read_observations, row_tensor_product, row_tensor_shape, write_observations
from phasecode.sparse_signal import SparseSignal, random_sparse_signal


def _random_setup(seed: int, n: int = 400, k: int = 30):
    dist = harmonic_lambda(20)
    graph = sample_graph(n, dist, GraphParams.design(k, 0.3, dist), seed=seed)
    return random_sparse_signal(n, k, seed=seed), graph, TrigParams.draw(n, seed)


class TestRowTensor(unittest.TestCase):
    def test_shape(self):
        self.assertEqual(row_tensor_shape(2, 3), 6)
        self.assertEqual(row_tensor_shape(1, 1), 1)
        self.assertEqual(row_tensor_shape(4, 1429), 4 * 1429)
        with self.assertRaises(ValueError):
            row_tensor_shape(0, 3)

    def test_worked_example(self):
        t = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
        h = np.array([[0, 1, 0], [1, 1, 0], [0, 0, 1]])
        expected = np.array([[0, 0.2, 0], [0, 0.5, 0], [0.1, 0.2, 0], [0.4, 0.5, 0], [0, 0, 0.3], [0, 0, 0.6]])
        np.testing.assert_allclose(row_tensor_product(t, h), expected)

    def test_measure_matches_dense_product(self):
        x, graph, trig = _random_setup(seed=8, n=60, k=20)
        h = np.zeros((graph.m, graph.n))
        for index in range(1, graph.n + 1):
            h[graph.bins_of(index), index - 1] = 1
        a = row_tensor_product(trig.matrix(), h)
        np.testing.assert_allclose(measure(x, graph, trig).y.reshape(-1), np.abs(a @ x.to_dense()), atol=1e-12)


class TestTrigParams(unittest.TestCase):
    def test_frequencies(self):
        trig = TrigParams.draw(20_000, seed=3)
        self.assertAlmostEqual(trig.omega * trig.n, math.pi / 2, places=14)
        self.assertTrue(0 <= trig.omega_prime < 2 * math.pi)
        self.assertEqual(trig, TrigParams.draw(20_000, seed=3))

    def test_rows(self):
        trig = TrigParams(4, math.pi / 8, 0.5)
        rows = trig.rows(np.array([3]))
        np.testing.assert_allclose(rows[:, 0], [cmath.exp(3j * math.pi / 8), cmath.exp(-3j * math.pi / 8),
                                                2 * math.cos(3 * math.pi / 8), cmath.exp(1.5j)])


class TestMeasure(unittest.TestCase):
    def test_empty_bins_read_zero(self):
        graph = CodeGraph.from_edges(6, 4, np.array([0, 0, 1, 1]), np.array([0, 1, 1, 2]))
        x = SparseSignal.from_support(6, {1: 1 + 1j})
        y = measure(x, graph, TrigParams.draw(6, seed=1))
        np.testing.assert_array_equal(y.y[3], [0, 0, 0, 0])
        np.testing.assert_array_equal(y.y[2], [0, 0, 0, 0])

    def test_lone_ball(self):
        trig = TrigParams.draw(8, seed=2)
        graph = CodeGraph.from_edges(8, 3, np.array([4, 4]), np.array([0, 2]))
        value = 0.7 * cmath.exp(2.1j)
        y = measure(SparseSignal.from_support(8, {5: value}), graph, trig)
        obs = y[0]
        self.assertAlmostEqual(obs.y1, 0.7, places=14)
        self.assertAlmostEqual(obs.y2, 0.7, places=14)
        self.assertAlmostEqual(obs.y3, 2 * abs(math.cos(5 * trig.omega)) * 0.7, places=14)
        self.assertAlmostEqual(obs.y4, 0.7, places=14)
        self.assertEqual(y[2], obs)

    def test_two_balls(self):
        # n = 2, w = pi/4: x_1 = 1 next to a ball contributing e^{i w 2} x_2 = i
        trig = TrigParams(2, math.pi / 4, 0.0)
        graph = CodeGraph.from_edges(2, 1, np.array([0, 1]), np.array([0, 0]))
        x = SparseSignal.from_support(2, {1: 1.0, 2: 1.0})
        obs = measure(x, graph, trig)[0]
        self.assertAlmostEqual(obs.y1, abs(cmath.exp(1j * math.pi / 4) + 1j), places=14)
        self.assertAlmostEqual(obs.y2, abs(cmath.exp(-1j * math.pi / 4) - 1j), places=14)
        self.assertAlmostEqual(obs.y3, 2 * math.cos(math.pi / 4), places=14)
        self.assertAlmostEqual(obs.y4, 2.0, places=14)

    def test_scaling(self):
        rng = np.random.default_rng(12)
        for case in range(50):
            x, graph, trig = _random_setup(seed=case)
            c = complex(rng.normal(), rng.normal())
            np.testing.assert_allclose(measure(x.scaled(c), graph, trig).y, abs(c) * measure(x, graph, trig).y,
                                       rtol=0, atol=1e-12)

    def test_blind_to_global_phase(self):
        x, graph, trig = _random_setup(seed=77)
        for phi in (0.3, 2.0, 5.9):
            np.testing.assert_allclose(measure(x.scaled(cmath.exp(1j * phi)), graph, trig).y,
                                       measure(x, graph, trig).y, rtol=0, atol=1e-12)

    def test_cosine_row_is_sum_of_exponential_rows(self):
        x, graph, trig = _random_setup(seed=5)
        sums = bin_sums(x, graph, trig)
        np.testing.assert_allclose(sums[:, 2], sums[:, 0] + sums[:, 1], rtol=0, atol=1e-12)
        y = measure(x, graph, trig).y
        np.testing.assert_allclose(y[:, 2], np.abs(sums[:, 0] + sums[:, 1]), rtol=0, atol=1e-12)

    def test_length_mismatch(self):
        x, graph, trig = _random_setup(seed=1)
        with self.assertRaises(ValueError):
            measure(SparseSignal.empty(graph.n + 1), graph, trig)

    def test_observation_file(self):
        x, graph, trig = _random_setup(seed=21)
        observations = measure(x, graph, trig)
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'y.csv')
            write_observations(observations, path)
            loaded = read_observations(path)
        np.testing.assert_array_equal(loaded.y, observations.y)

    def test_rejects_negative_magnitudes(self):
        with self.assertRaises(ValueError):
            Observations(np.array([[1.0, -1.0, 0.0, 0.0]]))


class TestMeasureRows(unittest.TestCase):
    def setUp(self):
        self.x = SparseSignal.from_support(10, {1: 2.0, 4: 1 - 1j, 7: 3j})

    def test_unit_row(self):
        self.assertAlmostEqual(measure_rows(self.x, [GenericRow.of({4: 1})])[0], math.sqrt(2), places=14)

    def test_quadrature_row(self):
        y = measure_rows(self.x, [GenericRow.of({1: 1, 7: 1j})])
        self.assertAlmostEqual(y[0], abs(2.0 + 1j * 3j), places=14)

    def test_zero_row(self):
        self.assertEqual(measure_rows(self.x, [GenericRow.of({})])[0], 0.0)

    def test_out_of_range(self):
        with self.assertRaises(ValueError):
            measure_rows(self.x, [GenericRow.of({11: 1})])
