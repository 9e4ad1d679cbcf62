import math
import time
import unittest

import numpy as np

from phasecode.density_evolution import DEParams, de_step, error_floor_bound, fixed_points, iterations_to_reach, \
    run_de
from phasecode.graph_design import GraphParams, harmonic_lambda, select_d, stability_margin


def _design(d: int, eps: float, k: int = 100_000):
    dist = harmonic_lambda(d)
    return dist, GraphParams.design(k, eps, dist)


class TestDEStep(unittest.TestCase):
    def test_one_is_fixed(self):
        dist, params = _design(1000, 0.3)
        self.assertEqual(de_step(1.0, dist, params), 1.0)

    def test_zero_maps_to_floor(self):
        dist, params = _design(1000, 0.3)
        value = de_step(0.0, dist, params)
        self.assertGreater(value, 0)
        self.assertAlmostEqual(value, error_floor_bound(dist, params), delta=1e-12)

    def test_matches_series_evaluation(self):
        dist, params = _design(4, 0.1, k=9000)
        self.assertAlmostEqual(params.eta, 2.2, places=12)
        p = 0.5
        # rho(x) = e^{-eta(1-x)} as a power series in x
        rho = sum(math.exp(-params.eta) * params.eta ** j * (1 - p) ** j / math.factorial(j) for j in range(60))
        z = 1 + math.exp(-params.eta) - rho
        expected = 6 / 11 * z + 3 / 11 * z ** 2 + 2 / 11 * z ** 3
        self.assertAlmostEqual(de_step(p, dist, params), expected, delta=1e-13)

    def test_maps_unit_interval_monotonically(self):
        dist, params = _design(500, 0.2)
        points = np.sort(np.random.default_rng(1).uniform(0, 1, 1000))
        values = np.array([de_step(p, dist, params) for p in points])
        self.assertTrue(np.all((values >= 0) & (values <= 1)))
        self.assertTrue(np.all(np.diff(values) >= -1e-15))

    def test_rejects_probability_outside_unit_interval(self):
        dist, params = _design(10, 0.3)
        with self.assertRaises(ValueError):
            de_step(1.5, dist, params)


class TestRunDE(unittest.TestCase):
    def test_moderate_gap_converges_fast(self):
        dist, params = _design(1000, 0.3)
        started = time.monotonic()
        trace = run_de(DEParams(dist, params, p0=0.99))
        self.assertLess(time.monotonic() - started, 1.0)
        reached = iterations_to_reach(trace, 0.01)
        self.assertIsNotNone(reached)
        self.assertLessEqual(reached, 30)

    def test_small_gap_converges_slowly(self):
        dist, params = _design(1000, 0.1)
        trace = run_de(DEParams(dist, params, p0=0.99))
        reached = iterations_to_reach(trace, 0.01)
        self.assertIsNotNone(reached)
        self.assertGreater(reached, 30)
        self.assertLessEqual(reached, 120)

    def test_starting_at_one_stays_at_one(self):
        dist, params = _design(1000, 0.3)
        trace = run_de(DEParams(dist, params, p0=1.0))
        self.assertTrue(np.all(trace.trajectory == 1.0))
        self.assertEqual(trace.p_limit, 1.0)
        self.assertEqual(trace.converged_at, 0)

    def test_escape_is_strictly_decreasing_and_bounded(self):
        dist, params = _design(1000, 0.3)
        _, x2 = fixed_points(dist, params).ok_value
        trace = run_de(DEParams(dist, params, p0=0.99))
        moving = trace.trajectory[:-1]
        self.assertTrue(np.all(np.diff(moving) < 0))
        self.assertTrue(np.all(trace.trajectory >= x2 - 1e-10))
        self.assertAlmostEqual(trace.p_limit, x2, delta=1e-9)
        self.assertLessEqual(trace.trajectory[trace.converged_at], trace.p_limit + 1e-3)

    def test_invalid_parameters(self):
        dist, params = _design(10, 0.3)
        with self.assertRaises(ValueError):
            DEParams(dist, params, p0=0.0)
        with self.assertRaises(ValueError):
            DEParams(harmonic_lambda(11), params)


class TestFixedPoints(unittest.TestCase):
    def test_random_designs(self):
        rng = np.random.default_rng(31)
        found = 0
        while found < 20:
            d = int(rng.integers(100, 10_001))
            eps = float(rng.uniform(0.05, 0.4))
            dist, params = _design(d, eps, k=10_000)
            if stability_margin(dist, params) <= 1:
                self.assertTrue(fixed_points(dist, params).is_err())
                continue
            found += 1
            one, x2 = fixed_points(dist, params).ok_value
            self.assertEqual(one, 1.0)
            self.assertTrue(0 < x2 < 1)
            self.assertLess(abs(de_step(x2, dist, params) - x2), 1e-10)
            # f is nondecreasing, so x2 = f(x2) >= f(0)
            self.assertGreaterEqual(x2, error_floor_bound(dist, params) - 1e-12)

    def test_unstable_design(self):
        dist, params = _design(2, 0.9, k=1000)
        result = fixed_points(dist, params)
        self.assertTrue(result.is_err())
        self.assertIn('no escape fixed point', result.err_value)

    def test_selected_cap_meets_target(self):
        for eps, p_star in ((0.3, 1e-2), (0.3, 1e-3), (0.5, 1e-2)):
            dist, params = _design(select_d(eps, p_star), eps, k=10_000)
            _, x2 = fixed_points(dist, params).ok_value
            self.assertLessEqual(x2, p_star)


class TestErrorFloorBound(unittest.TestCase):
    def test_single_term(self):
        dist, params = _design(2, 0.3, k=1000)
        self.assertAlmostEqual(error_floor_bound(dist, params), math.exp(-params.eta), places=15)

    def test_vanishes_for_large_eta(self):
        dist = harmonic_lambda(50)
        params = GraphParams(k=1, d=50, eps=0.5, m=1, dbar=dist.mean_node_degree, eta=800.0)
        self.assertEqual(error_floor_bound(dist, params), 0.0)

    def test_majorized_by_geometric_series(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            d = int(rng.integers(2, 5000))
            eta = float(rng.uniform(0.1, 10))
            dist = harmonic_lambda(d)
            params = GraphParams(k=1, d=d, eps=0.3, m=1, dbar=dist.mean_node_degree, eta=eta)
            bound = math.exp(-eta) / (dist.hd1 * (1 - math.exp(-eta)))
            self.assertLessEqual(error_floor_bound(dist, params), bound * (1 + 1e-12))
