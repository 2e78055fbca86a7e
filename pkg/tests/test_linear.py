import unittest

import numpy as np

from halfma.asymptotics import decay_exponent
from halfma.base import ArgumentError, BarrierSpec, CoefficientError
from halfma.grid import build_half_grid
from halfma.linear import (CoefficientField, ExteriorRegion, RegionClass,
                           barrier_laplacian_study, barrier_radius_sweep,
                           barrier_supersolution_check, growth_bound_sweep,
                           identity_coefficients, limit_at_infinity_experiment,
                           poisson_kernel_study, random_coefficients,
                           solve_linear_dirichlet, strict_interior_bound_experiment)
from halfma.oracles import poisson_rate
from halfma.utils import loglog_slope


def diagonal_coefficients(dim=2, R0=1.0):
    """Diagonal field approaching I like |x|^(-1/2)."""
    def func(x):
        r = np.maximum(np.linalg.norm(x, axis=-1), R0)
        a = np.zeros(x.shape[:-1] + (dim, dim))
        wobble = 0.4 * np.sin(x[..., 0]) * r ** -0.5
        a[..., 0, 0] = 1.0 + wobble
        for k in range(1, dim):
            a[..., k, k] = 1.0 - wobble
        return a
    return CoefficientField(func, dim, 0.5, 2.0, s=0.5, R0=R0)


class TestCoefficients(unittest.TestCase):
    def test_random_fields_are_admissible(self):
        rng = np.random.default_rng(0)
        points = rng.uniform(-50.0, 50.0, (2000, 2))
        for _ in range(5):
            coeffs = random_coefficients(rng, 2, 0.5, 0.5, 2.0)
            a = coeffs.check(points)
            far = np.linalg.norm(points, axis=-1) > 40
            deviation = np.linalg.norm(a[far] - np.eye(2), 2, axis=(-2, -1))
            self.assertTrue(np.all(deviation <= 40 ** -0.5))

    def test_check_names_the_node(self):
        coeffs = CoefficientField(lambda x: np.where(x[..., 0, None, None] > 0, 3.0, 1.0) * np.eye(2),
                                  2, 0.5, 2.0)
        with self.assertRaises(CoefficientError) as cm:
            coeffs.check(np.array([[-1.0, 1.0], [2.0, 1.0]]))
        self.assertEqual(cm.exception.node, (2.0, 1.0))
        with self.assertRaises(ArgumentError):
            CoefficientField(lambda x: np.eye(2), 2, 0.0, 1.0)


class TestExteriorRegion(unittest.TestCase):
    def test_classes(self):
        grid = build_half_grid(2, 4.0, 4.0, 0.5)
        region = ExteriorRegion(grid, 1.0, outer_radius=3.0)
        radius = grid.radius()
        self.assertTrue(np.all(region.mask(RegionClass.MASKED) == ((radius < 1.0) | (radius > 3.0))))
        masked = region.mask(RegionClass.MASKED)
        self.assertTrue(np.all(region.mask(RegionClass.BOTTOM) == (grid.bottom_mask() & ~masked)))
        self.assertGreater(int(region.mask(RegionClass.INNER).sum()), 0)
        self.assertGreater(int(region.mask(RegionClass.OUTER).sum()), 0)
        with self.assertRaises(ArgumentError):
            ExteriorRegion(grid, 2.0, outer_radius=1.0)


class TestLinearSolves(unittest.TestCase):
    def test_kernel_is_reproduced(self):
        grid = build_half_grid(2, 8.0, 8.0, 0.125)
        region = ExteriorRegion(grid, 1.0, outer_radius=8.0)
        u = solve_linear_dirichlet(region, identity_coefficients(), lambda x: poisson_rate(x))
        active = region.active.reshape(-1)
        exact = poisson_rate(grid.points()[active])
        self.assertLess(float(np.max(np.abs(u.values.reshape(-1)[active] - exact))), 5e-3)

    def test_poisson_kernel_order(self):
        report = poisson_kernel_study((0.25, 0.125, 0.0625))
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report['order'], 2.0, delta=0.3)

    def test_constant_data(self):
        grid = build_half_grid(2, 4.0, 4.0, 0.25)
        region = ExteriorRegion(grid, 1.0, outer_radius=4.0)
        coeffs = random_coefficients(np.random.default_rng(3), 2, 0.5, 0.5, 2.0)
        active = region.active
        for value in (0.0, 1.0):
            u = solve_linear_dirichlet(region, coeffs, value)
            np.testing.assert_allclose(u.values[active], value, atol=1e-8)
        self.assertTrue(np.all(u.values[~active] == 0.0))

    def test_missing_boundary_data(self):
        grid = build_half_grid(2, 2.0, 2.0, 0.25)
        region = ExteriorRegion(grid, 1.0)
        with self.assertRaises(ArgumentError):
            solve_linear_dirichlet(region, identity_coefficients(), {'bottom': 0.0, 'outer': 1.0})

    def test_maximum_principle(self):
        grid = build_half_grid(2, 4.0, 4.0, 0.25)
        region = ExteriorRegion(grid, 1.0)
        u = solve_linear_dirichlet(region, diagonal_coefficients(),
                                   {'bottom': lambda x: np.cos(x[:, 0]), 'outer': 0.5, 'inner': -1.0})
        values = u.values[region.active]
        self.assertGreaterEqual(float(values.min()), -1.0 - 1e-10)
        self.assertLessEqual(float(values.max()), 1.0 + 1e-10)


class TestBarrier(unittest.TestCase):
    def test_identity_supersolution(self):
        spec = BarrierSpec(0.5, delta=0.2)
        rng = np.random.default_rng(5)
        sample = rng.uniform(-20.0, 20.0, (500, 2))
        sample[:, 1] = np.abs(sample[:, 1]) + 1.0
        self.assertTrue(barrier_supersolution_check(identity_coefficients(), spec, sample).passed)
        with self.assertRaises(ArgumentError):
            barrier_supersolution_check(identity_coefficients(), spec, np.array([[0.1, 0.1]]))

    def test_radius_sweep(self):
        rng = np.random.default_rng(11)
        spec = BarrierSpec(0.5, delta=0.2)
        for _ in range(3):
            coeffs = random_coefficients(rng, 2, 0.5, 0.5, 2.0)
            report = barrier_radius_sweep(coeffs, spec, 1.0, 1e8, 80, 32)
            self.assertTrue(report.passed)
            R1 = report['R1']
            radii = np.geomspace(2 * R1, 1e8, 20)
            theta = np.linspace(0.05, np.pi - 0.05, 20)
            sample = np.array([[r * np.cos(t), r * np.sin(t)] for r in radii for t in theta])
            check = barrier_supersolution_check(coeffs, BarrierSpec(0.5, 0.2, R1=R1), sample)
            self.assertTrue(check.passed)
            self.assertEqual(check['R1'], R1)
            self.assertLessEqual(check['max_value'], 1e-12)

    def test_identity_sweep_starts_at_the_first_radius(self):
        report = barrier_radius_sweep(identity_coefficients(), BarrierSpec(0.5, delta=0.2), 1.0, 100.0, 10, 16)
        self.assertEqual(report['R1'], 1.0)

    def test_laplacian_study(self):
        rng = np.random.default_rng(2)
        points = rng.uniform(-6.0, 6.0, (20, 2))
        points[:, 1] = np.abs(points[:, 1]) + 1.0
        report = barrier_laplacian_study(BarrierSpec(0.5, delta=0.2), points)
        self.assertTrue(report.passed)
        with self.assertRaises(ArgumentError):
            barrier_laplacian_study(BarrierSpec(0.5, delta=0.2), np.array([[1.0, 0.05]]))


class TestExperiments(unittest.TestCase):
    def test_strict_interior_bound(self):
        self.assertGreater(strict_interior_bound_experiment(identity_coefficients())['eps0'], 0)
        rng = np.random.default_rng(7)
        for _ in range(3):
            coeffs = random_coefficients(rng, 2, 0.5, 0.5, 2.0)
            report = strict_interior_bound_experiment(coeffs)
            self.assertTrue(report.passed)
            self.assertLess(report['eps0'], 1.0)

    def test_strict_interior_bound_needs_a_lower_bottom(self):
        report = strict_interior_bound_experiment(identity_coefficients(), bottom_value=1.0)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report['eps0'], 0.0, delta=1e-10)
        self.assertAlmostEqual(report['u_min'], 1.0, delta=1e-10)

    def test_growth_bound(self):
        h = 0.25
        report = growth_bound_sweep(identity_coefficients(), (0.1, 0.01, 0.001, 0.0), L=4.0, h=h)
        self.assertTrue(report.passed)
        sup_near = report['sup_near']
        self.assertEqual(len(sup_near), 4)
        for larger, smaller in zip(sup_near, sup_near[1:]):
            self.assertLessEqual(smaller, larger + 1e-10)
        # the inner arc carries -1, so the bound is attained in the limit
        self.assertAlmostEqual(sup_near[-1], 1.0, delta=1e-10)
        self.assertLess(abs(sup_near[-2] - 1.0), 10 * h ** 2)

    def test_limit_at_infinity(self):
        report = limit_at_infinity_experiment(identity_coefficients(), 0.5, (4.0, 8.0, 16.0), h=0.5)
        self.assertTrue(report.passed)
        deviations = report['deviations']
        self.assertLess(deviations[-1], deviations[0])
        self.assertLess(report['truncation_change'], deviations[0])
        with self.assertRaises(ArgumentError):
            limit_at_infinity_experiment(identity_coefficients(), 0.0, (8.0, 4.0))
        with self.assertRaises(ArgumentError):
            limit_at_infinity_experiment(identity_coefficients(), 0.0, (0.5, 4.0))

    def test_limit_matches_the_annulus_decay(self):
        beta = 0.5
        schedule = (4.0, 8.0, 16.0)
        coeffs = identity_coefficients()
        report = limit_at_infinity_experiment(coeffs, beta, schedule, h=0.5, check_truncation=False)
        self.assertTrue(report.passed)
        self.assertEqual(report['outer_radius'], 32.0)
        grid = build_half_grid(2, 32.0, 32.0, 0.5)
        data = {'bottom': lambda x: beta + 1.0 / (1.0 + np.abs(x[:, 0])), 'inner': beta + 1.0,
                'outer': beta}
        u = solve_linear_dirichlet(ExteriorRegion(grid, 1.0, outer_radius=32.0), coeffs, data)
        fit = decay_exponent(u - beta, 'annulus', (4.0, 16.0))
        self.assertEqual(fit.status, 'fit')
        slope, _, _ = loglog_slope(schedule, report['deviations'])
        self.assertLess(fit.exponent, 0.0)
        self.assertLess(slope, 0.0)
        self.assertAlmostEqual(fit.exponent, slope, delta=0.3)



if __name__ == '__main__':
    unittest.main()
