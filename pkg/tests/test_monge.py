import os
import tempfile
import unittest

import numpy as np

from halfma.base import (ArgumentError, EllipticityError, NonConvergenceError, QuadraticData,
                         SolverConfig, SourceTerm, StencilError)
from halfma.grid import ScalarField, build_half_grid
from halfma.monge import (bottom_gradient_check, bump_source, comparison_check,
                          constant_source, convexified_cofactor, convexify, discrete_hessian,
                          harmonic_extension, ma_residual, sandwich_bounds, sandwich_check,
                          solve_ma_dirichlet)
from halfma.oracles import remark_solution


def half_square(x):
    return 0.5 * np.sum(x ** 2, axis=-1)


def remark_data(x):
    return remark_solution(x)[0]


class TestDiscreteOperators(unittest.TestCase):
    def setUp(self):
        self.grid = build_half_grid(2, 1.0, 1.0, 0.25)

    def test_hessian_of_quadratic(self):
        q = QuadraticData([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0], 3.0)
        field = ScalarField.from_function(self.grid, q.evaluate)
        np.testing.assert_allclose(discrete_hessian(field, (4, 2)), q.A, atol=1e-12)
        np.testing.assert_allclose(discrete_hessian(field, (1, 3)), q.A, atol=1e-12)

    def test_hessian_needs_interior(self):
        field = ScalarField.from_function(self.grid, half_square)
        with self.assertRaises(StencilError):
            discrete_hessian(field, (4, 0))
        with self.assertRaises(StencilError):
            discrete_hessian(field, (0, 2))

    def test_residual(self):
        field = ScalarField.from_function(self.grid, half_square)
        self.assertLess(ma_residual(field, constant_source(1.0)).sup_norm(), 1e-12)
        self.assertAlmostEqual(ma_residual(field, constant_source(2.0)).sup_norm(), 1.0)

    def test_harmonic_extension(self):
        data = ScalarField.from_function(self.grid, lambda x: x[:, 0] + 2 * x[:, 1] - 1).values
        guess = np.array(data)
        guess[self.grid.interior_mask()] = 0.0
        extended = harmonic_extension(self.grid, guess, self.grid.interior_mask(), 1e-12)
        np.testing.assert_allclose(extended, data, atol=1e-12)

    def test_convexify(self):
        H = np.array([[1.0, 2.0], [2.0, 1.0]])
        projected = convexify(H, 0.5)
        np.testing.assert_allclose(projected, [[1.75, 1.25], [1.25, 1.75]], atol=1e-12)
        self.assertGreaterEqual(np.linalg.eigvalsh(projected)[0], 0.5 - 1e-12)
        stack = np.stack([np.eye(2), np.diag([3.0, -1.0])])
        np.testing.assert_allclose(convexify(stack, 1e-3), [np.eye(2), np.diag([3.0, 1e-3])], atol=1e-12)
        np.testing.assert_allclose(convexified_cofactor(np.diag([2.0, 3.0]), 1e-8),
                                   np.diag([3.0, 2.0]), atol=1e-12)


class TestSources(unittest.TestCase):
    def test_bump(self):
        f = bump_source(5.0, 0.5)
        self.assertEqual((f.lam, f.Lam, f.R0), (1.0, 6.0, 0.5))
        np.testing.assert_allclose(f.evaluate(np.array([[0.0, 0.25], [0.0, 0.0], [0.0, 0.75]])),
                                   [6.0, 1.0, 1.0])

    def test_average_sampling(self):
        f = bump_source(5.0, 0.5, sampling='average')
        # half of the sub-cell samples lie above the bottom
        self.assertAlmostEqual(float(f.sample(np.array([[0.0, 0.0]]), 0.25)[0]), 3.5)
        self.assertAlmostEqual(float(f.sample(np.array([[0.0, 0.25]]), 0.25)[0]), 6.0)


class TestSolver(unittest.TestCase):
    def test_quadratic_data_is_reproduced(self):
        grid = build_half_grid(2, 2.0, 2.0, 0.25)
        for A in ([[1.0, 1.0], [1.0, 2.0]], [[2.0, 0.0], [0.0, 0.5]]):
            p = QuadraticData(A, normalized=True)
            u = solve_ma_dirichlet(grid, constant_source(1.0), p.evaluate)
            self.assertLessEqual((u - ScalarField.from_function(grid, p.evaluate)).sup_norm(), 1e-9)
            self.assertLessEqual(u.meta['residual'], u.meta['tolerance'])
            self.assertEqual(len(u.meta['history']), u.meta['iterations'] + 1)

    def test_remark_convergence(self):
        errors = []
        for h in (1 / 16, 1 / 32, 1 / 64):
            grid = build_half_grid(2, 2.0, 2.0, h)
            u = solve_ma_dirichlet(grid, constant_source(1.0), remark_data)
            errors.append((u - ScalarField.from_function(grid, remark_data)).sup_norm())
        for coarse, fine in zip(errors, errors[1:]):
            self.assertGreaterEqual(coarse / fine, 3.2)
            self.assertLessEqual(coarse / fine, 4.8)

    def test_half_ball_domain(self):
        grid = build_half_grid(2, 2.0, 2.0, 0.25)
        p = QuadraticData(np.diag([2.0, 0.5]))
        free = grid.radius() < 1.5
        u = solve_ma_dirichlet(grid, constant_source(1.0), p.evaluate, free=free)
        exact = ScalarField.from_function(grid, p.evaluate)
        self.assertLessEqual((u - exact).sup_norm(), 1e-9)
        with self.assertRaises(ArgumentError):
            solve_ma_dirichlet(grid, constant_source(1.0), p.evaluate, free=grid.radius() > 10)

    def test_boundary_field(self):
        grid = build_half_grid(2, 1.0, 1.0, 0.125)
        data = ScalarField.from_function(grid, half_square)
        u = solve_ma_dirichlet(grid, constant_source(1.0), data)
        self.assertLessEqual((u - data).sup_norm(), 1e-9)
        other = ScalarField.from_function(build_half_grid(2, 1.0, 1.0, 0.25), half_square)
        with self.assertRaises(ArgumentError):
            solve_ma_dirichlet(grid, constant_source(1.0), other)

    def test_bump_solution(self):
        grid = build_half_grid(2, 4.0, 4.0, 0.125)
        f = bump_source(5.0, 0.5)
        u = solve_ma_dirichlet(grid, f, half_square)
        self.assertLess(ma_residual(u, f).sup_norm(grid.interior_mask()), 1e-8)
        self.assertTrue(bottom_gradient_check(u, f.Lam).passed)
        self.assertTrue(sandwich_check(u, QuadraticData.identity(2), f.Lam).passed)
        # the bump pulls the solution below the quadratic
        self.assertLess(u.at(grid.nearest_node((0.0, 0.5))), 0.125)

    def test_non_convergence(self):
        grid = build_half_grid(2, 2.0, 2.0, 0.125)
        with self.assertRaises(NonConvergenceError) as cm:
            solve_ma_dirichlet(grid, constant_source(1.0), remark_data,
                               SolverConfig(tolerance=1e-10, max_iterations=1))
        self.assertEqual(len(cm.exception.history), 2)
        self.assertIsInstance(cm.exception.iterate, ScalarField)

    def test_ellipticity(self):
        grid = build_half_grid(2, 1.0, 1.0, 0.25)
        negative = SourceTerm(lambda x: np.where(x[..., 0] > 0, -1.0, 1.0), R0=1.0, lam=0.0, Lam=1.0)
        with self.assertRaises(EllipticityError):
            solve_ma_dirichlet(grid, negative, half_square)
        zero = SourceTerm(lambda x: np.zeros(len(x)), R0=1.0, lam=0.0, Lam=1.0)
        with self.assertRaises(EllipticityError):
            solve_ma_dirichlet(grid, zero, half_square)

    def test_iteration_log(self):
        grid = build_half_grid(2, 1.0, 1.0, 0.25)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'newton.csv')
            u = solve_ma_dirichlet(grid, constant_source(1.0), remark_data, SolverConfig(log_path=path))
            with open(path) as f:
                lines = f.read().splitlines()
        self.assertEqual(lines[0], 'iteration,residual,step')
        self.assertEqual(len(lines), u.meta['iterations'] + 2)


class TestSolverProperties(unittest.TestCase):
    def test_monotone_in_boundary_data(self):
        grid = build_half_grid(2, 2.0, 2.0, 0.125)
        f = constant_source(1.0)
        lower = solve_ma_dirichlet(grid, f, half_square)
        upper = solve_ma_dirichlet(grid, f, lambda x: half_square(x) + 0.1 + 0.05 * x[:, 0] ** 2)
        self.assertLessEqual(np.max(lower.values - upper.values), 1e-8)
        self.assertTrue(comparison_check(lower, upper, tolerance=1e-8).passed)
        shifted = solve_ma_dirichlet(grid, bump_source(5.0, 0.5), lambda x: half_square(x) + 0.1)
        bump = solve_ma_dirichlet(grid, bump_source(5.0, 0.5), half_square)
        self.assertAlmostEqual(float(np.max(bump.values - shifted.values)), -0.1, delta=1e-8)

    def test_superlinear_tail(self):
        grid = build_half_grid(2, 2.0, 2.0, 1 / 16)
        u = solve_ma_dirichlet(grid, constant_source(1.0), remark_data)
        tail = u.meta['history'][-3:]
        self.assertEqual(len(tail), 3)
        for before, after in zip(tail, tail[1:]):
            self.assertLessEqual(after, max(1e3 * before ** 1.5, 1e-12))

    def test_translation_along_the_bottom(self):
        grid = build_half_grid(2, 3.0, 2.0, 0.125)
        shift = 4
        x1 = grid.mesh()[0]
        window = grid.interior_mask() & (x1 >= -2.0 - 1e-9) & (x1 <= 1.5 + 1e-9)
        moved = np.zeros_like(window)
        moved[shift:] = window[:-shift]
        u = solve_ma_dirichlet(grid, constant_source(1.0), remark_data, free=window)
        offset = np.array([shift * grid.h, 0.0])
        v = solve_ma_dirichlet(grid, constant_source(1.0), lambda x: remark_data(x - offset), free=moved)
        np.testing.assert_allclose(v.values[shift:][window[:-shift]], u.values[window], atol=1e-8)

    def test_solution_above_the_lower_envelope(self):
        grid = build_half_grid(2, 2.0, 2.0, 0.125)
        u = solve_ma_dirichlet(grid, bump_source(-0.5, 0.5), half_square)
        envelope = ScalarField.from_function(grid, lambda x: half_square(x) - x[:, 1])
        report = comparison_check(envelope, u)
        self.assertTrue(report.passed, report)
        self.assertAlmostEqual(report['worst_violation'], 0.0, delta=1e-12)
        # f <= 1 keeps the solution above the quadratic
        self.assertTrue(comparison_check(ScalarField.from_function(grid, half_square), u,
                                         tolerance=1e-6).passed)


class TestChecks(unittest.TestCase):
    def setUp(self):
        self.grid = build_half_grid(2, 1.0, 1.0, 0.25)
        self.u = ScalarField.from_function(self.grid, half_square)

    def test_comparison(self):
        self.assertTrue(comparison_check(self.u, self.u + 0.1).passed)
        report = comparison_check(self.u + 0.1, self.u)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report['worst_violation'], 0.1)
        self.assertTrue(comparison_check(self.u + 0.1, self.u, tolerance=0.2).passed)

    def test_sandwich_bounds(self):
        q = QuadraticData([[1.0, 1.0], [1.0, 2.0]])
        points = np.array([[1.0, 0.0], [-2.0, 0.0], [0.5, 1.0]])
        lower, upper = sandwich_bounds(points, q, 3.0)
        np.testing.assert_allclose(lower[:2], q.evaluate(points[:2]))
        np.testing.assert_allclose(upper[:2], q.evaluate(points[:2]))
        self.assertAlmostEqual(float(lower[2]), float(q.evaluate(points[2])) - 2.0)
        self.assertAlmostEqual(float(upper[2]), float(q.evaluate(points[2])) + 1.0)

    def test_sandwich_check(self):
        self.assertTrue(sandwich_check(self.u, QuadraticData.identity(2), 2.0).passed)
        lifted = self.u + ScalarField.from_function(self.grid, lambda x: 2 * x[:, 1])
        self.assertFalse(sandwich_check(lifted, QuadraticData.identity(2), 2.0).passed)

    def test_bottom_gradient(self):
        self.assertTrue(bottom_gradient_check(self.u, 1.0).passed)
        steep = self.u + ScalarField.from_function(self.grid, lambda x: 3 * x[:, 1])
        report = bottom_gradient_check(steep, 1.0)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report['max'], 3.125)

    def test_bottom_gradient_window(self):
        grid = build_half_grid(2, 1.0, 1.0, 0.125)
        h = grid.h

        def slope_field(slope):
            return ScalarField.from_function(grid, lambda x: slope * x[:, 1])

        self.assertTrue(bottom_gradient_check(slope_field(1 + 0.5 * h), 6.0).passed)
        report = bottom_gradient_check(slope_field(1 + 1.5 * h), 6.0)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report['slack'], h)
        self.assertAlmostEqual(report['max'], 1.1875)
        self.assertTrue(bottom_gradient_check(slope_field(-5 - 0.5 * h), 6.0).passed)
        self.assertFalse(bottom_gradient_check(slope_field(-5 - 1.5 * h), 6.0).passed)
        self.assertTrue(bottom_gradient_check(slope_field(1 + 1.5 * h), 6.0, slack=2 * h).passed)


if __name__ == '__main__':
    unittest.main()
