import unittest

import numpy as np

from halfma.base import (BarrierSpec, DomainError, QuadraticData, SingularityError,
                         SourceProfile, ValidationError)
from halfma.oracles import (barrier_value, barrier_w, poisson_rate, quadratic_eval,
                            remark_solution, u_pm)
from halfma.query import lab_query


class TestRemarkSolution(unittest.TestCase):
    def test_value(self):
        value, _, _ = remark_solution([2.0, 1.0])
        self.assertAlmostEqual(float(value), 5 / 3, places=14)

    def test_unit_determinant(self):
        rng = np.random.default_rng(1)
        for dim in (2, 3):
            points = rng.uniform(-5.0, 5.0, (10000, dim))
            points[:, -1] = rng.uniform(0.0, 10.0, 10000)
            _, _, hess = remark_solution(points, dim)
            self.assertLessEqual(np.max(np.abs(np.linalg.det(hess) - 1.0)), 1e-10)
            self.assertGreater(np.min(np.linalg.eigvalsh(hess)), 0.0)

    def test_bottom_values(self):
        x1 = np.linspace(-3, 3, 13)
        points = np.stack([x1, np.zeros_like(x1)], axis=-1)
        value, _, _ = remark_solution(points)
        np.testing.assert_allclose(value, 0.5 * x1 ** 2)

    def test_gradient(self):
        x = np.array([0.7, 1.3])
        _, grad, _ = remark_solution(x)
        eps = 1e-6
        for a in range(2):
            step = np.zeros(2)
            step[a] = eps
            fd = (remark_solution(x + step)[0] - remark_solution(x - step)[0]) / (2 * eps)
            self.assertAlmostEqual(float(fd), float(grad[a]), places=7)

    def test_lower_half(self):
        with self.assertRaises(DomainError):
            remark_solution([0.0, -0.1])


class TestComparisonProfiles(unittest.TestCase):
    def test_upper_profile(self):
        profile = SourceProfile(pieces=[(0.0, 1.0, 2.0)], kind='minus', Lam=2.0)
        self.assertAlmostEqual(float(u_pm([0.0, 2.0], profile)), 3.5)
        self.assertAlmostEqual(float(u_pm([0.0, 0.0], profile)), 0.0)
        self.assertAlmostEqual(float(u_pm([1.0, 3.0], profile) - u_pm([1.0, 2.0], profile)), 3.5)

    def test_lower_profile(self):
        profile = SourceProfile(pieces=[(0.0, 1.0, 0.0)], kind='plus')
        # ½|x′|² + ½(x_n − 1)² beyond the layer
        self.assertAlmostEqual(float(u_pm([2.0, 3.0], profile)), 2.0 + 2.0)
        value = u_pm(np.array([[0.0, 0.5], [0.0, 1.0]]), profile)
        np.testing.assert_allclose(value, [0.0, 0.0], atol=1e-15)

    def test_callable_profile(self):
        profile = SourceProfile(func=lambda s: 0.5 if s <= 1.0 else 1.0, kind='plus')
        pieces = SourceProfile(pieces=[(0.0, 1.0, 0.5)], kind='plus')
        x = np.array([[0.3, 0.4], [1.0, 1.7]])
        np.testing.assert_allclose(u_pm(x, profile), u_pm(x, pieces), atol=1e-9)

    def test_sandwich_chain(self):
        rng = np.random.default_rng(6)
        points = rng.uniform(-5.0, 5.0, (10000, 2))
        points[:, -1] = rng.uniform(0.0, 4.0, 10000)
        half = 0.5 * np.sum(points ** 2, axis=-1)
        xn = points[:, -1]
        for _ in range(10):
            edges = np.concatenate([[0.0], np.sort(rng.uniform(0.0, 1.0, 2)), [1.0]])
            Lam = float(rng.uniform(1.0, 4.0))
            lower = SourceProfile(pieces=[(a, b, rng.uniform(0.0, 1.0)) for a, b in zip(edges, edges[1:])])
            upper = SourceProfile(pieces=[(a, b, rng.uniform(1.0, Lam)) for a, b in zip(edges, edges[1:])],
                                  kind='minus', Lam=Lam)
            u_plus, u_minus = u_pm(points, lower), u_pm(points, upper)
            self.assertTrue(np.all(half - xn <= u_plus + 1e-12))
            self.assertTrue(np.all(u_plus <= half + 1e-12))
            self.assertTrue(np.all(half <= u_minus + 1e-12))
            self.assertTrue(np.all(u_minus <= half + (Lam - 1) * xn + 1e-12))

    def test_flat_profile_is_the_quadratic(self):
        rng = np.random.default_rng(8)
        flat = SourceProfile(pieces=[(0.0, 1.0, 1.0)])
        for dim in (2, 3):
            points = rng.uniform(-3.0, 3.0, (500, dim))
            points[:, -1] = np.abs(points[:, -1])
            np.testing.assert_allclose(u_pm(points, flat, dim),
                                       quadratic_eval(QuadraticData.identity(dim), points), atol=1e-12)

    def test_invalid_profiles(self):
        with self.assertRaises(ValidationError):
            SourceProfile(pieces=[(0.0, 1.0, 3.0)], kind='minus', Lam=2.0)
        with self.assertRaises(ValidationError):
            SourceProfile(pieces=[(0.0, 1.0, 1.5)], kind='plus')
        with self.assertRaises(ValidationError):
            SourceProfile(pieces=[(0.5, 1.5, 0.5)], kind='plus')
        with self.assertRaises(ValidationError):
            SourceProfile()


class TestQuadraticAndKernel(unittest.TestCase):
    def test_quadratic(self):
        q = QuadraticData([[1.0, 1.0], [1.0, 2.0]], [0.0, 0.5])
        self.assertAlmostEqual(float(quadratic_eval(q, [1.0, 1.0])), 3.0)
        np.testing.assert_allclose(q.gradient([1.0, 1.0]), [2.0, 3.5])
        with self.assertRaises(ValidationError):
            quadratic_eval(q, [1.0, 1.0, 1.0])

    def test_quadratic_validation(self):
        with self.assertRaises(ValidationError):
            QuadraticData([[1.0, 2.0], [0.0, 1.0]])
        with self.assertRaises(ValidationError):
            QuadraticData(np.diag([2.0, 2.0]), normalized=True)
        q = QuadraticData(np.diag([2.0, 0.5]), normalized=True)
        self.assertTrue(q.compatible_with(QuadraticData([[2.0]])))
        self.assertEqual(q.with_normal_slope(1.5).b.tolist(), [0.0, 1.5])

    def test_kernel(self):
        self.assertAlmostEqual(float(poisson_rate([3.0, 4.0])), 0.16)
        self.assertAlmostEqual(float(poisson_rate([0.0, 0.0, 2.0], dim=3)), 0.25)
        self.assertEqual(float(poisson_rate([5.0, 0.0])), 0.0)
        with self.assertRaises(SingularityError):
            poisson_rate([0.0, 0.0])

    def test_kernel_is_discretely_harmonic(self):
        h = 1e-2
        for x in ([1.0, 1.0], [-2.0, 0.5], [3.0, 4.0]):
            x = np.array(x)
            total = -4 * poisson_rate(x)
            for step in ([h, 0.0], [0.0, h]):
                total += poisson_rate(x + step) + poisson_rate(x - np.array(step))
            self.assertLess(abs(float(total)) / h ** 2, 1e-2)


class TestBarrier(unittest.TestCase):
    def test_value(self):
        spec = BarrierSpec(1.0, delta=0.5)
        self.assertAlmostEqual(float(barrier_value([0.0, 2.0], spec)), 0.5 - 0.5 ** 1.5, places=12)
        self.assertAlmostEqual(float(barrier_value([0.0, 2.0], spec)), 0.146446, places=6)
        self.assertEqual(float(barrier_value([3.0, 0.0], spec)), 0.0)

    def test_default_delta(self):
        self.assertAlmostEqual(BarrierSpec(0.5).delta, 0.25)
        self.assertAlmostEqual(BarrierSpec(1.0, dim=3).delta, 0.25)
        with self.assertRaises(ValidationError):
            BarrierSpec(0.5, delta=0.6)
        with self.assertRaises(ValidationError):
            BarrierSpec(0.5, delta=0.3, dim=3)

    def test_derivatives(self):
        rng = np.random.default_rng(3)
        for dim in (2, 3):
            spec = BarrierSpec(0.5, delta=0.2, dim=dim)
            points = rng.uniform(-4.0, 4.0, (200, dim))
            points[:, -1] = np.abs(points[:, -1]) + 0.5
            _, grad, hess, laplacian = barrier_w(points, spec)
            np.testing.assert_allclose(np.trace(hess, axis1=-2, axis2=-1), laplacian, atol=1e-10)
            self.assertTrue(np.all(laplacian <= 0))
            eps = 1e-6
            for a in range(dim):
                step = np.zeros(dim)
                step[a] = eps
                fd = (barrier_value(points + step, spec) - barrier_value(points - step, spec)) / (2 * eps)
                np.testing.assert_allclose(fd, grad[:, a], atol=1e-7)

    def test_errors(self):
        spec = BarrierSpec(1.0)
        with self.assertRaises(SingularityError):
            barrier_w([0.0, 0.0], spec)
        with self.assertRaises(DomainError):
            barrier_w([1.0, 0.0], spec)
        with self.assertRaises(DomainError):
            barrier_value([1.0, -1.0], spec)


class TestQuery(unittest.TestCase):
    def test_queries(self):
        self.assertEqual(lab_query('remark:2,1'), f'{5 / 3:.12g}')
        self.assertEqual(lab_query('kernel:3,4'), '0.16')
        self.assertEqual(lab_query('quadratic:3,4'), '12.5')
        self.assertEqual(float(lab_query('barrier:0,2')), float(f'{0.5 - 0.5 ** 1.5:.12g}'))

    def test_invalid_queries(self):
        self.assertIsNone(lab_query(''))
        self.assertIsNone(lab_query('tree:default'))
        self.assertIsNone(lab_query('remark:a,b'))
        self.assertIsNone(lab_query('remark:1'))
        self.assertIsNone(lab_query('kernel:0,0'))
        self.assertIsNone(lab_query('remark:0,-1'))


if __name__ == '__main__':
    unittest.main()
