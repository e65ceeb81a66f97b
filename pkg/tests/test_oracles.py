# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

import unittest

import numpy as np

from convexflow.errors import NonFiniteError, NotSPDError
from convexflow.oracles import (bures_w2, finite_diff_gradient, gaussian_ot_map, gaussian_score, ot_map_1d,
                                spd_sqrt)
from convexflow.rng import make_generator


def random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + 0.5 * np.eye(d)


class GaussianMapTest(unittest.TestCase):

    def test_identity(self):
        gauss_map = gaussian_ot_map(np.zeros(2), np.eye(2), np.zeros(2), np.eye(2))
        np.testing.assert_allclose(gauss_map.matrix, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(gauss_map.offset, np.zeros(2), atol=1e-14)

    def test_1d_rescaling(self):
        gauss_map = gaussian_ot_map([2.0], [[4.0]], [0.0], [[1.0]])
        np.testing.assert_allclose(gauss_map(np.array([[2.0], [4.0], [0.0]])), [[0.0], [1.0], [-1.0]], atol=1e-14)

    def test_pushforward_moments(self):
        rng = make_generator(0, "test")
        mean0, cov0 = np.array([1.0, -1.0]), random_spd(rng, 2)
        mean1, cov1 = np.array([0.5, 2.0]), random_spd(rng, 2)
        gauss_map = gaussian_ot_map(mean0, cov0, mean1, cov1)
        np.testing.assert_allclose(gauss_map.matrix, gauss_map.matrix.T)
        self.assertTrue(np.all(np.linalg.eigvalsh(gauss_map.matrix) > 0))
        # exact pushforward covariance A Σ0 A = Σ1
        np.testing.assert_allclose(gauss_map.matrix @ cov0 @ gauss_map.matrix, cov1, atol=1e-10)
        X = rng.multivariate_normal(mean0, cov0, size=100_000)
        Y = gauss_map(X)
        scale = np.sqrt(np.max(np.diag(cov1)))
        np.testing.assert_allclose(np.mean(Y, axis=0), mean1, atol=0.02 * scale)
        np.testing.assert_allclose(np.cov(Y.T), cov1, atol=0.02 * np.max(np.abs(cov1)) + 0.02)

    def test_composition_is_identity_1d(self):
        forward = gaussian_ot_map([2.0], [[4.0]], [0.0], [[1.0]])
        backward = gaussian_ot_map([0.0], [[1.0]], [2.0], [[4.0]])
        both = backward.compose(forward)
        self.assertAlmostEqual(both.matrix[0, 0], 1.0, places=10)
        self.assertAlmostEqual(both.offset[0], 0.0, places=10)

    def test_rejects_non_spd(self):
        with self.assertRaises(NotSPDError):
            gaussian_ot_map([0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0], np.eye(2))
        with self.assertRaises(NotSPDError):
            gaussian_ot_map([0.0, 0.0], np.eye(2), [0.0, 0.0], [[1.0, 2.0], [0.0, 1.0]])

    def test_square_root_reconstruction(self):
        cov = random_spd(make_generator(1, "test"), 4)
        root = spd_sqrt(cov)
        self.assertLessEqual(np.linalg.norm(root @ root - cov), 1e-10 * np.linalg.norm(cov))


class BuresTest(unittest.TestCase):

    def test_identical(self):
        cov = random_spd(make_generator(2, "test"), 3)
        self.assertAlmostEqual(bures_w2(np.ones(3), cov, np.ones(3), cov), 0.0, places=10)

    def test_1d(self):
        self.assertAlmostEqual(bures_w2([0.0], [[1.0]], [3.0], [[4.0]]), 10.0, places=12)

    def test_symmetric_and_triangle(self):
        rng = make_generator(3, "test")
        params = [(rng.standard_normal(2), random_spd(rng, 2)) for _ in range(3)]
        d = [[np.sqrt(bures_w2(*p, *q)) for q in params] for p in params]
        self.assertAlmostEqual(d[0][1], d[1][0], places=10)
        self.assertLessEqual(d[0][2], d[0][1] + d[1][2] + 1e-12)

    def test_matches_transport_cost(self):
        rng = make_generator(4, "test")
        mean0, cov0 = np.zeros(2), random_spd(rng, 2)
        mean1, cov1 = np.array([1.0, 0.0]), random_spd(rng, 2)
        X = rng.multivariate_normal(mean0, cov0, size=100_000)
        cost = np.mean(np.sum((gaussian_ot_map(mean0, cov0, mean1, cov1)(X) - X) ** 2, axis=1))
        w2 = bures_w2(mean0, cov0, mean1, cov1)
        self.assertLess(abs(cost - w2), 0.02 * w2)


class ScoreOracleTest(unittest.TestCase):

    def test_standard_gaussian(self):
        x = np.array([0.3, -1.2])
        np.testing.assert_allclose(gaussian_score(np.zeros(2), np.eye(2), x), -x)

    def test_1d(self):
        self.assertAlmostEqual(float(gaussian_score([1.0], [[4.0]], [3.0])[0]), -0.5)

    def test_batch_matches_log_density_derivative(self):
        mean, cov = np.array([0.5, 1.0]), np.array([[2.0, 0.3], [0.3, 1.0]])
        precision = np.linalg.inv(cov)

        def log_density(x):
            return -0.5 * float((x - mean) @ precision @ (x - mean))
        X = make_generator(5, "test").standard_normal((4, 2))
        scores = gaussian_score(mean, cov, X)
        self.assertEqual(scores.shape, (4, 2))
        for x, s in zip(X, scores):
            np.testing.assert_allclose(finite_diff_gradient(log_density, x), s, atol=1e-6)


class OtMap1dTest(unittest.TestCase):

    def test_identity(self):
        src = np.sort(make_generator(6, "test").standard_normal(50))
        np.testing.assert_allclose(ot_map_1d(src, src, src[5:45]), src[5:45])

    def test_doubling(self):
        n = 1000
        src = np.sort(make_generator(7, "test").uniform(0.0, 1.0, n))
        query = np.linspace(0.1, 0.9, 101)
        mapped = ot_map_1d(src, 2.0 * src, query)
        self.assertLessEqual(np.max(np.abs(mapped - 2.0 * query)), 2.0 / n)
        self.assertTrue(np.all(np.diff(mapped) >= 0.0))

    def test_scalar_query(self):
        self.assertIsInstance(ot_map_1d([0.0, 1.0], [0.0, 3.0], 0.5), float)

    def test_unsorted(self):
        with self.assertRaises(ValueError):
            ot_map_1d([1.0, 0.0], [0.0, 1.0], 0.5)


class FiniteDifferenceTest(unittest.TestCase):

    def test_quadratic(self):
        theta = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(finite_diff_gradient(lambda t: 0.5 * float(t @ t), theta), theta, atol=1e-8)

    def test_linear(self):
        c = np.array([3.0, -1.0])
        np.testing.assert_allclose(finite_diff_gradient(lambda t: float(c @ t), np.zeros(2)), c, atol=1e-8)

    def test_non_finite(self):
        with self.assertRaises(NonFiniteError):
            finite_diff_gradient(lambda t: float("nan"), np.zeros(2))


if __name__ == '__main__':
    unittest.main()
