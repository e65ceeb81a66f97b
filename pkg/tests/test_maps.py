# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

import unittest

import numpy as np

from convexflow import icnn
from convexflow.errors import ShapeError
from convexflow.icnn import IcnnSpec
from convexflow.maps import IcnnModel, LinearMapModel
from convexflow.rng import make_generator


class IcnnModelTest(unittest.TestCase):

    def test_delegates_to_network(self):
        spec = IcnnSpec(2, (5, 4))
        model = IcnnModel(spec)
        rng = make_generator(0, "test")
        theta = model.init_params(rng)
        X = rng.standard_normal((6, 2))
        C = rng.standard_normal((6, 2))
        self.assertEqual(model.n_params, icnn.param_count(spec))
        self.assertEqual(model.input_dim, 2)
        np.testing.assert_array_equal(model.maps(theta, X), icnn.transport_batch(spec, theta, X).maps)
        np.testing.assert_array_equal(model.loss_param_gradient(theta, X, C),
                                      icnn.loss_param_gradient(spec, theta, X, C))


class LinearMapModelTest(unittest.TestCase):

    def test_affine_1d(self):
        model = LinearMapModel.affine_1d()
        X = np.array([[0.0], [1.0], [-2.0]])
        result = model.transport(np.array([3.0, -1.0]), X, want_jacobians=True)
        np.testing.assert_allclose(result.maps, np.array([[-1.0], [2.0], [-7.0]]))
        self.assertEqual(result.param_jacobians.shape, (3, 1, 2))
        np.testing.assert_allclose(result.param_jacobians[2, 0], [-2.0, 1.0])

    def test_flat_input_for_1d(self):
        model = LinearMapModel.affine_1d()
        np.testing.assert_allclose(model.maps([2.0, 0.0], [1.0, 2.0, 3.0]), [[2.0], [4.0], [6.0]])

    def test_loss_gradient_is_mean_of_jacobian_products(self):
        rng = make_generator(1, "test")
        model = LinearMapModel.from_matrix(rng.standard_normal((4, 3, 3)))
        theta = rng.standard_normal(4)
        X = rng.standard_normal((5, 3))
        C = rng.standard_normal((5, 3))
        J = model.transport(theta, X, want_jacobians=True).param_jacobians
        np.testing.assert_allclose(model.loss_param_gradient(theta, X, C), np.einsum("ndk,nd->k", J, C) / 5)

    def test_from_matrix_is_sum_of_linear_maps(self):
        basis = np.array([np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])])
        model = LinearMapModel.from_matrix(basis)
        np.testing.assert_allclose(model.maps([2.0, 3.0], np.array([[1.0, -1.0]])), [[-1.0, 1.0]])

    def test_reparameterization_keeps_maps(self):
        rng = make_generator(2, "test")
        model = LinearMapModel.from_matrix(rng.standard_normal((3, 2, 2)))
        matrix = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        phi = rng.standard_normal(3)
        X = rng.standard_normal((4, 2))
        np.testing.assert_allclose(model.reparameterized(matrix).maps(phi, X), model.maps(matrix @ phi, X))

    def test_bad_features(self):
        model = LinearMapModel(2, 3, lambda X: np.zeros((X.shape[0], 2, 2)))
        with self.assertRaises(ShapeError):
            model.maps(np.zeros(3), np.zeros((1, 2)))
        with self.assertRaises(ShapeError):
            LinearMapModel.from_matrix(np.zeros((2, 2, 3)))


if __name__ == '__main__':
    unittest.main()
