# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

from abc import ABC, abstractmethod
from typing import Callable

import numpy as np

from . import icnn
from .errors import ShapeError
from .helpers import as_point_cloud, as_vector, check_same_shape
from .icnn import IcnnSpec, MapBatchEval
from .typedefs import FloatArray, ParamVector, PointCloud


class MapModel(ABC):
    """
    A parameterized family of transport maps θ ↦ T_θ, as seen by the descent schemes.
    """

    @property
    @abstractmethod
    def input_dim(self) -> int:
        ...

    @property
    @abstractmethod
    def n_params(self) -> int:
        ...

    @abstractmethod
    def transport(self, theta: ParamVector, X: PointCloud, want_jacobians: bool = False) -> MapBatchEval:
        """
        Evaluate T_θ on a batch, optionally with the (n, d, m) parameter Jacobians.
        """

    @abstractmethod
    def loss_param_gradient(self, theta: ParamVector, X: PointCloud, cotangents: FloatArray) -> FloatArray:
        """
        Return (1/n) Σ_i (∇_θ T_θ(x_i))ᵀ c_i.
        """

    def maps(self, theta: ParamVector, X: PointCloud) -> FloatArray:
        return self.transport(theta, X).maps


class IcnnModel(MapModel):
    """
    Gradient of an input convex neural network, T_θ = ∇_x φ_θ.

    Args:
        spec (IcnnSpec): The architecture of φ_θ.
    """

    def __init__(self, spec: IcnnSpec):
        self.spec = spec
        self._n_params = icnn.param_count(spec)

    def __repr__(self):
        return f"IcnnModel({self.spec})"

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def n_params(self) -> int:
        return self._n_params

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        return icnn.init_params(self.spec, rng)

    def transport(self, theta: ParamVector, X: PointCloud, want_jacobians: bool = False) -> MapBatchEval:
        return icnn.transport_batch(self.spec, theta, X, want_jacobians)

    def loss_param_gradient(self, theta: ParamVector, X: PointCloud, cotangents: FloatArray) -> FloatArray:
        return icnn.loss_param_gradient(self.spec, theta, X, cotangents)


class LinearMapModel(MapModel):
    """
    Map that is linear in its parameters, T_θ(x) = F(x) θ.

    Its parameter Jacobian F(x) does not depend on θ, which makes the inner problems of the
    constrained schemes quadratic. Used for toy problems with closed-form answers.

    Args:
        input_dim (int): Dimension d.
        n_params (int): Number of parameters m.
        features (Callable): Maps an (n, d) batch to the (n, d, m) array F(x_i).
    """

    def __init__(self, input_dim: int, n_params: int, features: Callable[[FloatArray], FloatArray]):
        self._input_dim = input_dim
        self._n_params = n_params
        self.features = features

    @staticmethod
    def affine_1d() -> 'LinearMapModel':
        '''
        The map T_θ(x) = θ_1 x + θ_2 on the real line.
        '''
        def features(X: FloatArray) -> FloatArray:
            return np.stack([X, np.ones_like(X)], axis=2)
        return LinearMapModel(1, 2, features)

    @staticmethod
    def from_matrix(basis: FloatArray) -> 'LinearMapModel':
        '''
        Map with features F(x)[j, k] = Σ_l basis[k, j, l] x_l, i.e. a sum of linear maps x ↦ B_k x.
        '''
        basis = np.asarray(basis, dtype=np.float64)
        if basis.ndim != 3 or basis.shape[1] != basis.shape[2]:
            raise ShapeError(f"basis must have shape (m, d, d), got {basis.shape}")

        def features(X: FloatArray) -> FloatArray:
            return np.einsum("kjl,nl->njk", basis, X)
        return LinearMapModel(basis.shape[1], basis.shape[0], features)

    def reparameterized(self, matrix: FloatArray) -> 'LinearMapModel':
        '''
        The same family of maps under the change of variables θ = M φ.
        '''
        matrix = np.asarray(matrix, dtype=np.float64)
        base = self.features
        return LinearMapModel(self._input_dim, matrix.shape[1], lambda X: base(X) @ matrix)

    @property
    def input_dim(self) -> int:
        return self._input_dim

    @property
    def n_params(self) -> int:
        return self._n_params

    def _features(self, X: PointCloud) -> FloatArray:
        F = np.asarray(self.features(X), dtype=np.float64)
        if F.shape != (X.shape[0], self._input_dim, self._n_params):
            raise ShapeError(f"features returned shape {F.shape}, expected "
                             f"({X.shape[0]}, {self._input_dim}, {self._n_params})")
        return F

    def transport(self, theta: ParamVector, X: PointCloud, want_jacobians: bool = False) -> MapBatchEval:
        theta = as_vector(theta, self._n_params, "theta")
        X = as_point_cloud(X, self._input_dim, "X")
        F = self._features(X)
        maps = F @ theta
        # T_θ is the gradient of ½xᵀ(Σ_k θ_k B_k)x only for symmetric features, so no potential here
        return MapBatchEval(potentials=np.full(X.shape[0], np.nan), maps=maps,
                            param_jacobians=F if want_jacobians else None)

    def loss_param_gradient(self, theta: ParamVector, X: PointCloud, cotangents: FloatArray) -> FloatArray:
        as_vector(theta, self._n_params, "theta")
        X = as_point_cloud(X, self._input_dim, "X")
        U = as_point_cloud(cotangents, self._input_dim, "cotangents")
        check_same_shape(X, U, ("X", "cotangents"))
        F = self._features(X)
        return np.einsum("ndk,nd->k", F, U) / X.shape[0]
