# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Closed-form ground truths: Gaussian optimal transport maps, Bures-Wasserstein distances,
Gaussian scores, one-dimensional monotone rearrangements and finite differences.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import NonFiniteError, NotSPDError, ShapeError
from .helpers import as_matrix, as_point_cloud, as_vector, check_positive
from .typedefs import FloatArray

EIGENVALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class AffineMap:
    """
    The map x ↦ A x + b.

    Attributes:
        matrix (FloatArray): (d, d) matrix A.
        offset (FloatArray): (d,) vector b.
    """
    matrix: FloatArray
    offset: FloatArray

    def __call__(self, X) -> FloatArray:
        X = as_point_cloud(X, self.matrix.shape[0], "X")
        return X @ self.matrix.T + self.offset

    def compose(self, other: 'AffineMap') -> 'AffineMap':
        '''
        self ∘ other.
        '''
        return AffineMap(self.matrix @ other.matrix, self.matrix @ other.offset + self.offset)


def _spd_eigh(cov: FloatArray, name: str):
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise NotSPDError(f"{name} is not symmetric")
    cov = 0.5 * (cov + cov.T)
    values, vectors = linalg.eigh(cov)
    if values[0] <= EIGENVALUE_FLOOR * max(1.0, abs(values[-1])):
        raise NotSPDError(f"{name} is not positive definite (smallest eigenvalue {values[0]:.3e})")
    return values, vectors


def spd_power(cov, power: float, name: str = "covariance") -> FloatArray:
    """
    cov^power for a symmetric positive definite matrix, via the symmetric eigendecomposition.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    values, vectors = _spd_eigh(cov, name)
    return (vectors * values ** power) @ vectors.T


def spd_sqrt(cov, name: str = "covariance") -> FloatArray:
    return spd_power(cov, 0.5, name)


def _gaussian_args(mean, cov, name: str):
    mean = as_vector(mean, name=f"{name} mean")
    cov = as_matrix(cov, mean.shape[0], f"{name} covariance")
    return mean, cov


def gaussian_ot_map(mean0, cov0, mean1, cov1) -> AffineMap:
    """
    Optimal transport (Brenier) map from N(mean0, cov0) to N(mean1, cov1).

    A = cov0^{-1/2} (cov0^{1/2} cov1 cov0^{1/2})^{1/2} cov0^{-1/2}, b = mean1 - A mean0.

    Returns:
        AffineMap: The map; its matrix is symmetric positive definite.

    Raises:
        NotSPDError: if a covariance is not symmetric positive definite.
    """
    mean0, cov0 = _gaussian_args(mean0, cov0, "source")
    mean1, cov1 = _gaussian_args(mean1, cov1, "target")
    if mean0.shape != mean1.shape:
        raise ShapeError("source and target have different dimensions")
    _spd_eigh(cov1, "target covariance")
    root0 = spd_sqrt(cov0, "source covariance")
    inv_root0 = spd_power(cov0, -0.5, "source covariance")
    middle = spd_sqrt(root0 @ cov1 @ root0, "cross covariance")
    matrix = inv_root0 @ middle @ inv_root0
    matrix = 0.5 * (matrix + matrix.T)
    return AffineMap(matrix, mean1 - matrix @ mean0)


def bures_w2(mean0, cov0, mean1, cov1) -> float:
    """
    Squared 2-Wasserstein distance between two Gaussians.

    W₂² = ‖mean0 - mean1‖² + tr(cov0 + cov1 - 2 (cov0^{1/2} cov1 cov0^{1/2})^{1/2}).

    Returns:
        float: W₂², clipped at 0 against rounding.
    """
    mean0, cov0 = _gaussian_args(mean0, cov0, "first")
    mean1, cov1 = _gaussian_args(mean1, cov1, "second")
    if mean0.shape != mean1.shape:
        raise ShapeError("Gaussians have different dimensions")
    _spd_eigh(cov1, "second covariance")
    root0 = spd_sqrt(cov0, "first covariance")
    cross = spd_sqrt(root0 @ cov1 @ root0, "cross covariance")
    diff = mean0 - mean1
    value = float(diff @ diff + np.trace(cov0) + np.trace(cov1) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def gaussian_score(mean, cov, x) -> FloatArray:
    """
    Score ∇ log N(mean, cov)(x) = -cov⁻¹ (x - mean).

    Args:
        x (array_like): A point (d,) or a batch (n, d).

    Returns:
        FloatArray: Same shape as x.
    """
    mean, cov = _gaussian_args(mean, cov, "gaussian")
    _spd_eigh(cov, "covariance")
    x_arr = np.asarray(x, dtype=np.float64)
    batch = as_point_cloud(x_arr.reshape(-1, mean.shape[0]), mean.shape[0], "x")
    score = -linalg.solve(cov, (batch - mean).T, assume_a="pos").T
    return score.reshape(x_arr.shape)


def ot_map_1d(samples_src, samples_tgt, query):
    """
    Monotone rearrangement between two sorted samples of equal size, interpolated linearly.

    Args:
        samples_src (array_like): Sorted source sample.
        samples_tgt (array_like): Sorted target sample of the same length.
        query (float | array_like): Where to evaluate; values outside the source range are clamped.

    Returns:
        float | FloatArray: The map evaluated at query.
    """
    src = as_vector(samples_src, name="samples_src")
    tgt = as_vector(samples_tgt, src.shape[0], "samples_tgt")
    if np.any(np.diff(src) < 0) or np.any(np.diff(tgt) < 0):
        raise ValueError("samples must be sorted in nondecreasing order")
    result = np.interp(query, src, tgt)
    return float(result) if np.ndim(result) == 0 else result


def finite_diff_gradient(f: Callable[[FloatArray], float], theta, step: float = 1e-6) -> FloatArray:
    """
    Central finite-difference gradient of a scalar function.

    Args:
        f (Callable): Function of a flat vector returning a real.
        theta (array_like): Point of evaluation.
        step (float, optional): Difference step. Defaults to 1e-6.

    Returns:
        FloatArray: The gradient estimate, same length as theta.
    """
    check_positive(step, "step")
    theta = as_vector(theta, name="theta")
    grad = np.empty_like(theta)
    for k in range(theta.shape[0]):
        shift = np.zeros_like(theta)
        shift[k] = step
        upper = float(f(theta + shift))
        lower = float(f(theta - shift))
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NonFiniteError(f"function is not finite around coordinate {k}")
        grad[k] = (upper - lower) / (2.0 * step)
    return grad
