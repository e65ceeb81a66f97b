# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Functionals on pushed-forward clouds: Wasserstein gradients of the relative entropy and of
potential energies, the energy-distance MMD and the Gaussian relative entropy.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .errors import NotSPDError, ShapeError
from .helpers import as_matrix, as_point_cloud, as_vector, check_finite, check_positive, mean_sq_norm
from .sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, epsilon_from_rule, score_estimate, sinkhorn_self
from .typedefs import FloatArray, PointCloud

DEFAULT_EPS_RULE = 0.05
MMD_BLOCK_SIZE = 1024


@dataclass(frozen=True)
class TargetPotential:
    """
    Log-concave target γ ∝ exp(-V), described by V and its gradient.

    Attributes:
        grad_v (Callable): Maps an (n, d) batch to the (n, d) array ∇V(x_i).
        label (str): Name of the target.
        v (Callable, optional): Maps an (n, d) batch to the (n,) array V(x_i).
    """
    grad_v: Callable[[FloatArray], FloatArray]
    label: str
    v: Optional[Callable[[FloatArray], FloatArray]] = None

    @staticmethod
    def standard_gaussian() -> 'TargetPotential':
        '''
        γ = N(0, I), V(x) = ‖x‖²/2, ∇V(x) = x.
        '''
        return TargetPotential(grad_v=lambda X: np.array(X, dtype=np.float64, copy=True),
                               label="standard_gaussian",
                               v=lambda X: 0.5 * np.sum(X * X, axis=1))

    @staticmethod
    def gaussian(mean, cov) -> 'TargetPotential':
        '''
        γ = N(mean, cov), V(x) = ½ (x - mean)ᵀ cov⁻¹ (x - mean).
        '''
        mean = as_vector(mean, name="mean")
        cov = as_matrix(cov, mean.shape[0], "cov")
        precision = linalg.cho_solve(_cholesky(cov), np.eye(mean.shape[0]))

        def grad_v(X: FloatArray) -> FloatArray:
            return (X - mean) @ precision

        def v(X: FloatArray) -> FloatArray:
            centered = X - mean
            return 0.5 * np.sum((centered @ precision) * centered, axis=1)
        return TargetPotential(grad_v=grad_v, label="gaussian", v=v)

    @staticmethod
    def flat() -> 'TargetPotential':
        '''
        ∇V = 0. Not a probability measure; only useful to isolate the score term.
        '''
        return TargetPotential(grad_v=lambda X: np.zeros_like(X), label="flat",
                               v=lambda X: np.zeros(X.shape[0]))


@dataclass
class GradField:
    """
    Wasserstein gradient of a functional evaluated at the pushed points.

    Attributes:
        vectors (FloatArray): (n, d) values g_i; schemes descend along v_i = -g_i.
        pushed_points (PointCloud): (n, d) points T_θ(x_i) the field was evaluated at.
        epsilon (float, optional): Entropic regularization used for the score term, if any.
    """
    vectors: FloatArray
    pushed_points: PointCloud
    epsilon: Optional[float] = None


def _cholesky(cov: FloatArray):
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise NotSPDError("covariance matrix is not symmetric")
    try:
        return linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError as e:
        raise NotSPDError(f"covariance matrix is not positive definite: {e}") from e


def _target_gradient(target: TargetPotential, pushed: PointCloud) -> FloatArray:
    grad = np.asarray(target.grad_v(pushed), dtype=np.float64)
    if grad.shape != pushed.shape:
        raise ShapeError(f"target gradient has shape {grad.shape}, expected {pushed.shape}")
    check_finite(grad, "target gradient")
    return grad


def entropy_grad_field(pushed,
                       target: TargetPotential,
                       eps_rule: float = DEFAULT_EPS_RULE,
                       tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER
                       ) -> GradField:
    """
    Empirical Wasserstein gradient of the relative entropy H(· | γ) at a cloud.

    g_i = ŝ(y_i) + ∇V(y_i), where ŝ is the score estimated from the self-entropic potential of
    the cloud itself, with ε = eps_rule × median squared pairwise distance.

    Args:
        pushed (PointCloud): (n, d) cloud y_i = T_θ(x_i), n >= 2.
        target (TargetPotential): The target γ ∝ exp(-V).
        eps_rule (float, optional): Fraction of the median squared distance. Defaults to 0.05.
        tol (float, optional): Sinkhorn tolerance. Defaults to 1e-9.
        max_iter (int, optional): Sinkhorn iteration cap. Defaults to 10 000.

    Returns:
        GradField: the field g and the points it was evaluated at.

    Raises:
        ConvergenceError: propagated from the Sinkhorn solver.
        DegenerateCloudError: if all pushed points coincide.
    """
    pushed = as_point_cloud(pushed, name="pushed", min_points=2)
    epsilon = epsilon_from_rule(pushed, eps_rule)
    pot = sinkhorn_self(pushed, epsilon, tol=tol, max_iter=max_iter)
    vectors = score_estimate(pot, pushed) + _target_gradient(target, pushed)
    return GradField(vectors=vectors, pushed_points=pushed, epsilon=epsilon)


def potential_energy_grad_field(pushed, target: TargetPotential) -> GradField:
    """
    Wasserstein gradient of the potential energy ∫ V dρ, which is ∇V at every point.
    """
    pushed = as_point_cloud(pushed, name="pushed")
    return GradField(vectors=_target_gradient(target, pushed), pushed_points=pushed)


def _mean_distance(A: PointCloud, B: PointCloud, block_size: int) -> float:
    # blockwise to keep memory at block_size × len(B); fixed summation order
    total = 0.0
    for start in range(0, A.shape[0], block_size):
        total += float(np.sum(cdist(A[start:start + block_size], B)))
    return total / (A.shape[0] * B.shape[0])


def mmd_energy(X, Y, block_size: int = MMD_BLOCK_SIZE) -> float:
    """
    Energy-distance MMD between two empirical measures (V-statistic, diagonal included).

    With k(x, y) = -‖x - y‖ this is
    ½ [ mean k(x_i, x_i') + mean k(y_j, y_j') - 2 mean k(x_i, y_j) ].
    The value is reported as is, not its square root.

    Args:
        X (array_like): (n, d) first cloud.
        Y (array_like): (p, d) second cloud.
        block_size (int, optional): Rows per distance block. Defaults to 1024.

    Returns:
        float: The discrepancy, nonnegative up to rounding.
    """
    X = as_point_cloud(X, name="X")
    Y = as_point_cloud(Y, X.shape[1], "Y")
    xx = _mean_distance(X, X, block_size)
    yy = _mean_distance(Y, Y, block_size)
    xy = _mean_distance(X, Y, block_size)
    return 0.5 * (2.0 * xy - xx - yy)


def relative_entropy_gaussian(mean, cov) -> float:
    """
    Relative entropy H(N(mean, cov) | N(0, I)) = ½ (tr cov + ‖mean‖² - d - log det cov).

    Raises:
        NotSPDError: if cov is not symmetric positive definite.
    """
    mean = as_vector(mean, name="mean")
    d = mean.shape[0]
    cov = as_matrix(cov, d, "cov")
    factor, _ = _cholesky(cov)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
    return 0.5 * (float(np.trace(cov)) + float(mean @ mean) - d - logdet)


class RelativeEntropy:
    """
    The relative entropy H(· | γ), with score estimated by self-entropic transport.

    Args:
        target (TargetPotential): The target γ.
        eps_rule (float, optional): ε as a fraction of the median squared distance. Defaults to 0.05.
        tol (float, optional): Sinkhorn tolerance. Defaults to 1e-9.
        max_iter (int, optional): Sinkhorn iteration cap. Defaults to 10 000.
    """
    label = "relative_entropy"
    has_value = False

    def __init__(self, target: TargetPotential, eps_rule: float = DEFAULT_EPS_RULE,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        self.target = target
        self.eps_rule = check_positive(eps_rule, "eps_rule")
        self.tol = tol
        self.max_iter = max_iter

    def grad_field(self, pushed: PointCloud) -> GradField:
        return entropy_grad_field(pushed, self.target, self.eps_rule, self.tol, self.max_iter)

    def surrogate(self, pushed: PointCloud, field: GradField) -> float:
        '''
        Empirical relative Fisher information (1/n) Σ ‖g_i‖², which vanishes at the target.
        '''
        return mean_sq_norm(field.vectors)


class PotentialEnergy:
    """
    The potential energy ρ ↦ ∫ V dρ of a target potential; smooth and score-free.
    """
    label = "potential_energy"
    has_value = True

    def __init__(self, target: TargetPotential):
        if target.v is None:
            raise ValueError("potential energy needs a target with a value function v")
        self.target = target

    def grad_field(self, pushed: PointCloud) -> GradField:
        return potential_energy_grad_field(pushed, self.target)

    def value(self, pushed: PointCloud) -> float:
        pushed = as_point_cloud(pushed, name="pushed")
        return float(np.mean(self.target.v(pushed)))

    def surrogate(self, pushed: PointCloud, field: GradField) -> float:
        return self.value(pushed)
