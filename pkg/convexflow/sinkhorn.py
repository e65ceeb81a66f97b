# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Symmetric entropic optimal transport of a point cloud with itself, and the score estimate
derived from its potential.

Cost convention: c(x, y) = ½‖x − y‖², regularization ε applied to this halved cost.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp

from .errors import ConvergenceError, DegenerateCloudError, NonFiniteError, ShapeError
from .helpers import as_point_cloud, as_vector, check_positive
from .typedefs import FloatArray, PointCloud

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class SinkhornPotentials:
    """
    Self-entropic potential of an empirical measure.

    Attributes:
        points (PointCloud): (n, d) support points y_j.
        f (FloatArray): (n,) symmetric potential values f_j.
        epsilon (float): Entropic regularization.
        iterations_used (int): Number of fixed-point iterations performed.
        final_residual (float): Sup-norm fixed-point residual of ``f``.
        tol (float): Tolerance the solver was asked for.
    """
    points: PointCloud
    f: FloatArray
    epsilon: float
    iterations_used: int
    final_residual: float
    tol: float = DEFAULT_TOL

    @property
    def converged(self) -> bool:
        return self.final_residual <= self.tol


def median_sq_distance(points) -> float:
    """
    Median of the squared Euclidean distances over all n(n-1)/2 pairs of distinct indices.

    Args:
        points (array_like): (n, d) array with n >= 2.

    Returns:
        float: The median; 0 if more than half of the pairs coincide.
    """
    points = as_point_cloud(points, name="points", min_points=2)
    return float(np.median(pdist(points, "sqeuclidean")))


def epsilon_from_rule(points, fraction: float) -> float:
    """
    Regularization ε = fraction × median squared pairwise distance of the cloud.

    Falls back to the mean squared distance when the median is 0.

    Raises:
        DegenerateCloudError: if all points coincide.
    """
    check_positive(fraction, "eps_rule")
    points = as_point_cloud(points, name="points", min_points=2)
    sq = pdist(points, "sqeuclidean")
    scale = float(np.median(sq))
    if scale <= 0.0:
        scale = float(np.mean(sq))
    if scale <= 0.0:
        raise DegenerateCloudError(f"all {points.shape[0]} points coincide, cannot choose an entropic regularization")
    return fraction * scale


def _self_cost(points: PointCloud) -> FloatArray:
    return 0.5 * cdist(points, points, "sqeuclidean")


def _c_transform(f: FloatArray, cost: FloatArray, epsilon: float) -> FloatArray:
    # -ε log( (1/n) Σ_j exp((f_j - c_ij)/ε) )
    n = f.shape[0]
    return -epsilon * logsumexp((f[None, :] - cost) / epsilon, axis=1, b=1.0 / n)


def fixed_point_residual(points, f, epsilon: float) -> float:
    """
    Sup-norm residual max_i |f_i + ε log((1/n) Σ_j exp((f_j - c_ij)/ε))| of a candidate potential.
    """
    points = as_point_cloud(points, name="points", min_points=2)
    f = as_vector(f, points.shape[0], "f")
    return float(np.max(np.abs(f - _c_transform(f, _self_cost(points), epsilon))))


def sinkhorn_self(points,
                  epsilon: float,
                  tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER,
                  init: Optional[FloatArray] = None
                  ) -> SinkhornPotentials:
    """
    Solve the symmetric fixed point f = -ε log((1/n) Σ_j exp((f_j - c_·j)/ε)) in the log domain.

    The iteration is the damped average f ← ½ (f + c-transform(f)), which converges for the
    symmetric problem where the plain iteration may oscillate.

    Args:
        points (array_like): (n, d) cloud, n >= 2.
        epsilon (float): Regularization, > 0.
        tol (float, optional): Sup-norm tolerance on the fixed-point residual. Defaults to 1e-9.
        max_iter (int, optional): Iteration cap. Defaults to 10 000.
        init (FloatArray, optional): Starting potential, e.g. from a previous solve. Defaults to 0.

    Returns:
        SinkhornPotentials: The converged potential.

    Raises:
        ConvergenceError: if the residual is still above tol after max_iter iterations.
    """
    check_positive(epsilon, "epsilon")
    points = as_point_cloud(points, name="points", min_points=2)
    n = points.shape[0]
    cost = _self_cost(points)
    f = np.zeros(n) if init is None else as_vector(init, n, "init").copy()

    residual = np.inf
    iterations = 0
    while True:
        mapped = _c_transform(f, cost, epsilon)
        residual = float(np.max(np.abs(f - mapped)))
        if not np.isfinite(residual):
            raise NonFiniteError("non-finite Sinkhorn potential")
        if residual <= tol:
            break
        if iterations >= max_iter:
            logger.warning("Sinkhorn did not converge: residual %.3e after %d iterations (eps=%.3e, n=%d)",
                           residual, iterations, epsilon, n)
            raise ConvergenceError(f"Sinkhorn did not reach tol={tol:g} in {max_iter} iterations "
                                   f"(residual {residual:.3e})", residual, iterations)
        f = 0.5 * (f + mapped)
        iterations += 1
    return SinkhornPotentials(points=points, f=f, epsilon=float(epsilon),
                              iterations_used=iterations, final_residual=residual, tol=tol)


def softmax_weights(pot: SinkhornPotentials, queries) -> FloatArray:
    '''
    Weights w_j(x) = softmax_j((f_j - ½‖x - y_j‖²)/ε) of the conditional entropic plan, shape (q, n).
    '''
    queries = as_point_cloud(queries, pot.points.shape[1], "queries")
    logits = (pot.f[None, :] - 0.5 * cdist(queries, pot.points, "sqeuclidean")) / pot.epsilon
    logits -= np.max(logits, axis=1, keepdims=True)
    weights = np.exp(logits)
    return weights / np.sum(weights, axis=1, keepdims=True)


def barycentric_projection(pot: SinkhornPotentials, queries) -> FloatArray:
    return softmax_weights(pot, queries) @ pot.points


def score_estimate(pot: SinkhornPotentials, queries) -> FloatArray:
    """
    Estimate the score ∇ log ρ of the measure the potential was fitted on.

    ŝ(x) = (2/ε) (b_ε(x) - x), where b_ε is the barycentric projection of the entropic
    self-transport plan.

    Args:
        pot (SinkhornPotentials): A converged potential.
        queries (array_like): (q, d) query points.

    Returns:
        FloatArray: (q, d) score estimates.
    """
    if not pot.converged:
        raise ValueError("score_estimate needs a converged potential")
    queries = as_point_cloud(queries, pot.points.shape[1], "queries")
    if queries.shape[1] != pot.points.shape[1]:
        raise ShapeError("queries and support points have different dimensions")
    return (2.0 / pot.epsilon) * (barycentric_projection(pot, queries) - queries)
