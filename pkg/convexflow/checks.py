# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Self-test battery run by ``convexflow check``: closed-form oracles and structural invariants
of the installed build, each small enough to finish in seconds.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
from scipy import linalg

from . import icnn
from .divergences import PotentialEnergy, TargetPotential, mmd_energy
from .icnn import IcnnSpec
from .maps import LinearMapModel
from .oracles import bures_w2, finite_diff_gradient, gaussian_ot_map
from .rng import make_generator
from .schemes import explicit_constrained_step, implicit_constrained_step, natural_direction_direct, prox_objective
from .sinkhorn import epsilon_from_rule, score_estimate, sinkhorn_self

logger = logging.getLogger(__name__)

CHECK_SEED = 20240
CONVEXITY_WEIGHTS = (0.25, 0.5, 0.75)
# pointwise error of the score estimate at n = 2000 measures around 0.19 to 0.25
SCORE_POINTWISE_TOL = 0.3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel_err(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1.0))


def check_param_count() -> Tuple[bool, str]:
    counts = (icnn.param_count(IcnnSpec(2, (20, 20))), icnn.param_count(IcnnSpec(1, (1,))),
              icnn.param_count(IcnnSpec(3, (5, 5))))
    return counts == (541, 4, 71), f"m = {counts}, expected (541, 4, 71)"


def check_input_gradient() -> Tuple[bool, str]:
    spec = IcnnSpec(2)
    rng = make_generator(CHECK_SEED, "check", "input_gradient")
    worst = 0.0
    for _ in range(10):
        theta = icnn.init_params(spec, rng)
        x = rng.standard_normal(2)
        maps = icnn.transport_batch(spec, theta, x[None, :]).maps[0]
        fd = finite_diff_gradient(lambda y: icnn.potential(spec, theta, y), x)
        worst = max(worst, _rel_err(maps, fd))
    return worst <= 1e-4, f"max relative error {worst:.2e}"


def check_param_gradient() -> Tuple[bool, str]:
    spec = IcnnSpec(2)
    rng = make_generator(CHECK_SEED, "check", "param_gradient")
    theta = icnn.init_params(spec, rng)
    X = rng.standard_normal((4, 2))
    C = rng.standard_normal((4, 2))
    analytic = icnn.loss_param_gradient(spec, theta, X, C)
    fd = finite_diff_gradient(
        lambda t: float(np.mean(np.sum(icnn.transport_batch(spec, t, X).maps * C, axis=1))), theta)
    err = _rel_err(analytic, fd)
    return err <= 1e-4, f"relative error {err:.2e} over {theta.shape[0]} parameters"


def check_convexity() -> Tuple[bool, str]:
    spec = IcnnSpec(2)
    rng = make_generator(CHECK_SEED, "check", "convexity")
    gap, worst = -np.inf, np.inf
    for _ in range(5):
        theta = icnn.init_params(spec, rng) + 0.5 * rng.standard_normal(icnn.param_count(spec))
        X = 3.0 * rng.standard_normal((2000, 2))
        Y = 3.0 * rng.standard_normal((2000, 2))
        phi_x = icnn.potential_batch(spec, theta, X)
        phi_y = icnn.potential_batch(spec, theta, Y)
        for t in CONVEXITY_WEIGHTS:
            phi_t = icnn.potential_batch(spec, theta, t * X + (1.0 - t) * Y)
            gap = max(gap, float(np.max(phi_t - (t * phi_x + (1.0 - t) * phi_y))))
        monotone = np.sum((icnn.transport_batch(spec, theta, X).maps - icnn.transport_batch(spec, theta, Y).maps)
                          * (X - Y), axis=1)
        worst = min(worst, float(np.min(monotone)))
    return gap <= 1e-10 and worst >= -1e-10, f"max convexity gap {gap:.2e}, min monotonicity {worst:.2e}"


def check_mmd() -> Tuple[bool, str]:
    two_point = mmd_energy(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))
    X = make_generator(CHECK_SEED, "check", "mmd").standard_normal((500, 2))
    null = mmd_energy(X, X)
    return abs(two_point - 5.0) <= 1e-12 and null == 0.0, f"two-point {two_point!r}, null {null!r}"


def check_gaussian_oracles() -> Tuple[bool, str]:
    gauss_map = gaussian_ot_map([2.0], [[4.0]], [0.0], [[1.0]])
    ok_map = abs(gauss_map.matrix[0, 0] - 0.5) <= 1e-12 and abs(gauss_map.offset[0] + 1.0) <= 1e-12
    w2 = bures_w2([0.0], [[1.0]], [3.0], [[4.0]])
    return ok_map and abs(w2 - 10.0) <= 1e-10, f"map ({gauss_map.matrix[0, 0]!r}, {gauss_map.offset[0]!r}), W2² {w2!r}"


def _random_linear_model(rng: np.random.Generator, m: int, d: int) -> LinearMapModel:
    return LinearMapModel.from_matrix(rng.standard_normal((m, d, d)))


def check_natural_direction() -> Tuple[bool, str]:
    rng = make_generator(CHECK_SEED, "check", "natural")
    model = _random_linear_model(rng, 6, 3)
    theta = rng.standard_normal(6)
    X = rng.standard_normal((10, 3))
    J = model.transport(theta, X, want_jacobians=True).param_jacobians
    u = rng.standard_normal(6)
    consistent = natural_direction_direct(model, theta, X, J @ u, regularization=0.0)
    v = rng.standard_normal((10, 3))
    direct = natural_direction_direct(model, theta, X, v, regularization=0.0)
    q, r = linalg.qr(J.reshape(-1, 6), mode="economic")
    stacked = linalg.solve_triangular(r, q.T @ v.reshape(-1))
    err_u, err_qr = _rel_err(consistent, u), _rel_err(direct, stacked)
    return err_u <= 1e-6 and err_qr <= 1e-6, f"consistency {err_u:.2e}, stacked QR {err_qr:.2e}"


def check_score_oracle() -> Tuple[bool, str]:
    rng = make_generator(CHECK_SEED, "check", "score")
    points = rng.standard_normal((2000, 2))
    epsilon = epsilon_from_rule(points, 0.05)
    queries = rng.standard_normal((400, 2))
    queries = queries[np.linalg.norm(queries, axis=1) <= 2.0][:200]
    score = score_estimate(sinkhorn_self(points, epsilon), queries)
    slope = -float(np.sum(score * queries) / np.sum(queries * queries))
    expected = 1.0 / (1.0 + epsilon / 2.0)
    err = abs(slope - expected) / expected
    oracle = -expected * queries
    pointwise = float(np.mean(np.linalg.norm(score - oracle, axis=1)) / np.mean(np.linalg.norm(oracle, axis=1)))
    return (err <= 0.15 and pointwise <= SCORE_POINTWISE_TOL,
            f"fitted score slope {slope:.4f}, smoothed-Gaussian oracle {expected:.4f}, pointwise error {pointwise:.3f}")


def _toy_problem():
    rng = make_generator(CHECK_SEED, "check", "toy")
    X = 2.0 + 2.0 * rng.standard_normal((50, 1))
    return LinearMapModel.affine_1d(), X, PotentialEnergy(TargetPotential.standard_gaussian())


def check_prox_descent() -> Tuple[bool, str]:
    model, X, functional = _toy_problem()
    theta = np.array([1.0, 0.0])
    tau = 0.4
    values = [functional.value(model.maps(theta, X))]
    for _ in range(50):
        base = model.maps(theta, X)
        theta, _ = implicit_constrained_step(model, theta, X, functional, tau, 200, inner_optimizer="lbfgs")
        if prox_objective(model, theta, X, functional, base, tau) > values[-1]:
            return False, f"prox objective increased at step {len(values)}"
        values.append(functional.value(model.maps(theta, X)))
    monotone = all(b <= a for a, b in zip(values, values[1:]))
    return monotone, f"objective {values[0]:.6f} -> {values[-1]:.6f} over 50 steps"


def check_explicit_natural() -> Tuple[bool, str]:
    model, X, functional = _toy_problem()
    theta = np.array([1.0, 0.0])
    tau = 0.4
    stepped, _ = explicit_constrained_step(model, theta, X, functional, tau, 500, inner_optimizer="lbfgs")
    v = -functional.grad_field(model.maps(theta, X)).vectors
    natural = theta + tau * natural_direction_direct(model, theta, X, v)
    err = float(np.max(np.abs(stepped - natural)))
    return err <= 1e-4, f"max deviation {err:.2e}"


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("param_count", check_param_count),
    ("input_gradient", check_input_gradient),
    ("param_gradient", check_param_gradient),
    ("convexity_monotonicity", check_convexity),
    ("mmd_closed_form", check_mmd),
    ("gaussian_oracles", check_gaussian_oracles),
    ("natural_direction", check_natural_direction),
    ("score_oracle", check_score_oracle),
    ("prox_descent", check_prox_descent),
    ("explicit_natural_equivalence", check_explicit_natural),
]


def run_checks() -> List[CheckResult]:
    """
    Run every check; an exception inside a check counts as a failure of that check.
    """
    results = []
    for name, check in CHECKS:
        try:
            passed, detail = check()
        except Exception as e:
            logger.debug("check %s raised", name, exc_info=True)
            passed, detail = False, f"{type(e).__name__}: {e}"
        results.append(CheckResult(name, bool(passed), detail))
    return results
