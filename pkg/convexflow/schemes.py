# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Time-discretized descent schemes in parameter space: Euclidean gradient descent, Adam, the
explicit and implicit constrained schemes and the direct natural-gradient step.

Every scheme sees the map family through a :class:`~convexflow.maps.MapModel` and the
objective through a functional object (``RelativeEntropy`` or ``PotentialEnergy``) exposing
``grad_field``, ``surrogate`` and, for smooth functionals, ``value``.
"""

import logging
import time
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from .errors import InnerDivergenceError, InvalidSpecError, NonFiniteError, SchemeAbortedError, SingularSystemError
from .helpers import as_point_cloud, as_vector, check_positive, l2_norm, mean_sq_norm
from .maps import MapModel
from .records import RunRecord, StepDiagnostics
from .typedefs import FloatArray, InnerOptimizerType, ParamVector, PointCloud, SchemeKind

logger = logging.getLogger(__name__)

SCHEME_KINDS = ("euclidean", "adam", "explicit_constrained", "implicit_constrained", "natural_direct")
INNER_OPTIMIZERS = ("adam", "gd", "lbfgs")
DEFAULT_INNER_LR = 1e-2
DEFAULT_REGULARIZATION = 1e-8
SURROGATE_LIMIT = 1e6
LBFGS_OPTIONS = {"ftol": 1e-15, "gtol": 1e-12}

Sampler = Callable[[int, np.random.Generator], PointCloud]


@dataclass
class SchemeConfig:
    """
    One configured descent method.

    Attributes:
        label (str): Method name used in records and file names.
        kind (SchemeKind): Which scheme to run.
        tau (float): Step size τ; the learning rate for ``adam``.
        outer_steps (int): Number of outer steps K.
        inner_steps (int): Inner iterations K' of the constrained schemes.
        inner_optimizer (InnerOptimizerType): Inner solver of the constrained schemes.
        inner_lr (float): Learning rate of the ``adam`` and ``gd`` inner solvers.
        adam_beta1 (float): First moment decay.
        adam_beta2 (float): Second moment decay.
        adam_delta (float): Denominator offset.
        batch_n (int): Source samples drawn per outer step (and per inner step of the implicit scheme).
        regularization (float): Relative Tikhonov weight of the direct natural-gradient solve.
    """
    label: str
    kind: SchemeKind
    tau: float
    outer_steps: int
    inner_steps: int = 100
    inner_optimizer: InnerOptimizerType = "adam"
    inner_lr: float = DEFAULT_INNER_LR
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_delta: float = 1e-8
    batch_n: int = 100
    regularization: float = DEFAULT_REGULARIZATION

    def __post_init__(self):
        if not self.label:
            raise InvalidSpecError("scheme label must not be empty")
        if self.kind not in SCHEME_KINDS:
            raise InvalidSpecError(f"unknown scheme kind {self.kind!r}, expected one of {SCHEME_KINDS}")
        if self.inner_optimizer not in INNER_OPTIMIZERS:
            raise InvalidSpecError(f"unknown inner optimizer {self.inner_optimizer!r}, "
                                   f"expected one of {INNER_OPTIMIZERS}")
        if not self.tau > 0:
            raise InvalidSpecError(f"{self.label}: tau must be positive, got {self.tau}")
        if self.outer_steps < 0:
            raise InvalidSpecError(f"{self.label}: outer_steps must be >= 0, got {self.outer_steps}")
        if self.inner_steps < 1:
            raise InvalidSpecError(f"{self.label}: inner_steps must be >= 1, got {self.inner_steps}")
        if not self.inner_lr > 0:
            raise InvalidSpecError(f"{self.label}: inner_lr must be positive, got {self.inner_lr}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise InvalidSpecError(f"{self.label}: adam betas must lie in [0, 1)")
        if not self.adam_delta > 0:
            raise InvalidSpecError(f"{self.label}: adam_delta must be positive")
        if self.batch_n < 2:
            raise InvalidSpecError(f"{self.label}: batch_n must be >= 2, got {self.batch_n}")
        if self.regularization < 0:
            raise InvalidSpecError(f"{self.label}: regularization must be >= 0")

    @property
    def adam_params(self) -> Tuple[float, float, float]:
        return (self.adam_beta1, self.adam_beta2, self.adam_delta)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Dict[str, Any], batch_n: Optional[int] = None) -> 'SchemeConfig':
        '''
        Build a config from a mapping; ``batch_n`` fills in a missing batch size.
        '''
        known = {f.name for f in fields(SchemeConfig)}
        unknown = set(data) - known
        if unknown:
            raise InvalidSpecError(f"unknown scheme config keys: {sorted(unknown)}")
        values = dict(data)
        if "batch_n" not in values and batch_n is not None:
            values["batch_n"] = batch_n
        try:
            return SchemeConfig(**values)
        except TypeError as e:
            raise InvalidSpecError(f"incomplete scheme config: {e}") from e


@dataclass(frozen=True)
class AdamState:
    """
    Moments of the Adam update.

    Attributes:
        first_moment (FloatArray): (m,) running mean of the gradients.
        second_moment (FloatArray): (m,) running mean of the squared gradients, elementwise >= 0.
        step_count (int): Number of updates taken.
    """
    first_moment: FloatArray
    second_moment: FloatArray
    step_count: int = 0

    @staticmethod
    def fresh(n_params: int) -> 'AdamState':
        return AdamState(np.zeros(n_params), np.zeros(n_params), 0)


def adam_step(theta: ParamVector,
              state: AdamState,
              gradient: FloatArray,
              tau: float,
              beta1: float = 0.9,
              beta2: float = 0.999,
              delta: float = 1e-8
              ) -> Tuple[ParamVector, AdamState]:
    """
    One bias-corrected Adam update with learning rate τ.

    The input state is left untouched; the updated state is returned.

    Returns:
        Tuple[ParamVector, AdamState]: θ_{k+1} and the new state.
    """
    theta = as_vector(theta, name="theta")
    gradient = as_vector(gradient, theta.shape[0], "gradient")
    step = state.step_count + 1
    first = beta1 * state.first_moment + (1.0 - beta1) * gradient
    second = beta2 * state.second_moment + (1.0 - beta2) * gradient * gradient
    first_hat = first / (1.0 - beta1 ** step)
    second_hat = second / (1.0 - beta2 ** step)
    theta_next = theta - tau * first_hat / (np.sqrt(second_hat) + delta)
    return theta_next, AdamState(first, second, step)


def _displacement(model: MapModel, theta_next: ParamVector, X: PointCloud, base_maps: FloatArray) -> float:
    return l2_norm(model.maps(theta_next, X) - base_maps)


def _step_start(model: MapModel, theta: ParamVector, X: PointCloud, functional):
    '''
    Pushed cloud, gradient field and parameter gradient of the functional at θ_k.
    '''
    pushed = model.maps(theta, X)
    field = functional.grad_field(pushed)
    gradient = model.loss_param_gradient(theta, X, field.vectors)
    return pushed, field, gradient


def euclidean_step(model: MapModel,
                   theta: ParamVector,
                   X,
                   functional,
                   tau: float
                   ) -> Tuple[ParamVector, StepDiagnostics]:
    """
    One step of Euclidean gradient descent on θ.

    θ_{k+1} = θ_k − τ (1/n) Σ_i (∇_θ T_θ(x_i))ᵀ g_i, where g is the Wasserstein gradient
    field of the functional at the pushed points T_{θ_k}(x_i).

    Args:
        model (MapModel): The map family.
        theta (ParamVector): θ_k.
        X (PointCloud): (n, d) source batch.
        functional: ``RelativeEntropy`` or ``PotentialEnergy``.
        tau (float): Step size.

    Returns:
        Tuple[ParamVector, StepDiagnostics]: θ_{k+1} and the step metrics.
    """
    check_positive(tau, "tau")
    theta = as_vector(theta, model.n_params, "theta")
    X = as_point_cloud(X, model.input_dim, "X")
    pushed, field, gradient = _step_start(model, theta, X, functional)
    theta_next = theta - tau * gradient
    diag = StepDiagnostics(step=0,
                           surrogate_loss=functional.surrogate(pushed, field),
                           grad_norm=float(np.linalg.norm(gradient)),
                           map_displacement=_displacement(model, theta_next, X, pushed),
                           epsilon=field.epsilon)
    return theta_next, diag


def _adam_outer_step(model: MapModel, theta: ParamVector, state: AdamState, X: PointCloud, functional,
                     config: SchemeConfig) -> Tuple[ParamVector, AdamState, StepDiagnostics]:
    pushed, field, gradient = _step_start(model, theta, X, functional)
    theta_next, state = adam_step(theta, state, gradient, config.tau, *config.adam_params)
    diag = StepDiagnostics(step=0,
                           surrogate_loss=functional.surrogate(pushed, field),
                           grad_norm=float(np.linalg.norm(gradient)),
                           map_displacement=_displacement(model, theta_next, X, pushed),
                           epsilon=field.epsilon)
    return theta_next, state, diag


def _descend(theta0: ParamVector,
             evaluate: Callable[[ParamVector, int, bool], Tuple[float, Optional[FloatArray]]],
             steps: int,
             optimizer: InnerOptimizerType,
             lr: float,
             adam_params: Tuple[float, float, float],
             keep_best: bool
             ) -> Tuple[ParamVector, float]:
    '''
    First-order inner loop: ``steps`` updates and steps + 1 objective evaluations.

    ``evaluate(theta, index, need_grad)`` returns the objective and, when asked, its gradient.
    '''
    theta = theta0.copy()
    state = AdamState.fresh(theta.shape[0])
    best_theta, best_value = theta, np.inf
    value = np.inf
    for index in range(steps + 1):
        value, gradient = evaluate(theta, index, index < steps)
        if not np.isfinite(value):
            raise InnerDivergenceError(f"inner objective is not finite at inner iterate {index}", index)
        if value < best_value:
            best_theta, best_value = theta, value
        if index == steps:
            break
        if optimizer == "adam":
            theta, state = adam_step(theta, state, gradient, lr, *adam_params)
        else:
            theta = theta - lr * gradient
    if keep_best:
        return best_theta, float(best_value)
    return theta, float(value)


def _lbfgs(theta0: ParamVector, fun: Callable[[ParamVector], Tuple[float, FloatArray]], steps: int
           ) -> Tuple[ParamVector, float]:
    '''
    Deterministic inner solve; never returns a point worse than the start.
    '''
    def safe(theta):
        try:
            return fun(theta)
        except NonFiniteError:
            return np.inf, np.zeros_like(theta)

    start_value, _ = fun(theta0)
    if not np.isfinite(start_value):
        raise InnerDivergenceError("inner objective is not finite at inner iterate 0", 0)
    result = optimize.minimize(safe, theta0, jac=True, method="L-BFGS-B",
                               options=dict(LBFGS_OPTIONS, maxiter=steps))
    end_value, _ = safe(result.x)
    logger.debug("L-BFGS inner solve: %s after %d iterations, objective %.6e -> %.6e",
                 result.message, result.nit, start_value, end_value)
    if not end_value <= start_value:
        return theta0.copy(), float(start_value)
    return np.asarray(result.x, dtype=np.float64), float(end_value)


def explicit_objective(model: MapModel,
                       theta: ParamVector,
                       X: PointCloud,
                       base_maps: FloatArray,
                       v: FloatArray,
                       tau: float,
                       need_grad: bool = True
                       ) -> Tuple[float, Optional[FloatArray]]:
    """
    Inner objective of the explicit scheme, (1/n) Σ_i ‖v_i − (T_θ(x_i) − b_i) / τ‖², and its gradient in θ.

    Args:
        model (MapModel): The map family.
        theta (ParamVector): Where to evaluate.
        X (PointCloud): (n, d) source batch.
        base_maps (FloatArray): (n, d) anchor b_i = T_{θ_k}(x_i).
        v (FloatArray): (n, d) frozen descent field.
        tau (float): Step size.
        need_grad (bool, optional): Also return the gradient. Defaults to True.

    Returns:
        Tuple[float, Optional[FloatArray]]: The value and the (m,) gradient, or None.
    """
    scale = 1.0 / (tau * tau)
    residual = model.maps(theta, X) - (base_maps + tau * v)
    value = scale * mean_sq_norm(residual)
    grad = model.loss_param_gradient(theta, X, 2.0 * scale * residual) if need_grad else None
    return value, grad


def explicit_constrained_step(model: MapModel,
                              theta: ParamVector,
                              X,
                              functional,
                              tau: float,
                              inner_steps: int,
                              inner_optimizer: InnerOptimizerType = "adam",
                              inner_lr: float = DEFAULT_INNER_LR,
                              adam_params: Tuple[float, float, float] = (0.9, 0.999, 1e-8)
                              ) -> Tuple[ParamVector, StepDiagnostics]:
    """
    One step of the explicit constrained scheme.

    The descent field v_i = -g_i is computed once at T_{θ_k}(x_i) and frozen. The inner problem

        min_θ (1/n) Σ_i ‖v_i − (T_θ(x_i) − T_{θ_k}(x_i)) / τ‖²

    is solved approximately by ``inner_steps`` iterations from θ_k on the same batch; the
    best inner iterate is returned.

    Args:
        model (MapModel): The map family.
        theta (ParamVector): θ_k.
        X (PointCloud): (n, d) source batch.
        functional: ``RelativeEntropy`` or ``PotentialEnergy``.
        tau (float): Step size.
        inner_steps (int): Inner iterations K'.
        inner_optimizer (InnerOptimizerType, optional): ``adam``, ``gd`` or ``lbfgs``. Defaults to ``adam``.
        inner_lr (float, optional): Inner learning rate of ``adam``/``gd``. Defaults to 1e-2.
        adam_params (tuple, optional): (β₁, β₂, δ) of the inner Adam.

    Returns:
        Tuple[ParamVector, StepDiagnostics]: θ_{k+1} and the step metrics.

    Raises:
        InnerDivergenceError: if the inner objective becomes non-finite.
    """
    check_positive(tau, "tau")
    theta = as_vector(theta, model.n_params, "theta")
    X = as_point_cloud(X, model.input_dim, "X")
    pushed, field, gradient = _step_start(model, theta, X, functional)
    v = -field.vectors

    def objective(current: ParamVector, need_grad: bool):
        return explicit_objective(model, current, X, pushed, v, tau, need_grad)

    if inner_optimizer == "lbfgs":
        theta_next, inner_value = _lbfgs(theta, lambda current: objective(current, True), inner_steps)
    else:
        theta_next, inner_value = _descend(theta, lambda current, _, need_grad: objective(current, need_grad),
                                           inner_steps, inner_optimizer, inner_lr, adam_params, keep_best=True)
    diag = StepDiagnostics(step=0,
                           surrogate_loss=functional.surrogate(pushed, field),
                           grad_norm=float(np.linalg.norm(gradient)),
                           map_displacement=_displacement(model, theta_next, X, pushed),
                           inner_objective=inner_value,
                           epsilon=field.epsilon)
    return theta_next, diag


def _prox_value(functional, maps: FloatArray, base_maps: FloatArray, tau: float) -> float:
    return functional.value(maps) + mean_sq_norm(maps - base_maps) / (2.0 * tau)


def prox_objective(model: MapModel, theta: ParamVector, X, functional, base_maps, tau: float) -> float:
    """
    Objective of the proximal step, F(T_θ∗ρ̂) + (1/(2τ)) (1/n) Σ_i ‖T_θ(x_i) − b_i‖².

    Args:
        model (MapModel): The map family.
        theta (ParamVector): Where to evaluate.
        X (PointCloud): (n, d) source batch.
        functional: A functional with a computable ``value``.
        base_maps (FloatArray): (n, d) anchor b_i = T_{θ_k}(x_i).
        tau (float): Step size.
    """
    return _prox_value(functional, model.maps(theta, X), base_maps, tau)


def prox_gradient(model: MapModel, theta: ParamVector, X, functional, base_maps, tau: float) -> FloatArray:
    """
    Gradient in θ of the proximal objective; the cotangent of sample i is g_i + (T_θ(x_i) − b_i) / τ,
    with the gradient field g refitted on the current pushed cloud.
    """
    return _prox_gradient(model, theta, X, functional, model.maps(theta, X), base_maps, tau)


def _prox_gradient(model: MapModel, theta: ParamVector, X: PointCloud, functional, maps: FloatArray,
                   base_maps: FloatArray, tau: float) -> FloatArray:
    cotangents = functional.grad_field(maps).vectors + (maps - base_maps) / tau
    return model.loss_param_gradient(theta, X, cotangents)


def inexactness_delta(model: MapModel, theta_next: ParamVector, X: PointCloud, functional,
                      base_maps: FloatArray, tau: float) -> Optional[float]:
    """
    Certificate δ_k of an inexact proximal step:
    τ ‖g(T_{k+1}) + (1/(2τ)) (T_{k+1} − T_k)‖ / ‖T_{k+1} − T_k‖ in the empirical L² norm.

    Returns None when the step did not move the map.
    """
    maps_next = model.maps(theta_next, X)
    step = maps_next - base_maps
    moved = l2_norm(step)
    if moved == 0.0:
        return None
    field = functional.grad_field(maps_next)
    return tau * l2_norm(field.vectors + step / (2.0 * tau)) / moved


def implicit_constrained_step(model: MapModel,
                              theta: ParamVector,
                              X,
                              functional,
                              tau: float,
                              inner_steps: int,
                              inner_optimizer: InnerOptimizerType = "adam",
                              inner_lr: float = DEFAULT_INNER_LR,
                              adam_params: Tuple[float, float, float] = (0.9, 0.999, 1e-8),
                              sampler: Optional[Sampler] = None,
                              rng: Optional[np.random.Generator] = None
                              ) -> Tuple[ParamVector, StepDiagnostics]:
    """
    One step of the implicit (proximal) constrained scheme.

    Approximately minimizes θ ↦ F(T_θ∗ρ̂) + (1/(2τ)) (1/n) Σ_i ‖T_θ(x_i) − T_{θ_k}(x_i)‖² by
    ``inner_steps`` iterations from θ_k. Each inner iteration refits the gradient field on the
    current pushed cloud; the cotangent of sample i is g_i + (T_θ(x_i) − T_{θ_k}(x_i)) / τ.

    With a ``sampler`` every inner iteration draws a fresh batch of len(X) points from ``rng``;
    without one the batch X is kept fixed. The last inner iterate is returned. The ``lbfgs``
    inner solver needs a fixed batch and a functional with a computable value.

    Args:
        model (MapModel): The map family.
        theta (ParamVector): θ_k.
        X (PointCloud): (n, d) source batch, used for the diagnostics and as the fixed batch.
        functional: ``RelativeEntropy`` or ``PotentialEnergy``.
        tau (float): Step size.
        inner_steps (int): Inner iterations K'.
        inner_optimizer (InnerOptimizerType, optional): ``adam``, ``gd`` or ``lbfgs``. Defaults to ``adam``.
        inner_lr (float, optional): Inner learning rate of ``adam``/``gd``. Defaults to 1e-2.
        adam_params (tuple, optional): (β₁, β₂, δ) of the inner Adam.
        sampler (Callable, optional): ``sampler(n, rng)`` drawing source points.
        rng (np.random.Generator, optional): Generator for the sampler.

    Returns:
        Tuple[ParamVector, StepDiagnostics]: θ_{k+1} and the step metrics, including δ_k.

    Raises:
        InnerDivergenceError: if the inner objective becomes non-finite.
        InvalidSpecError: for ``lbfgs`` with a sampler or without a functional value.
    """
    check_positive(tau, "tau")
    theta = as_vector(theta, model.n_params, "theta")
    X = as_point_cloud(X, model.input_dim, "X")
    if sampler is not None and rng is None:
        raise ValueError("a sampler needs a generator")
    pushed, field, gradient = _step_start(model, theta, X, functional)

    if inner_optimizer == "lbfgs":
        if sampler is not None or not functional.has_value:
            raise InvalidSpecError("the lbfgs inner solver needs a fixed batch and a functional with a value")

        def fun(current: ParamVector):
            maps = model.maps(current, X)
            value = _prox_value(functional, maps, pushed, tau)
            return value, _prox_gradient(model, current, X, functional, maps, pushed, tau)

        theta_next, inner_value = _lbfgs(theta, fun, inner_steps)
    else:
        batch = {"X": X, "base": pushed}

        def evaluate(current: ParamVector, index: int, need_grad: bool):
            if sampler is not None and index > 0 and need_grad:
                batch["X"] = as_point_cloud(sampler(X.shape[0], rng), model.input_dim, "sampled batch")
                batch["base"] = model.maps(theta, batch["X"])
            Xt, base = batch["X"], batch["base"]
            maps = model.maps(current, Xt)
            value = mean_sq_norm(maps - base) / (2.0 * tau)
            if functional.has_value:
                value += functional.value(maps)
            grad = _prox_gradient(model, current, Xt, functional, maps, base, tau) if need_grad else None
            return value, grad

        theta_next, inner_value = _descend(theta, evaluate, inner_steps, inner_optimizer, inner_lr,
                                           adam_params, keep_best=False)
    diag = StepDiagnostics(step=0,
                           surrogate_loss=functional.surrogate(pushed, field),
                           grad_norm=float(np.linalg.norm(gradient)),
                           map_displacement=_displacement(model, theta_next, X, pushed),
                           inexactness_delta=inexactness_delta(model, theta_next, X, functional, pushed, tau),
                           inner_objective=inner_value,
                           epsilon=field.epsilon)
    return theta_next, diag


def natural_direction_direct(model: MapModel,
                             theta: ParamVector,
                             X,
                             v,
                             regularization: float = DEFAULT_REGULARIZATION
                             ) -> FloatArray:
    """
    Natural-gradient direction of a descent field, by a direct solve of the normal equations.

    Solves (G + μI) δθ = (1/n) Σ_i J_iᵀ v_i with G = (1/n) Σ_i J_iᵀ J_i, J_i = ∇_θ T_θ(x_i) and
    μ = regularization · trace(G) / m. δθ minimizes (1/n) Σ_i ‖v_i − J_i δθ‖² (plus μ‖δθ‖²).

    Args:
        model (MapModel): The map family.
        theta (ParamVector): Where the Jacobians are taken.
        X (PointCloud): (n, d) source batch.
        v (FloatArray): (n, d) descent field at T_θ(x_i).
        regularization (float, optional): Relative Tikhonov weight, >= 0. Defaults to 1e-8.

    Returns:
        FloatArray: (m,) direction δθ.

    Raises:
        SingularSystemError: if the regularized Gram matrix is not positive definite.
    """
    if regularization < 0:
        raise ValueError(f"regularization must be >= 0, got {regularization}")
    theta = as_vector(theta, model.n_params, "theta")
    X = as_point_cloud(X, model.input_dim, "X")
    v = as_point_cloud(v, model.input_dim, "v")
    if v.shape != X.shape:
        raise ValueError(f"v has shape {v.shape} but X has shape {X.shape}")
    J = model.transport(theta, X, want_jacobians=True).param_jacobians
    n, m = X.shape[0], J.shape[2]
    gram = np.einsum("ndk,ndl->kl", J, J) / n
    rhs = np.einsum("ndk,nd->k", J, v) / n
    mu = regularization * float(np.trace(gram)) / m
    try:
        factor = linalg.cho_factor(gram + mu * np.eye(m), lower=True)
    except linalg.LinAlgError as e:
        raise SingularSystemError(f"Gram matrix is singular (m={m}, n={n}, mu={mu:.3e}): {e}") from e
    return linalg.cho_solve(factor, rhs)


def _natural_outer_step(model: MapModel, theta: ParamVector, X: PointCloud, functional,
                        config: SchemeConfig) -> Tuple[ParamVector, StepDiagnostics]:
    pushed, field, gradient = _step_start(model, theta, X, functional)
    direction = natural_direction_direct(model, theta, X, -field.vectors, config.regularization)
    theta_next = theta + config.tau * direction
    diag = StepDiagnostics(step=0,
                           surrogate_loss=functional.surrogate(pushed, field),
                           grad_norm=float(np.linalg.norm(gradient)),
                           map_displacement=_displacement(model, theta_next, X, pushed),
                           epsilon=field.epsilon)
    return theta_next, diag


def run_scheme(config: SchemeConfig,
               model: MapModel,
               theta0: ParamVector,
               sampler: Sampler,
               functional,
               rng: np.random.Generator,
               seed: int = 0
               ) -> RunRecord:
    """
    Run K outer steps of a configured scheme.

    A fresh batch of ``config.batch_n`` source points is drawn from ``rng`` at every outer step;
    the implicit scheme also draws one per inner step.

    Args:
        config (SchemeConfig): The method.
        model (MapModel): The map family.
        theta0 (ParamVector): Initial parameters θ₀.
        sampler (Callable): ``sampler(n, rng)`` drawing source points.
        functional: ``RelativeEntropy`` or ``PotentialEnergy``.
        rng (np.random.Generator): The run's own generator.
        seed (int, optional): Seed stored in the record. Defaults to 0.

    Returns:
        RunRecord: θ₀, θ_K and one StepDiagnostics per outer step; evaluation fields are left empty.

    Raises:
        SchemeAbortedError: if θ becomes non-finite, the surrogate exceeds 1e6 or a step fails
            numerically (non-finite values, Sinkhorn non-convergence, a collapsed cloud, a singular
            system). The error carries a partial record whose theta_final is the last good iterate.
    """
    theta0 = as_vector(theta0, model.n_params, "theta0")
    record = RunRecord(method=config.label, seed=seed, kind=config.kind,
                       theta_init=theta0.copy(), theta_final=theta0.copy(), config=config.to_dict())
    theta = theta0.copy()
    adam_state = AdamState.fresh(model.n_params)
    started = time.perf_counter()

    for k in range(config.outer_steps):
        X = as_point_cloud(sampler(config.batch_n, rng), model.input_dim, "sampled batch")
        try:
            if config.kind == "euclidean":
                theta_next, diag = euclidean_step(model, theta, X, functional, config.tau)
            elif config.kind == "adam":
                theta_next, adam_state, diag = _adam_outer_step(model, theta, adam_state, X, functional, config)
            elif config.kind == "explicit_constrained":
                theta_next, diag = explicit_constrained_step(model, theta, X, functional, config.tau,
                                                             config.inner_steps, config.inner_optimizer,
                                                             config.inner_lr, config.adam_params)
            elif config.kind == "implicit_constrained":
                theta_next, diag = implicit_constrained_step(model, theta, X, functional, config.tau,
                                                             config.inner_steps, config.inner_optimizer,
                                                             config.inner_lr, config.adam_params,
                                                             sampler=None if config.inner_optimizer == "lbfgs" else sampler,
                                                             rng=rng)
            else:
                theta_next, diag = _natural_outer_step(model, theta, X, functional, config)
        except ArithmeticError as e:
            _abort(record, theta, started, k, f"{type(e).__name__} in step {k}: {e}", e)

        diag.step = k
        if not np.all(np.isfinite(theta_next)):
            _abort(record, theta, started, k, f"parameters became non-finite in step {k}")
        if not diag.surrogate_loss <= SURROGATE_LIMIT:
            _abort(record, theta, started, k,
                   f"surrogate {diag.surrogate_loss:.3e} exceeds {SURROGATE_LIMIT:g} in step {k}")
        record.diagnostics.append(diag)
        theta = theta_next
        logger.debug("%s step %d: surrogate=%.6e grad_norm=%.3e displacement=%.3e delta=%s",
                     config.label, k, diag.surrogate_loss, diag.grad_norm, diag.map_displacement,
                     "n/a" if diag.inexactness_delta is None else f"{diag.inexactness_delta:.3e}")

    record.theta_final = theta
    record.wall_time_seconds = time.perf_counter() - started
    return record


def _abort(record: RunRecord, theta: ParamVector, started: float, step: int, message: str,
           cause: Optional[Exception] = None):
    record.theta_final = theta.copy()
    record.wall_time_seconds = time.perf_counter() - started
    record.status = "failed"
    record.error = message
    logger.warning("%s (seed %d) aborted: %s", record.method, record.seed, message)
    raise SchemeAbortedError(f"{record.method}: {message}", record=record, step_index=step) from cause
