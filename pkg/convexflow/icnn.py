# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Input convex neural network potential φ_θ and its transport map T_θ = ∇_x φ_θ.

Architecture for hidden widths (h_1, ..., h_L) and input dimension d::

    z_1 = A_1 x + b_1
    z_l = W_l⁺ a_{l-1} + A_l x + b_l        (l = 2..L)
    a_l = σ(z_l)
    φ(x) = w⁺ · a_L + b_out

with W_l⁺ = p(W̃_l) and w⁺ = p(w̃), where p is the positivity map. All derivatives are written
out by hand for this wiring: the input gradient by one backward pass, and the mixed derivative
∇_θ ∇_x φ by differentiating that backward pass along a direction in x.

Flat parameter layout: A_1, b_1, then for every further layer W̃_l, A_l, b_l, then w̃, b_out
(matrices in row-major order).
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import InvalidSpecError, NonFiniteError
from .helpers import as_point_cloud, as_vector, check_same_shape
from .typedefs import ActivationType, FloatArray, ParamVector, PointCloud, PositivityMapType

# raw value whose positivity map underflows to exactly 0.0 (softplus and exp)
ZERO_WEIGHT_RAW = -1000.0


@dataclass(frozen=True)
class IcnnSpec:
    """
    Architecture of the convex potential φ_θ.

    Args:
        input_dim (int): Dimension d of the input space.
        hidden_widths (Sequence[int]): Widths of the hidden layers. Defaults to (20, 20).
        activation (ActivationType): Convex nondecreasing C² activation. Defaults to "softplus".
        positivity_map (PositivityMapType): Map from unconstrained raw weights to the
            nonnegative hidden-to-hidden and output weights. Defaults to "softplus".
    """
    input_dim: int
    hidden_widths: Tuple[int, ...] = (20, 20)
    activation: ActivationType = "softplus"
    positivity_map: PositivityMapType = "softplus"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise InvalidSpecError(f"input_dim must be a positive integer, got {self.input_dim}")
        if len(self.hidden_widths) == 0:
            raise InvalidSpecError("at least one hidden layer is required")
        if any(w < 1 for w in self.hidden_widths):
            raise InvalidSpecError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.activation not in ("softplus", "softplus_squared"):
            raise InvalidSpecError(f"unknown activation '{self.activation}'")
        if self.positivity_map not in ("softplus", "exp"):
            raise InvalidSpecError(f"unknown positivity map '{self.positivity_map}'")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
            "positivity_map": self.positivity_map,
        }


@dataclass
class MapBatchEval:
    """
    Potential values, transport map values and optionally parameter Jacobians on a batch.

    Attributes:
        potentials (FloatArray): (n,) values φ_θ(x_i).
        maps (FloatArray): (n, d) values T_θ(x_i) = ∇_x φ_θ(x_i).
        param_jacobians (FloatArray, optional): (n, d, m) stacked ∇_θ T_θ(x_i).
    """
    potentials: FloatArray
    maps: FloatArray
    param_jacobians: Optional[FloatArray] = None


@dataclass
class IcnnWeights:
    """
    Parameter vector split into layer arrays. Constrained weights are kept both raw and mapped.
    """
    input_weights: List[FloatArray]           # A_l, (h_l, d)
    biases: List[FloatArray]                  # b_l, (h_l,)
    hidden_raw: List[Optional[FloatArray]]    # W̃_l, (h_l, h_{l-1}); None for the first layer
    hidden_pos: List[Optional[FloatArray]]    # W_l⁺
    hidden_dpos: List[Optional[FloatArray]]   # p'(W̃_l)
    output_raw: FloatArray                    # w̃, (h_L,)
    output_pos: FloatArray
    output_dpos: FloatArray
    output_bias: float


@dataclass
class _ForwardCache:
    acts: List[FloatArray] = field(default_factory=list)
    slopes: List[FloatArray] = field(default_factory=list)      # σ'(z_l)
    curvatures: List[FloatArray] = field(default_factory=list)  # σ''(z_l)
    grads: List[FloatArray] = field(default_factory=list)       # ∂φ/∂z_l
    potentials: Optional[FloatArray] = None
    maps: Optional[FloatArray] = None


def softplus(z: FloatArray) -> FloatArray:
    # log(1 + e^z) without overflow
    return np.logaddexp(0.0, z)


def inverse_softplus(w: FloatArray) -> FloatArray:
    '''
    Inverse of softplus for w > 0, i.e. log(e^w - 1), in a form that is stable for small and large w.
    '''
    w = np.asarray(w, dtype=np.float64)
    return w + np.log(-np.expm1(-w))


def _activation(name: ActivationType, z: FloatArray) -> Tuple[FloatArray, FloatArray, FloatArray]:
    sig = expit(z)
    dsig = sig * (1.0 - sig)
    if name == "softplus":
        return softplus(z), sig, dsig
    sp = softplus(z)
    return sp * sp, 2.0 * sp * sig, 2.0 * (sig * sig + sp * dsig)


def _positivity(name: PositivityMapType, raw: FloatArray) -> Tuple[FloatArray, FloatArray]:
    if name == "softplus":
        return softplus(raw), expit(raw)
    with np.errstate(over="ignore"):
        value = np.exp(raw)
    return value, value


def _inverse_positivity(name: PositivityMapType, w: FloatArray) -> FloatArray:
    if name == "softplus":
        return inverse_softplus(w)
    return np.log(w)


def param_count(spec: IcnnSpec) -> int:
    """
    Number m of real parameters of the network.

    Args:
        spec (IcnnSpec): The architecture.

    Returns:
        int: The flat parameter length, e.g. 541 for d=2 and widths (20, 20).
    """
    d = spec.input_dim
    widths = spec.hidden_widths
    count = widths[0] * d + widths[0]
    for prev, width in zip(widths[:-1], widths[1:]):
        count += width * prev + width * d + width
    return count + widths[-1] + 1


def unpack_params(spec: IcnnSpec, theta: ParamVector) -> IcnnWeights:
    """
    Split a flat parameter vector into layer arrays and apply the positivity map.

    Raises:
        ShapeError: if the length of theta does not match the architecture.
    """
    theta = as_vector(theta, param_count(spec), "theta")
    d = spec.input_dim
    offset = 0

    def take(shape: Tuple[int, ...]) -> FloatArray:
        nonlocal offset
        size = int(np.prod(shape))
        chunk = theta[offset:offset + size].reshape(shape)
        offset += size
        return chunk

    input_weights, biases = [], []
    hidden_raw: List[Optional[FloatArray]] = []
    hidden_pos: List[Optional[FloatArray]] = []
    hidden_dpos: List[Optional[FloatArray]] = []
    prev = None
    for width in spec.hidden_widths:
        if prev is None:
            hidden_raw.append(None)
            hidden_pos.append(None)
            hidden_dpos.append(None)
        else:
            raw = take((width, prev))
            pos, dpos = _positivity(spec.positivity_map, raw)
            hidden_raw.append(raw)
            hidden_pos.append(pos)
            hidden_dpos.append(dpos)
        input_weights.append(take((width, d)))
        biases.append(take((width,)))
        prev = width
    output_raw = take((spec.hidden_widths[-1],))
    output_pos, output_dpos = _positivity(spec.positivity_map, output_raw)
    output_bias = float(take((1,))[0])
    return IcnnWeights(input_weights, biases, hidden_raw, hidden_pos, hidden_dpos,
                       output_raw, output_pos, output_dpos, output_bias)


def pack_params(spec: IcnnSpec,
                input_weights: Sequence[FloatArray],
                biases: Sequence[FloatArray],
                hidden_raw: Sequence[Optional[FloatArray]],
                output_raw: FloatArray,
                output_bias: float) -> ParamVector:
    '''
    Inverse of unpack_params for raw (unconstrained) layer arrays. hidden_raw[0] is ignored.
    '''
    chunks = []
    for layer, width in enumerate(spec.hidden_widths):
        if layer > 0:
            chunks.append(np.asarray(hidden_raw[layer], dtype=np.float64).reshape(-1))
        chunks.append(np.asarray(input_weights[layer], dtype=np.float64).reshape(width * spec.input_dim))
        chunks.append(np.asarray(biases[layer], dtype=np.float64).reshape(width))
    chunks.append(np.asarray(output_raw, dtype=np.float64).reshape(spec.hidden_widths[-1]))
    chunks.append(np.array([output_bias], dtype=np.float64))
    theta = np.concatenate(chunks)
    if theta.shape[0] != param_count(spec):
        raise InvalidSpecError("layer arrays do not match the architecture")
    return theta


def init_params(spec: IcnnSpec, rng: np.random.Generator) -> ParamVector:
    """
    Draw an initial parameter vector θ_0.

    Dense weights and biases are centered Gaussians with standard deviation 1/sqrt(fan_in).
    Constrained weights are set so that their mapped value is uniform in
    [0.5/fan_in, 1.5/fan_in], i.e. small and strictly positive.

    Args:
        spec (IcnnSpec): The architecture.
        rng (numpy.random.Generator): Seeded generator; the same seed yields the same θ_0.

    Returns:
        ParamVector: The flat parameter vector.
    """
    d = spec.input_dim
    input_weights, biases, hidden_raw = [], [], []
    prev = None
    for width in spec.hidden_widths:
        if prev is None:
            hidden_raw.append(None)
            fan_in = d
        else:
            pos = rng.uniform(0.5, 1.5, size=(width, prev)) / prev
            hidden_raw.append(_inverse_positivity(spec.positivity_map, pos))
            fan_in = d + prev
        input_weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(width, d)))
        biases.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=width))
        prev = width
    last = spec.hidden_widths[-1]
    output_raw = _inverse_positivity(spec.positivity_map, rng.uniform(0.5, 1.5, size=last) / last)
    return pack_params(spec, input_weights, biases, hidden_raw, output_raw, 0.0)


def near_identity_params(spec: IcnnSpec, scale: float = 1000.0) -> ParamVector:
    """
    Parameters whose map is the identity up to a cubic error.

    The first 2d units of the first layer compute softplus(±x_j / scale), later layers pass them
    through shifted far into the linear regime of softplus, and the output weighs them by
    2·scale², so that T_j(x) = 2·scale·tanh(x_j / (2·scale)) = x_j - x_j³/(12·scale²) + ...
    All other weights are zero.

    Args:
        spec (IcnnSpec): Architecture with softplus activation and all widths >= 2d.
        scale (float, optional): Larger values give a better identity on a wider range.

    Returns:
        ParamVector: The flat parameter vector.
    """
    d = spec.input_dim
    if spec.activation != "softplus":
        raise InvalidSpecError("near identity parameters need the softplus activation")
    if min(spec.hidden_widths) < 2 * d:
        raise InvalidSpecError(f"near identity parameters need hidden widths >= {2 * d}")
    shift = 40.0  # softplus(z) = z up to e^-40 beyond this
    one_raw = float(_inverse_positivity(spec.positivity_map, np.array(1.0)))
    input_weights, biases, hidden_raw = [], [], []
    prev = None
    for width in spec.hidden_widths:
        a = np.zeros((width, d))
        b = np.zeros(width)
        if prev is None:
            hidden_raw.append(None)
            for j in range(d):
                a[2 * j, j] = 1.0 / scale
                a[2 * j + 1, j] = -1.0 / scale
        else:
            raw = np.full((width, prev), ZERO_WEIGHT_RAW)
            for k in range(2 * d):
                raw[k, k] = one_raw
                b[k] = shift
            hidden_raw.append(raw)
        input_weights.append(a)
        biases.append(b)
        prev = width
    output_raw = np.full(spec.hidden_widths[-1], ZERO_WEIGHT_RAW)
    output_raw[:2 * d] = _inverse_positivity(spec.positivity_map, np.array(2.0 * scale * scale))
    return pack_params(spec, input_weights, biases, hidden_raw, output_raw, 0.0)


def _forward(spec: IcnnSpec, weights: IcnnWeights, X: PointCloud) -> _ForwardCache:
    cache = _ForwardCache()
    prev_act = None
    for layer in range(len(spec.hidden_widths)):
        z = X @ weights.input_weights[layer].T + weights.biases[layer]
        if prev_act is not None:
            z = z + prev_act @ weights.hidden_pos[layer].T
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"non-finite pre-activation in hidden layer {layer + 1}")
        act, slope, curvature = _activation(spec.activation, z)
        if not np.all(np.isfinite(act)):
            raise NonFiniteError(f"non-finite activation in hidden layer {layer + 1}")
        cache.acts.append(act)
        cache.slopes.append(slope)
        cache.curvatures.append(curvature)
        prev_act = act
    cache.potentials = prev_act @ weights.output_pos + weights.output_bias
    if not np.all(np.isfinite(cache.potentials)):
        raise NonFiniteError("non-finite value in output layer")

    # backward pass for ∂φ/∂z_l and ∇_x φ
    n_layers = len(spec.hidden_widths)
    grads: List[FloatArray] = [np.empty(0)] * n_layers
    grads[-1] = weights.output_pos * cache.slopes[-1]
    for layer in range(n_layers - 1, 0, -1):
        grads[layer - 1] = (grads[layer] @ weights.hidden_pos[layer]) * cache.slopes[layer - 1]
    cache.grads = grads
    maps = np.zeros_like(X)
    for layer in range(n_layers):
        maps = maps + grads[layer] @ weights.input_weights[layer]
    if not np.all(np.isfinite(maps)):
        raise NonFiniteError("non-finite transport map value")
    cache.maps = maps
    return cache


def _directional(spec: IcnnSpec, weights: IcnnWeights, cache: _ForwardCache,
                 U: FloatArray) -> Tuple[List[FloatArray], List[FloatArray]]:
    """
    Derivatives of the activations and of ∂φ/∂z_l along the per-sample input directions U.
    """
    n_layers = len(spec.hidden_widths)
    act_dots: List[FloatArray] = []
    slope_dots: List[FloatArray] = []
    for layer in range(n_layers):
        z_dot = U @ weights.input_weights[layer].T
        if layer > 0:
            z_dot = z_dot + act_dots[layer - 1] @ weights.hidden_pos[layer].T
        act_dots.append(cache.slopes[layer] * z_dot)
        slope_dots.append(cache.curvatures[layer] * z_dot)

    grad_dots: List[FloatArray] = [np.empty(0)] * n_layers
    grad_dots[-1] = weights.output_pos * slope_dots[-1]
    for layer in range(n_layers - 1, 0, -1):
        w = weights.hidden_pos[layer]
        grad_dots[layer - 1] = ((grad_dots[layer] @ w) * cache.slopes[layer - 1]
                                + (cache.grads[layer] @ w) * slope_dots[layer - 1])
    return act_dots, grad_dots


def _mixed_per_sample(spec: IcnnSpec, weights: IcnnWeights, cache: _ForwardCache,
                      X: PointCloud, U: FloatArray) -> FloatArray:
    '''
    Per-sample ∇_θ ⟨u_i, T_θ(x_i)⟩, shape (n, m).
    '''
    act_dots, grad_dots = _directional(spec, weights, cache, U)
    n = X.shape[0]
    chunks = []
    for layer in range(len(spec.hidden_widths)):
        g, g_dot = cache.grads[layer], grad_dots[layer]
        if layer > 0:
            outer = (g_dot[:, :, None] * cache.acts[layer - 1][:, None, :]
                     + g[:, :, None] * act_dots[layer - 1][:, None, :])
            chunks.append((outer * weights.hidden_dpos[layer]).reshape(n, -1))
        chunks.append((g_dot[:, :, None] * X[:, None, :] + g[:, :, None] * U[:, None, :]).reshape(n, -1))
        chunks.append(g_dot)
    chunks.append(act_dots[-1] * weights.output_dpos)
    chunks.append(np.zeros((n, 1)))
    return np.concatenate(chunks, axis=1)


def _mixed_mean(spec: IcnnSpec, weights: IcnnWeights, cache: _ForwardCache,
                X: PointCloud, U: FloatArray) -> FloatArray:
    '''
    (1/n) Σ_i ∇_θ ⟨u_i, T_θ(x_i)⟩ without materializing the per-sample rows.
    '''
    act_dots, grad_dots = _directional(spec, weights, cache, U)
    n = X.shape[0]
    chunks = []
    for layer in range(len(spec.hidden_widths)):
        g, g_dot = cache.grads[layer], grad_dots[layer]
        if layer > 0:
            outer = g_dot.T @ cache.acts[layer - 1] + g.T @ act_dots[layer - 1]
            chunks.append((outer * weights.hidden_dpos[layer]).reshape(-1) / n)
        chunks.append((g_dot.T @ X + g.T @ U).reshape(-1) / n)
        chunks.append(np.sum(g_dot, axis=0) / n)
    chunks.append(np.sum(act_dots[-1], axis=0) * weights.output_dpos / n)
    chunks.append(np.zeros(1))
    return np.concatenate(chunks)


def potential(spec: IcnnSpec, theta: ParamVector, x) -> float:
    """
    Evaluate the convex potential φ_θ at a single point.

    Args:
        spec (IcnnSpec): The architecture.
        theta (ParamVector): The parameters.
        x (array_like): A point of dimension d.

    Returns:
        float: φ_θ(x).
    """
    point = as_point_cloud(np.reshape(np.asarray(x, dtype=np.float64), (1, -1)), spec.input_dim, "x")
    cache = _forward(spec, unpack_params(spec, theta), point)
    return float(cache.potentials[0])


def potential_batch(spec: IcnnSpec, theta: ParamVector, X) -> FloatArray:
    X = as_point_cloud(X, spec.input_dim, "X")
    return _forward(spec, unpack_params(spec, theta), X).potentials


def transport_batch(spec: IcnnSpec, theta: ParamVector, X, want_jacobians: bool = False) -> MapBatchEval:
    """
    Evaluate φ_θ and T_θ = ∇_x φ_θ on a batch, optionally with the parameter Jacobians of T_θ.

    Args:
        spec (IcnnSpec): The architecture.
        theta (ParamVector): The parameters.
        X (PointCloud): (n, d) batch, n >= 1.
        want_jacobians (bool, optional): Also return ∇_θ T_θ(x_i) as an (n, d, m) array.
            Defaults to False.

    Returns:
        MapBatchEval: potentials, maps and optionally param_jacobians.

    Raises:
        NonFiniteError: if an intermediate value is not finite; the message names the layer.
    """
    X = as_point_cloud(X, spec.input_dim, "X")
    weights = unpack_params(spec, theta)
    cache = _forward(spec, weights, X)
    jacobians = None
    if want_jacobians:
        n, d = X.shape
        rows = []
        for j in range(d):
            U = np.zeros((n, d))
            U[:, j] = 1.0
            rows.append(_mixed_per_sample(spec, weights, cache, X, U))
        jacobians = np.stack(rows, axis=1)
    return MapBatchEval(potentials=cache.potentials, maps=cache.maps, param_jacobians=jacobians)


def loss_param_gradient(spec: IcnnSpec, theta: ParamVector, X, cotangents) -> FloatArray:
    """
    Gradient in θ of the empirical loss (1/n) Σ_i ⟨c_i, T_θ(x_i)⟩ for fixed cotangents c_i.

    This is the chain-rule factor shared by every scheme: the cotangent of sample i is the
    derivative of the scheme's loss with respect to T_θ(x_i).

    Args:
        spec (IcnnSpec): The architecture.
        theta (ParamVector): The parameters.
        X (PointCloud): (n, d) batch.
        cotangents (FloatArray): (n, d) per-sample vectors c_i.

    Returns:
        FloatArray: (m,) vector (1/n) Σ_i (∇_θ T_θ(x_i))ᵀ c_i.
    """
    X = as_point_cloud(X, spec.input_dim, "X")
    U = as_point_cloud(cotangents, spec.input_dim, "cotangents")
    check_same_shape(X, U, ("X", "cotangents"))
    weights = unpack_params(spec, theta)
    cache = _forward(spec, weights, X)
    return _mixed_mean(spec, weights, cache, X, U)
