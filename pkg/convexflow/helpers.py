# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import NonFiniteError, ShapeError
from .typedefs import FloatArray


def as_point_cloud(points, dim: Optional[int] = None, name: str = "points", min_points: int = 1) -> FloatArray:
    """
    Convert the argument into a float64 (n, d) array and validate it.

    Args:
        points (array_like): The sample locations. A 1D array is read as n points in R^1
            when ``dim`` is 1, otherwise as a single point.
        dim (int, optional): Expected dimension d. Not checked if None.
        name (str, optional): Name used in error messages.
        min_points (int, optional): Minimum number of rows. Defaults to 1.

    Returns:
        FloatArray: The validated (n, d) array.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a 2D array of shape (n, d), got shape {arr.shape}")
    if arr.shape[0] < min_points:
        raise ShapeError(f"{name} needs at least {min_points} point(s), got {arr.shape[0]}")
    if dim is not None and arr.shape[1] != dim:
        raise ShapeError(f"{name} has dimension {arr.shape[1]}, expected {dim}")
    check_finite(arr, name)
    return arr


def as_vector(values, size: Optional[int] = None, name: str = "vector") -> FloatArray:
    '''
    Convert the argument into a finite float64 1D array, optionally checking its length.
    '''
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ShapeError(f"{name} has length {arr.shape[0]}, expected {size}")
    check_finite(arr, name)
    return arr


def as_matrix(values, size: int, name: str = "matrix") -> FloatArray:
    '''
    Convert the argument into a finite float64 (size, size) array.
    '''
    arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if arr.shape != (size, size):
        raise ShapeError(f"{name} must have shape ({size}, {size}), got {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: FloatArray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")


def check_same_shape(a: FloatArray, b: FloatArray, names: Tuple[str, str]) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{names[0]} has shape {a.shape} but {names[1]} has shape {b.shape}")


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def mean_sq_norm(field: FloatArray) -> float:
    '''
    Empirical L2 norm squared of a vector field sampled at n points: (1/n) sum_i |v_i|^2.
    '''
    return float(np.mean(np.sum(field * field, axis=1)))


def l2_norm(field: FloatArray) -> float:
    return float(np.sqrt(mean_sq_norm(field)))


def summary_stats(values: Sequence[float]) -> Tuple[float, float, float, float]:
    """
    Mean, standard deviation, min and max of a list of values.

    The standard deviation is the sample one (ddof=1) if there are at least two values, 0 otherwise.
    Returns NaN for every entry of an empty list.
    """
    if len(values) == 0:
        nan = float("nan")
        return (nan, nan, nan, nan)
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size >= 2 else 0.0
    return (float(np.mean(arr)), std, float(np.min(arr)), float(np.max(arr)))
