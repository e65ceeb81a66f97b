# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

from typing import Any, Optional


class ConvexFlowError(Exception):
    """
    Base class of all errors raised by convexflow.
    """


class ShapeError(ConvexFlowError, ValueError):
    """
    Raised on dimension mismatches and empty inputs.
    """


class InvalidSpecError(ConvexFlowError, ValueError):
    """
    Raised for invalid network architectures, scheme configs and experiment configs.
    """


class NotSPDError(ConvexFlowError, ValueError):
    """
    Raised when a covariance matrix is not symmetric positive definite.
    """


class NonFiniteError(ConvexFlowError, ArithmeticError):
    """
    Raised when an input or an intermediate quantity is not finite.
    """


class InnerDivergenceError(NonFiniteError):
    """
    Raised when the objective of an inner minimization becomes non-finite.

    Attributes:
        iterate_index (int): index of the inner iterate at which the objective diverged.
    """

    def __init__(self, message: str, iterate_index: int):
        super().__init__(message)
        self.iterate_index = iterate_index


class DegenerateCloudError(ConvexFlowError, ArithmeticError):
    """
    Raised when all points of a cloud coincide, so that no distance scale exists.
    """


class ConvergenceError(ConvexFlowError, ArithmeticError):
    """
    Raised when a fixed-point iteration does not reach its tolerance.

    Attributes:
        final_residual (float): sup-norm residual after the last iteration.
        iterations (int): number of iterations performed.
    """

    def __init__(self, message: str, final_residual: float, iterations: int):
        super().__init__(message)
        self.final_residual = final_residual
        self.iterations = iterations


class SingularSystemError(ConvexFlowError, ArithmeticError):
    """
    Raised when a Gram matrix cannot be factored even after regularization.
    """


class SchemeAbortedError(ConvexFlowError, ArithmeticError):
    """
    Raised when an outer descent loop is aborted by the divergence guard.

    Attributes:
        record: the partial run record; its ``theta_final`` is the last good iterate.
        step_index (int): outer step at which the guard tripped.
    """

    def __init__(self, message: str, record: Optional[Any] = None, step_index: int = -1):
        super().__init__(message)
        self.record = record
        self.step_index = step_index
