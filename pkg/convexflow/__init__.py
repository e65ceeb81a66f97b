# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Optimal transport maps as gradients of input convex neural networks, estimated by
time-discretized constrained gradient flows.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, ConvexFlowError, DegenerateCloudError, InnerDivergenceError,  # noqa
                     InvalidSpecError, NonFiniteError, NotSPDError, SchemeAbortedError, ShapeError, SingularSystemError)
from .icnn import (IcnnSpec, MapBatchEval, init_params, loss_param_gradient, near_identity_params,  # noqa
                   param_count, potential, potential_batch, transport_batch)
from .maps import IcnnModel, LinearMapModel, MapModel  # noqa
from .sinkhorn import SinkhornPotentials, median_sq_distance, score_estimate, sinkhorn_self  # noqa
from .divergences import (GradField, PotentialEnergy, RelativeEntropy, TargetPotential,  # noqa
                          entropy_grad_field, mmd_energy, relative_entropy_gaussian)
from .schemes import (AdamState, SchemeConfig, adam_step, euclidean_step, explicit_constrained_step,  # noqa
                      implicit_constrained_step, natural_direction_direct, prox_gradient, prox_objective, run_scheme)
from .oracles import AffineMap, bures_w2, finite_diff_gradient, gaussian_ot_map, gaussian_score, ot_map_1d  # noqa
from .records import RunRecord, StepDiagnostics, read_record, write_record  # noqa
from .experiment import (ExperimentConfig, MixtureComponent, comparison_gate, evaluate_final,  # noqa
                         evaluate_record, run_single, run_suite, sample_mixture)
from .rng import make_generator  # noqa
