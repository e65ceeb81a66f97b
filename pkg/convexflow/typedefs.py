# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

from typing import Literal

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
ParamVector = FloatArray       # flat (m,) parameter vector θ
PointCloud = FloatArray        # (n, d) sample locations, uniform weights
ActivationType = Literal["softplus", "softplus_squared"]
PositivityMapType = Literal["softplus", "exp"]
SchemeKind = Literal["euclidean", "adam", "explicit_constrained", "implicit_constrained", "natural_direct"]
InnerOptimizerType = Literal["adam", "gd", "lbfgs"]
TargetType = Literal["standard_gaussian"]
