# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Experiment driver: the source mixture, the four compared methods, seed sweeps, evaluation
with large clouds and the files a suite leaves behind.

Random streams of one seed::

    (seed, "init")                θ₀, shared by every method
    (seed, "batches", label)      training batches of one method
    (seed, "eval")                evaluation clouds, shared by every method
"""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .checks import CheckResult
from .divergences import DEFAULT_EPS_RULE, RelativeEntropy, TargetPotential, mmd_energy
from .errors import ConvexFlowError, InvalidSpecError, SchemeAbortedError
from .helpers import as_vector, l2_norm
from .icnn import IcnnSpec
from .maps import IcnnModel
from .oracles import gaussian_ot_map
from .records import RunRecord, summarize, write_record, write_summary
from .rng import make_generator
from .schemes import SchemeConfig, run_scheme
from .typedefs import FloatArray, ParamVector, PointCloud, TargetType

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "CONVEXFLOW_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "convexflow_runs"
SUMMARY_FILENAME = "summary.csv"
# labels of the default methods, in the order (a) implicit, (b) explicit, (c) euclidean, (d) adam
COMPARISON_LABELS = ("implicit", "explicit", "euclidean", "adam")


@dataclass(frozen=True)
class MixtureComponent:
    """
    Isotropic Gaussian component N(mean, std² I) of the source mixture.
    """
    weight: float
    mean: Tuple[float, ...]
    std: float

    def to_dict(self) -> Dict[str, Any]:
        return {"weight": self.weight, "mean": list(self.mean), "std": self.std}

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'MixtureComponent':
        if set(data) != {"weight", "mean", "std"}:
            raise InvalidSpecError(f"mixture components need exactly the keys weight, mean, std, got {sorted(data)}")
        return MixtureComponent(float(data["weight"]), tuple(float(v) for v in data["mean"]), float(data["std"]))


def default_mixture(a: float = 2.0, std: float = 0.4) -> List[MixtureComponent]:
    '''
    Four equal-weight modes at (±a, ±a).
    '''
    return [MixtureComponent(0.25, (sx * a, sy * a), std) for sx in (1.0, -1.0) for sy in (1.0, -1.0)]


def default_methods(batch_n: int = 100) -> List[SchemeConfig]:
    return [
        SchemeConfig("implicit", "implicit_constrained", tau=0.4, outer_steps=10, inner_steps=100, batch_n=batch_n),
        SchemeConfig("explicit", "explicit_constrained", tau=0.4, outer_steps=10, inner_steps=100, batch_n=batch_n),
        SchemeConfig("euclidean", "euclidean", tau=0.001, outer_steps=3000, batch_n=batch_n),
        SchemeConfig("adam", "adam", tau=0.05, outer_steps=1000, batch_n=batch_n),
    ]


@dataclass
class ExperimentConfig:
    """
    A seed sweep over several methods.

    Attributes:
        dim (int): Dimension d. Defaults to 2.
        mixture (List[MixtureComponent]): Source ρ₀. Defaults to four modes at (±2, ±2), std 0.4.
        target (TargetType): Target γ. Only ``standard_gaussian`` (V(x) = ‖x‖²/2).
        n_train (int): Batch size n of the training batches. Defaults to 100.
        n_eval (int): Size of the evaluation clouds. Defaults to 10 000.
        methods (List[SchemeConfig]): The compared methods. Defaults to implicit, explicit,
            euclidean and adam with the reference step sizes.
        seeds (List[int]): Seeds shared by all methods. Defaults to 0..99.
        eps_rule (float): ε as a fraction of the median squared distance. Defaults to 0.05.
        output_dir (str, optional): Where records go when no directory is given on the command line.
    """
    dim: int = 2
    mixture: List[MixtureComponent] = field(default_factory=default_mixture)
    target: TargetType = "standard_gaussian"
    n_train: int = 100
    n_eval: int = 10_000
    methods: Optional[List[SchemeConfig]] = None
    seeds: List[int] = field(default_factory=lambda: list(range(100)))
    eps_rule: float = DEFAULT_EPS_RULE
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.methods is None:
            self.methods = default_methods(self.n_train)
        if self.dim < 1:
            raise InvalidSpecError(f"dim must be positive, got {self.dim}")
        if self.target != "standard_gaussian":
            raise InvalidSpecError(f"unknown target {self.target!r}")
        if self.n_train < 2 or self.n_eval < 2:
            raise InvalidSpecError("n_train and n_eval must be >= 2")
        if not self.eps_rule > 0:
            raise InvalidSpecError(f"eps_rule must be positive, got {self.eps_rule}")
        if not self.mixture:
            raise InvalidSpecError("the mixture needs at least one component")
        for comp in self.mixture:
            if len(comp.mean) != self.dim:
                raise InvalidSpecError(f"mixture mean {comp.mean} does not have dimension {self.dim}")
            if not comp.weight > 0:
                raise InvalidSpecError(f"mixture weights must be positive, got {comp.weight}")
            if comp.std < 0:
                raise InvalidSpecError(f"mixture std must be >= 0, got {comp.std}")
        if abs(sum(comp.weight for comp in self.mixture) - 1.0) > 1e-9:
            raise InvalidSpecError("mixture weights must sum to 1")
        if any(seed < 0 for seed in self.seeds) or len(set(self.seeds)) != len(self.seeds):
            raise InvalidSpecError("seeds must be distinct non-negative integers")
        labels = [method.label for method in self.methods]
        if len(set(labels)) != len(labels):
            raise InvalidSpecError(f"method labels must be unique, got {labels}")

    def method(self, label: str) -> SchemeConfig:
        for method in self.methods:
            if method.label == label:
                return method
        raise InvalidSpecError(f"no method {label!r}, configured: {[m.label for m in self.methods]}")

    def icnn_spec(self) -> IcnnSpec:
        return IcnnSpec(self.dim)

    def functional(self) -> RelativeEntropy:
        return RelativeEntropy(TargetPotential.standard_gaussian(), self.eps_rule)

    def gaussian_source(self) -> Optional[Tuple[FloatArray, FloatArray]]:
        '''
        (mean, cov) of ρ₀ if it is a single non-degenerate Gaussian, else None.
        '''
        if len(self.mixture) != 1 or self.mixture[0].std <= 0:
            return None
        comp = self.mixture[0]
        return np.asarray(comp.mean, dtype=np.float64), comp.std ** 2 * np.eye(self.dim)

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "mixture": [comp.to_dict() for comp in self.mixture],
            "target": self.target,
            "n_train": self.n_train,
            "n_eval": self.n_eval,
            "methods": [method.to_dict() for method in self.methods],
            "seeds": list(self.seeds),
            "eps_rule": self.eps_rule,
            "output_dir": self.output_dir,
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'ExperimentConfig':
        if not isinstance(data, dict):
            raise InvalidSpecError("an experiment config must be a JSON object")
        known = set(ExperimentConfig.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidSpecError(f"unknown experiment config keys: {sorted(unknown)}")
        values = dict(data)
        n_train = int(values.get("n_train", 100))
        if "mixture" in values:
            values["mixture"] = [MixtureComponent.from_dict(comp) for comp in values["mixture"]]
        if "methods" in values:
            values["methods"] = [SchemeConfig.from_dict(method, batch_n=n_train) for method in values["methods"]]
        if "seeds" in values:
            values["seeds"] = [int(seed) for seed in values["seeds"]]
        return ExperimentConfig(**values)

    @staticmethod
    def from_json(path: Union[str, Path]) -> 'ExperimentConfig':
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise InvalidSpecError(f"{path}: not valid JSON: {e}") from e
        return ExperimentConfig.from_dict(data)


def resolve_output_dir(out: Optional[str], config: Optional[ExperimentConfig] = None) -> Path:
    '''
    Output directory: explicit argument, then the config, then $CONVEXFLOW_OUTPUT_DIR, then ./convexflow_runs.
    '''
    if out:
        return Path(out)
    if config is not None and config.output_dir:
        return Path(config.output_dir)
    return Path(os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)


def sample_mixture(config: ExperimentConfig, n: int, rng: np.random.Generator) -> PointCloud:
    """
    Draw n points from the source mixture: a component by weight, then its isotropic Gaussian.

    Args:
        config (ExperimentConfig): Holds the mixture.
        n (int): Number of points, >= 1.
        rng (np.random.Generator): Random source.

    Returns:
        PointCloud: (n, d) sample.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    weights = np.array([comp.weight for comp in config.mixture])
    means = np.array([comp.mean for comp in config.mixture], dtype=np.float64)
    stds = np.array([comp.std for comp in config.mixture])
    labels = rng.choice(len(config.mixture), size=n, p=weights / weights.sum())
    noise = rng.standard_normal((n, config.dim))
    return means[labels] + stds[labels, None] * noise


def sample_target(config: ExperimentConfig, n: int, rng: np.random.Generator) -> PointCloud:
    return rng.standard_normal((n, config.dim))


def initial_params(config: ExperimentConfig, seed: int) -> ParamVector:
    return IcnnModel(config.icnn_spec()).init_params(make_generator(seed, "init"))


def evaluate_final(theta: ParamVector, config: ExperimentConfig, rng: np.random.Generator
                   ) -> Tuple[float, Optional[float]]:
    """
    MMD between T_θ∗ρ₀ and γ on fresh clouds of n_eval points, and the map error when the
    source is Gaussian.

    Args:
        theta (ParamVector): Trained parameters.
        config (ExperimentConfig): The experiment.
        rng (np.random.Generator): Draws X ~ ρ₀ first, then Y ~ γ.

    Returns:
        Tuple[float, Optional[float]]: The energy MMD and the L²(ρ₀) distance to the closed-form
        map, or None if ρ₀ is not a single Gaussian.
    """
    model = IcnnModel(config.icnn_spec())
    theta = as_vector(theta, model.n_params, "theta")
    X = sample_mixture(config, config.n_eval, rng)
    Y = sample_target(config, config.n_eval, rng)
    pushed = model.maps(theta, X)
    mmd = mmd_energy(pushed, Y)
    map_error = None
    source = config.gaussian_source()
    if source is not None:
        oracle = gaussian_ot_map(source[0], source[1], np.zeros(config.dim), np.eye(config.dim))
        map_error = l2_norm(pushed - oracle(X))
    return mmd, map_error


def run_single(config: ExperimentConfig, label: str, seed: int) -> RunRecord:
    """
    Train one method on one seed and evaluate it.

    Raises:
        SchemeAbortedError: from the divergence guard or a numerical failure during training.
    """
    method = config.method(label)
    model = IcnnModel(config.icnn_spec())
    theta0 = initial_params(config, seed)

    def sampler(n: int, rng: np.random.Generator) -> PointCloud:
        return sample_mixture(config, n, rng)

    record = run_scheme(method, model, theta0, sampler, config.functional(),
                        make_generator(seed, "batches", label), seed=seed)
    record.final_mmd, record.final_map_error = evaluate_final(record.theta_final, config, make_generator(seed, "eval"))
    record.config = {"scheme": method.to_dict(), "experiment": config.to_json_dict()}
    logger.info("%s seed %d: mmd=%.6f time=%.1fs", label, seed, record.final_mmd, record.wall_time_seconds)
    return record


def _failed_record(config: ExperimentConfig, label: str, seed: int, error: Exception) -> RunRecord:
    if isinstance(error, SchemeAbortedError) and error.record is not None:
        record = error.record
    else:
        theta0 = initial_params(config, seed)
        record = RunRecord(method=label, seed=seed, kind=config.method(label).kind,
                           theta_init=theta0, theta_final=theta0.copy())
    record.status = "failed"
    record.error = f"{type(error).__name__}: {error}"
    record.config = {"scheme": config.method(label).to_dict(), "experiment": config.to_json_dict()}
    return record


def evaluate_record(record: RunRecord, config: Optional[ExperimentConfig] = None) -> Tuple[float, Optional[float]]:
    """
    Recompute the final MMD of a stored record with the evaluation stream of its seed.

    Args:
        record (RunRecord): A record written by the harness.
        config (ExperimentConfig, optional): Defaults to the experiment stored in the record.
    """
    if config is None:
        if "experiment" not in record.config:
            raise InvalidSpecError("record carries no experiment config, pass one explicitly")
        config = ExperimentConfig.from_dict(record.config["experiment"])
    return evaluate_final(record.theta_final, config, make_generator(record.seed, "eval"))


def run_suite(config: ExperimentConfig, out_dir: Union[str, Path]) -> List[Dict[str, Any]]:
    """
    Run every method on every seed, write one record per run and the summary table.

    Failed runs are written with status "failed" and left out of the statistics; the suite
    carries on with the next run.

    Returns:
        List[dict]: The summary rows, in method order.
    """
    out_dir = Path(out_dir)
    labels = [method.label for method in config.methods]
    records = []
    for seed in config.seeds:
        for label in labels:
            try:
                record = run_single(config, label, seed)
            except (ArithmeticError, ConvexFlowError) as e:
                logger.warning("%s seed %d failed: %s", label, seed, e)
                record = _failed_record(config, label, seed, e)
            write_record(record, out_dir)
            records.append(record)
    rows = summarize(records, labels)
    path = write_summary(rows, out_dir / SUMMARY_FILENAME)
    logger.info("summary written to %s", path)
    return rows


def comparison_gate(rows: List[Dict[str, Any]], labels: Tuple[str, str, str, str] = COMPARISON_LABELS
                    ) -> List[CheckResult]:
    """
    Mean-MMD ordering expected from the four-method comparison on the default mixture.

    With a, b, c, d the mean final MMD of the implicit, explicit, Euclidean and Adam runs:
    b ≤ a + 0.01, a ≤ d, d ≤ c − 0.02, c ≥ 0.08 and b ≤ 0.05. A method without successful
    runs has a NaN mean and fails every inequality it appears in.

    Args:
        rows (List[dict]): Summary rows as returned by :func:`run_suite`.
        labels (tuple, optional): Method labels of (a, b, c, d). Defaults to the default methods.

    Returns:
        List[CheckResult]: One result per inequality.

    Raises:
        InvalidSpecError: if a label has no summary row.
    """
    means = {row["method"]: float(row["mmd_mean"]) for row in rows}
    missing = [label for label in labels if label not in means]
    if missing:
        raise InvalidSpecError(f"summary has no rows for {missing}")
    a, b, c, d = (means[label] for label in labels)
    la, lb, lc, ld = labels
    rules = [
        (f"{lb} <= {la} + 0.01", b <= a + 0.01, f"{b:.6f} vs {a + 0.01:.6f}"),
        (f"{la} <= {ld}", a <= d, f"{a:.6f} vs {d:.6f}"),
        (f"{ld} <= {lc} - 0.02", d <= c - 0.02, f"{d:.6f} vs {c - 0.02:.6f}"),
        (f"{lc} >= 0.08", c >= 0.08, f"{c:.6f}"),
        (f"{lb} <= 0.05", b <= 0.05, f"{b:.6f}"),
    ]
    return [CheckResult(name, bool(passed), detail) for name, passed, detail in rules]
