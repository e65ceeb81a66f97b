# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Run records, their JSON files, and the per-method summary table.
"""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np

from .helpers import summary_stats
from .rng import GENERATOR_NAME
from .typedefs import ParamVector

RECORD_FORMAT = "convexflow.run_record/1"
SUMMARY_HEADER = ["method", "n_seeds", "mmd_mean", "mmd_std", "mmd_min", "mmd_max", "mean_wall_time_s"]


@dataclass
class StepDiagnostics:
    """
    Metrics of one outer step.

    Attributes:
        step (int): Outer step index k (the step from θ_k to θ_{k+1}).
        surrogate_loss (float): Functional surrogate at θ_k.
        grad_norm (float): Norm of the Euclidean parameter gradient of the functional at θ_k.
        map_displacement (float): Empirical L²(ρ̂₀) norm of T_{θ_{k+1}} - T_{θ_k} on the step's batch.
        inexactness_delta (float, optional): Certificate δ_k of an inexact proximal step.
        inner_objective (float, optional): Final inner objective of the constrained schemes.
        epsilon (float, optional): Entropic regularization used at θ_k.
    """
    step: int
    surrogate_loss: float
    grad_norm: float
    map_displacement: float
    inexactness_delta: Optional[float] = None
    inner_objective: Optional[float] = None
    epsilon: Optional[float] = None

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'StepDiagnostics':
        return StepDiagnostics(**data)


@dataclass
class RunRecord:
    """
    Everything persisted about one (method, seed) run.
    """
    method: str
    seed: int
    kind: str
    theta_init: ParamVector
    theta_final: ParamVector
    diagnostics: List[StepDiagnostics] = field(default_factory=list)
    final_mmd: Optional[float] = None
    final_map_error: Optional[float] = None
    wall_time_seconds: float = 0.0
    config: Dict[str, Any] = field(default_factory=dict)
    rng: str = GENERATOR_NAME
    status: str = "ok"
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "format": RECORD_FORMAT,
            "method": self.method,
            "seed": self.seed,
            "kind": self.kind,
            "status": self.status,
            "error": self.error,
            "rng": self.rng,
            "final_mmd": self.final_mmd,
            "final_map_error": self.final_map_error,
            "wall_time_seconds": self.wall_time_seconds,
            "theta_init": [float(v) for v in self.theta_init],
            "theta_final": [float(v) for v in self.theta_final],
            "diagnostics": [asdict(diag) for diag in self.diagnostics],
            "config": self.config,
        }
        return data

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'RunRecord':
        if not isinstance(data, dict):
            raise ValueError("not a run record: expected a JSON object")
        if data.get("format") != RECORD_FORMAT:
            raise ValueError(f"not a run record (format {data.get('format')!r})")
        return RunRecord(
            method=data["method"],
            seed=int(data["seed"]),
            kind=data["kind"],
            theta_init=np.asarray(data["theta_init"], dtype=np.float64),
            theta_final=np.asarray(data["theta_final"], dtype=np.float64),
            diagnostics=[StepDiagnostics.from_dict(d) for d in data["diagnostics"]],
            final_mmd=data.get("final_mmd"),
            final_map_error=data.get("final_map_error"),
            wall_time_seconds=float(data.get("wall_time_seconds", 0.0)),
            config=data.get("config", {}),
            rng=data.get("rng", GENERATOR_NAME),
            status=data.get("status", "ok"),
            error=data.get("error"),
        )


def record_filename(method: str, seed: int) -> str:
    return f"{method}_seed{seed:04d}.json"


def write_record(record: RunRecord, out_dir: Union[str, Path]) -> Path:
    """
    Write a record as ``<method>_seed<seed>.json`` into out_dir and return the path.

    Floats are written with Python's shortest round-trip representation.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / record_filename(record.method, record.seed)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record.to_dict(), fh, indent=1)
        fh.write("\n")
    return path


def read_record(path: Union[str, Path]) -> RunRecord:
    with open(path, "r", encoding="utf-8") as fh:
        return RunRecord.from_dict(json.load(fh))


def read_records(out_dir: Union[str, Path]) -> List[RunRecord]:
    return [read_record(path) for path in sorted(Path(out_dir).glob("*_seed*.json"))]


def summarize(records: Iterable[RunRecord], methods: Optional[List[str]] = None) -> List[Dict[str, Any]]:
    """
    Per-method statistics of final_mmd over the successful runs.

    Args:
        records (Iterable[RunRecord]): The runs; failed runs and runs without final_mmd are skipped.
        methods (List[str], optional): Row order. Defaults to order of first appearance.

    Returns:
        List[dict]: One row per method with the keys of SUMMARY_HEADER.
    """
    by_method: Dict[str, List[RunRecord]] = {}
    for record in records:
        by_method.setdefault(record.method, [])
        if record.status == "ok" and record.final_mmd is not None:
            by_method[record.method].append(record)
    rows = []
    for method in (methods if methods is not None else list(by_method)):
        runs = sorted(by_method.get(method, []), key=lambda r: r.seed)
        mean, std, low, high = summary_stats([r.final_mmd for r in runs])
        wall = float(np.mean([r.wall_time_seconds for r in runs])) if runs else float("nan")
        rows.append({
            "method": method,
            "n_seeds": len(runs),
            "mmd_mean": mean,
            "mmd_std": std,
            "mmd_min": low,
            "mmd_max": high,
            "mean_wall_time_s": wall,
        })
    return rows


def write_summary(rows: List[Dict[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            writer.writerow([repr(row[key]) if isinstance(row[key], float) else row[key] for key in SUMMARY_HEADER])
    return path


def read_summary(path: Union[str, Path]) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            parsed: Dict[str, Any] = {"method": row["method"], "n_seeds": int(row["n_seeds"])}
            for key in SUMMARY_HEADER[2:]:
                parsed[key] = float(row[key])
            rows.append(parsed)
        return rows
