"""Trajectory error metrics and report emission.

Position error is the Euclidean distance between estimated and true
translation; orientation error is the geodesic angle of the relative
rotation.  Summaries follow a fixed JSON schema shipped with the
package so downstream tooling can validate reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Sequence, Union

import numpy as np

from .errors import EmptyScan, LengthMismatch
from .io import atomic_write_text
from .se3 import RigidTransform, rotation_angle_deg

SCHEMA_VERSION = 1
DEFAULT_SUCCESS_THRESHOLDS = (0.5, 1.0, 5.0)  # m


@dataclass
class TrajectoryResult:
    """Aligned estimated and ground-truth poses, one pair per frame."""

    frames: List[int] = field(default_factory=list)
    estimates: List[RigidTransform] = field(default_factory=list)
    truths: List[RigidTransform] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.frames) == len(self.estimates) == len(self.truths)):
            raise LengthMismatch("frames, estimates, and truths must align")

    def __len__(self) -> int:
        return len(self.frames)

    def add(self, frame: int, estimate: RigidTransform,
            truth: RigidTransform) -> None:
        self.frames.append(frame)
        self.estimates.append(estimate)
        self.truths.append(truth)

    def require_nonempty(self) -> "TrajectoryResult":
        if len(self) == 0:
            raise EmptyScan("no frames to summarize")
        return self


def position_errors(result: TrajectoryResult) -> np.ndarray:
    result.require_nonempty()
    return np.array([
        float(np.linalg.norm(e.translation - t.translation))
        for e, t in zip(result.estimates, result.truths)
    ])


def orientation_errors_deg(result: TrajectoryResult) -> np.ndarray:
    result.require_nonempty()
    return np.array([
        rotation_angle_deg(e.rotation.T @ t.rotation)
        for e, t in zip(result.estimates, result.truths)
    ])


def mpe(result: TrajectoryResult) -> float:
    """Mean position error (m)."""
    return float(position_errors(result).mean())


def moe(result: TrajectoryResult) -> float:
    """Mean orientation error (deg)."""
    return float(orientation_errors_deg(result).mean())


def success_at(result: TrajectoryResult, threshold: float) -> float:
    """Fraction of frames with position error <= threshold meters."""
    errs = position_errors(result)
    return float(np.count_nonzero(errs <= threshold) / len(errs))


def percentile(values: Sequence[float], p: float) -> float:
    """p-th percentile with linear interpolation between order statistics."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise EmptyScan("percentile of an empty sample")
    return float(np.percentile(values, p, method="linear"))


def error_cdf(values: Sequence[float], grid: Sequence[float]) -> np.ndarray:
    """Fraction of values at or below each grid point."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    if len(values) == 0:
        raise EmptyScan("cdf of an empty sample")
    grid = np.asarray(grid, dtype=np.float64)
    return np.searchsorted(values, grid, side="right") / len(values)


def summarize(result: TrajectoryResult,
              thresholds: Sequence[float] = DEFAULT_SUCCESS_THRESHOLDS
              ) -> Dict[str, Union[int, float]]:
    """Summary dict matching the shipped report schema."""
    pos = position_errors(result)
    summary: Dict[str, Union[int, float]] = {
        "schema_version": SCHEMA_VERSION,
        "frames": len(result),
        "mpe_m": float(pos.mean()),
        "moe_deg": moe(result),
        "medpe_m": percentile(pos, 50.0),
        "p99_m": percentile(pos, 99.0),
    }
    for t in thresholds:
        summary[f"success@{t:g}"] = success_at(result, t)
    return summary


def report_schema() -> dict:
    """The JSON schema summaries are validated against."""
    text = resources.files("ringloc.data").joinpath(
        "report.schema.json").read_text()
    return json.loads(text)


def emit_report(result: TrajectoryResult, path, fmt: str = "csv",
                thresholds: Sequence[float] = DEFAULT_SUCCESS_THRESHOLDS
                ) -> None:
    """Write per-frame errors (csv) or the summary block (json)."""
    result.require_nonempty()
    if fmt == "csv":
        pos = position_errors(result)
        ori = orientation_errors_deg(result)
        lines = ["frame,pos_err_m,ori_err_deg"]
        for f, p, o in zip(result.frames, pos, ori):
            lines.append(f"{f},{repr(float(p))},{repr(float(o))}")
        atomic_write_text(path, "\n".join(lines) + "\n")
    elif fmt == "json":
        atomic_write_text(
            path, json.dumps(summarize(result, thresholds), indent=2) + "\n")
    else:
        raise ValueError(f"unknown report format '{fmt}'")
