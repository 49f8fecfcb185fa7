"""Pipeline configuration: typed sections, key=value files, round-trip.

A config file is plain ``section.key = value`` lines with ``#`` comments
and a mandatory ``config_version`` guard.  Values are typed from the
dataclass defaults (int, float, bool, str, or comma-joined tuples), and
serialization uses shortest round-trip formatting, so write(read(x))
reproduces x.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .encoder import EncoderConfig
from .errors import ParseError
from .io import atomic_write_text
from .plane import RansacPlaneParams
from .pose_solve import RansacPoseParams, SelectionPolicy
from .projection import ProjectionConfig
from .regressor import RegressorConfig
from .simulate import OracleSpec, Perturbation, SensorSpec, WorldSpec

CONFIG_VERSION = 1


@dataclass
class WorldConfig:
    seed: int = 7
    n_boxes: int = 12
    n_cylinders: int = 14


@dataclass
class TrajectoryConfig:
    n_poses: int = 100
    radius: float = 15.0  # m
    height: float = 1.5  # m


@dataclass
class TrainConfig:
    epochs: int = 60
    lr: float = 0.001  # step size at epoch 0
    decay: float = 0.9  # multiplicative per-epoch step decay
    scan_stride: int = 8  # train on every stride-th trajectory frame
    points_per_scan: int = 320  # voxel subsample per training frame
    seed: int = 3


@dataclass
class BenchConfig:
    seed: int = 0  # base seed for per-frame derivation
    perturbations: str = ("yaw:180,random_yaw,fov_limit:180,"
                          "dropout:0.5,gaussian_noise:0.05,pitch_roll:10")


@dataclass
class PipelineConfig:
    projection: ProjectionConfig = dataclasses.field(default_factory=ProjectionConfig)
    plane: RansacPlaneParams = dataclasses.field(default_factory=RansacPlaneParams)
    pose: RansacPoseParams = dataclasses.field(default_factory=RansacPoseParams)
    selection: SelectionPolicy = dataclasses.field(default_factory=SelectionPolicy)
    sensor: SensorSpec = dataclasses.field(default_factory=SensorSpec)
    oracle: OracleSpec = dataclasses.field(default_factory=OracleSpec)
    encoder: EncoderConfig = dataclasses.field(default_factory=EncoderConfig)
    regressor: RegressorConfig = dataclasses.field(default_factory=RegressorConfig)
    world: WorldConfig = dataclasses.field(default_factory=WorldConfig)
    trajectory: TrajectoryConfig = dataclasses.field(default_factory=TrajectoryConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    bench: BenchConfig = dataclasses.field(default_factory=BenchConfig)


KEY_DOCS: Dict[str, str] = {
    "projection.voxel_size": "cell edge of the cylindrical grid (m)",
    "projection.ring_cells": "cells per full turn; even, divisible by 16",
    "plane.iterations": "ground-plane RANSAC hypothesis count",
    "plane.threshold": "ground-plane inlier distance (m)",
    "plane.min_inliers": "minimum ground consensus size",
    "plane.seed": "ground-plane sampling seed offset",
    "pose.iterations": "pose RANSAC hypothesis count",
    "pose.threshold": "pose inlier residual (m)",
    "pose.sample_size": "correspondences per minimal sample",
    "pose.refit_on_inliers": "refit the winner over its inliers",
    "pose.seed": "pose sampling seed offset",
    "selection.top_fraction": "share of points kept by reliability",
    "selection.min_count": "keep everything below this count",
    "sensor.n_azimuth": "rays per sweep row",
    "sensor.n_elevation": "sweep rows",
    "sensor.elevation_min_deg": "lowest ray elevation (deg)",
    "sensor.elevation_max_deg": "highest ray elevation (deg)",
    "sensor.max_range": "maximum returned range (m)",
    "sensor.range_noise": "1-sigma range noise along the ray (m)",
    "oracle.sigma_reliable": "oracle jitter on reliable points (m)",
    "oracle.outlier_box": "oracle scatter cube side on ambiguous points (m)",
    "oracle.u_reliable": "oracle score range for reliable points",
    "oracle.u_ambiguous": "oracle score range for ambiguous points",
    "encoder.stem_width": "width of the stem's hidden projection",
    "encoder.stage_widths": "five encoder stage widths",
    "encoder.output_width": "fused full-resolution feature width",
    "regressor.width": "regressor feature width",
    "regressor.heads": "candidate vectors per max layer",
    "regressor.layers": "stacked max layers",
    "world.seed": "world layout seed",
    "world.n_boxes": "building count",
    "world.n_cylinders": "pole/trunk count",
    "trajectory.n_poses": "frames on the loop",
    "trajectory.radius": "loop radius (m)",
    "trajectory.height": "sensor height above ground (m)",
    "train.epochs": "gradient-descent epochs",
    "train.lr": "step size at epoch 0",
    "train.decay": "per-epoch multiplicative step decay",
    "train.scan_stride": "train on every stride-th frame",
    "train.points_per_scan": "voxel subsample per training frame",
    "train.seed": "weight init and subsample seed",
    "bench.seed": "base seed for per-frame derivation",
    "bench.perturbations": "comma list of kind[:magnitude] entries",
}

_SCALARS = (int, float, bool, str)


def _sections(cfg: PipelineConfig) -> List[Tuple[str, object]]:
    return [(f.name, getattr(cfg, f.name))
            for f in dataclasses.fields(PipelineConfig)]


def config_items(cfg: PipelineConfig) -> List[Tuple[str, object]]:
    """Flat (dotted key, value) pairs in declaration order."""
    items: List[Tuple[str, object]] = []
    for section_name, section in _sections(cfg):
        for f in dataclasses.fields(section):
            items.append((f"{section_name}.{f.name}", getattr(section, f.name)))
    return items


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def _parse_value(text: str, template) -> object:
    text = text.strip()
    if isinstance(template, bool):
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got '{text}'")
        return text == "true"
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if isinstance(template, tuple):
        element = template[0] if len(template) else 0.0
        return tuple(_parse_value(part, element) for part in text.split(","))
    return text


def config_to_text(cfg: PipelineConfig) -> str:
    lines = [f"config_version = {CONFIG_VERSION}"]
    current = None
    for key, value in config_items(cfg):
        section = key.split(".")[0]
        if section != current:
            lines.append("")
            current = section
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> PipelineConfig:
    """Parse key=value lines over the defaults; unknown keys are errors."""
    cfg = PipelineConfig()
    lookup = {key: None for key, _ in config_items(cfg)}
    overrides: Dict[str, str] = {}
    saw_version = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key == "config_version":
            if raw != str(CONFIG_VERSION):
                raise ParseError(f"{source}:{lineno}: unsupported config "
                                 f"version '{raw}'")
            saw_version = True
            continue
        if key not in lookup:
            raise ParseError(f"{source}:{lineno}: unknown key '{key}'")
        overrides[key] = raw
    if not saw_version:
        raise ParseError(f"{source}: missing config_version")

    for key, raw in overrides.items():
        section_name, field_name = key.split(".", 1)
        section = getattr(cfg, section_name)
        template = getattr(section, field_name)
        try:
            value = _parse_value(raw, template)
        except ValueError as exc:
            raise ParseError(f"{source}: key '{key}': {exc}") from exc
        setattr(section, field_name, value)
    # Re-run every section's validation against the merged values.
    for section_name, section in _sections(cfg):
        hook = getattr(section, "__post_init__", None)
        if hook is None:
            continue
        try:
            hook()
        except ValueError as exc:
            raise ParseError(f"{source}: section '{section_name}': {exc}") from exc
    return cfg


def read_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def write_config(path, cfg: PipelineConfig) -> None:
    atomic_write_text(path, config_to_text(cfg))


def standard_bench_config() -> PipelineConfig:
    """The benchmark configuration shipped with the package."""
    text = resources.files("ringloc.data").joinpath("standard_bench.cfg").read_text()
    return parse_config_text(text, source="standard_bench.cfg")


def parse_perturbation(token: str) -> Optional[Perturbation]:
    """'kind:magnitude' or bare 'kind'; 'none' means no perturbation."""
    token = token.strip()
    if token in ("", "none", "baseline"):
        return None
    kind, _, mag = token.partition(":")
    try:
        magnitude = float(mag) if mag else 0.0
        return Perturbation(kind.strip(), magnitude)
    except ValueError as exc:
        raise ParseError(f"bad perturbation '{token}': {exc}") from exc


def parse_perturbation_list(text: str) -> List[Optional[Perturbation]]:
    return [parse_perturbation(tok) for tok in text.split(",") if tok.strip()]
