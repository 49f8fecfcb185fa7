"""Synthetic LiDAR scenes with analytic ray casting.

A world is a flat ground plane, a ring of box-shaped buildings, and a
scatter of thin vertical cylinders standing in for poles and trunks.
Buildings are geometrically distinctive (class 1, reliable); ground and
cylinders look alike from every azimuth (class 0, ambiguous).  Scans are
ray grids intersected analytically, with optional range noise, so every
point carries its exact ground-truth world hit alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import EmptyScan, LengthMismatch
from .se3 import PointCloud, RigidTransform, compose, invert, rotation_about, yaw

CLASS_AMBIGUOUS = 0
CLASS_RELIABLE = 1

PERTURBATION_KINDS = ("yaw", "random_yaw", "fov_limit", "dropout",
                      "gaussian_noise", "pitch_roll")


@dataclass
class Box:
    lo: np.ndarray  # (3,) m
    hi: np.ndarray  # (3,) m
    intensity: float


@dataclass
class Cylinder:
    center: np.ndarray  # (2,) m, axis position in the ground plane
    radius: float  # m
    height: float  # m, from the ground up
    intensity: float


@dataclass
class WorldSpec:
    """Knobs for world generation; distances in meters."""

    n_boxes: int = 12
    n_cylinders: int = 14
    extent: float = 50.0  # ground half-extent
    box_ring: Tuple[float, float] = (24.0, 42.0)  # center radius band
    box_footprint: Tuple[float, float] = (4.0, 10.0)
    box_height: Tuple[float, float] = (5.0, 14.0)
    cylinder_band: Tuple[float, float] = (7.0, 45.0)
    cylinder_radius: Tuple[float, float] = (0.12, 0.3)
    cylinder_height: Tuple[float, float] = (2.0, 4.0)
    keepout_radius: float = 15.0  # trajectory ring to keep clear
    keepout_margin: float = 3.0
    ground_intensity: float = 0.3


@dataclass
class SyntheticWorld:
    extent: float
    ground_intensity: float
    boxes: List[Box]
    cylinders: List[Cylinder]


@dataclass
class SensorSpec:
    n_azimuth: int = 64
    n_elevation: int = 16
    elevation_min_deg: float = -25.0
    elevation_max_deg: float = 10.0
    max_range: float = 80.0  # m
    range_noise: float = 0.02  # m, 1-sigma along the ray


@dataclass
class Scan:
    """One simulated sweep in the sensor frame.

    gt_world holds the noiseless world-frame hit of each point; rows of
    cloud, classes, and gt_world are the same points throughout.
    """

    cloud: PointCloud
    classes: np.ndarray  # (n,) int
    gt_world: np.ndarray  # (n, 3) m


@dataclass
class Perturbation:
    """A named corruption with one magnitude.

    Magnitudes: yaw / pitch_roll / fov_limit in degrees, dropout as a
    removal probability, gaussian_noise as a 1-sigma in meters.
    random_yaw ignores its magnitude and draws from the seed.
    """

    kind: str
    magnitude: float = 0.0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind '{self.kind}'")
        if self.kind == "dropout" and not 0.0 <= self.magnitude <= 0.9:
            raise ValueError("dropout probability must be in [0, 0.9]")
        if self.kind == "pitch_roll" and not 0.0 <= self.magnitude <= 15.0:
            raise ValueError("pitch_roll magnitude must be in [0, 15] degrees")
        if self.kind == "gaussian_noise" and self.magnitude < 0.0:
            raise ValueError("noise sigma must be non-negative")
        if self.kind == "fov_limit" and not 0.0 < self.magnitude <= 360.0:
            raise ValueError("fov width must be in (0, 360] degrees")


def scan_seed(global_seed: int, scan_index: int) -> int:
    """Stable per-scan seed derived from the run seed and frame index."""
    return int(np.random.SeedSequence([global_seed, scan_index])
               .generate_state(1)[0])


def generate_world(spec: Optional[WorldSpec] = None,
                   seed: int = 0) -> SyntheticWorld:
    """Draw a world layout deterministically from the seed."""
    spec = spec or WorldSpec()
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(spec.n_boxes):
        radius = rng.uniform(*spec.box_ring)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        center = np.array([radius * np.cos(angle), radius * np.sin(angle)])
        half = rng.uniform(*spec.box_footprint, size=2) / 2.0
        height = rng.uniform(*spec.box_height)
        lo = np.array([center[0] - half[0], center[1] - half[1], 0.0])
        hi = np.array([center[0] + half[0], center[1] + half[1], height])
        boxes.append(Box(lo, hi, float(rng.uniform(0.5, 0.9))))
    cylinders = []
    while len(cylinders) < spec.n_cylinders:
        pos = rng.uniform(-spec.cylinder_band[1], spec.cylinder_band[1], size=2)
        r = np.linalg.norm(pos)
        if not spec.cylinder_band[0] <= r <= spec.cylinder_band[1]:
            continue
        if abs(r - spec.keepout_radius) < spec.keepout_margin:
            continue
        cylinders.append(Cylinder(pos, float(rng.uniform(*spec.cylinder_radius)),
                                  float(rng.uniform(*spec.cylinder_height)),
                                  float(rng.uniform(0.1, 0.25))))
    return SyntheticWorld(spec.extent, spec.ground_intensity, boxes, cylinders)


def loop_trajectory(n_poses: int = 100, radius: float = 15.0,
                    height: float = 1.5) -> List[RigidTransform]:
    """Sensor poses on a closed loop, tangent-facing with gentle wobble."""
    poses = []
    for i in range(n_poses):
        phi = 2.0 * np.pi * i / n_poses
        pos = np.array([radius * np.cos(phi), radius * np.sin(phi),
                        height + 0.2 * np.sin(3.0 * phi)])
        heading = yaw(phi + np.pi / 2.0 + 0.25 * np.sin(2.0 * phi))
        poses.append(RigidTransform(heading.rotation, pos))
    return poses


def _ray_directions(sensor: SensorSpec) -> np.ndarray:
    az = np.linspace(0.0, 2.0 * np.pi, sensor.n_azimuth, endpoint=False)
    el = np.deg2rad(np.linspace(sensor.elevation_min_deg,
                                sensor.elevation_max_deg, sensor.n_elevation))
    azg, elg = np.meshgrid(az, el, indexing="ij")
    return np.column_stack([
        (np.cos(elg) * np.cos(azg)).ravel(),
        (np.cos(elg) * np.sin(azg)).ravel(),
        np.sin(elg).ravel(),
    ])


def _intersect_ground(world: SyntheticWorld, origin, dirs) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[2] / dirs[:, 2]
    hit_xy = origin[:2] + t[:, None] * dirs[:, :2]
    ok = (dirs[:, 2] < 0.0) & (t > 0.0) & \
        (np.abs(hit_xy) <= world.extent).all(axis=1)
    return np.where(ok, t, np.inf)


def _intersect_box(box: Box, origin, dirs) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (box.lo - origin) / dirs
        t1 = (box.hi - origin) / dirs
    near = np.nanmax(np.minimum(t0, t1), axis=1)
    far = np.nanmin(np.maximum(t0, t1), axis=1)
    ok = (near <= far) & (near > 0.0)
    return np.where(ok, near, np.inf)


def _intersect_cylinder(cyl: Cylinder, origin, dirs) -> np.ndarray:
    rel = origin[:2] - cyl.center
    a = (dirs[:, :2] ** 2).sum(axis=1)
    b = 2.0 * dirs[:, :2] @ rel
    c = rel @ rel - cyl.radius ** 2
    disc = b * b - 4.0 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        roots = np.stack([(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)])
    z = origin[2] + roots * dirs[:, 2]
    ok = (disc >= 0.0) & (a > 0.0) & (roots > 0.0) & \
        (z >= 0.0) & (z <= cyl.height)
    roots = np.where(ok, roots, np.inf)
    return roots.min(axis=0)


def simulate_scan(world: SyntheticWorld, pose: RigidTransform,
                  sensor: Optional[SensorSpec] = None,
                  seed: int = 0) -> Scan:
    """Cast the sensor's ray grid from a pose and return the hits.

    Points are range-limited, carry the surface's class and intensity,
    and are jittered along the ray by the sensor's range noise.  Ray
    order (azimuth-major) is preserved for the surviving rays.
    """
    sensor = sensor or SensorSpec()
    dirs_s = _ray_directions(sensor)
    dirs_w = dirs_s @ pose.rotation.T
    origin = pose.translation

    t_all = [_intersect_ground(world, origin, dirs_w)]
    meta = [(CLASS_AMBIGUOUS, world.ground_intensity)]
    for box in world.boxes:
        t_all.append(_intersect_box(box, origin, dirs_w))
        meta.append((CLASS_RELIABLE, box.intensity))
    for cyl in world.cylinders:
        t_all.append(_intersect_cylinder(cyl, origin, dirs_w))
        meta.append((CLASS_AMBIGUOUS, cyl.intensity))

    t_stack = np.vstack(t_all)
    winner = np.argmin(t_stack, axis=0)
    t_hit = t_stack[winner, np.arange(t_stack.shape[1])]
    keep = np.isfinite(t_hit) & (t_hit <= sensor.max_range)
    if not np.any(keep):
        raise EmptyScan("no ray hit anything in range")

    winner = winner[keep]
    t_hit = t_hit[keep]
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sensor.range_noise, len(t_hit))
    xyz_s = dirs_s[keep] * (t_hit + noise)[:, None]
    classes = np.array([meta[w][0] for w in winner], dtype=np.int64)
    intensity = np.array([meta[w][1] for w in winner])
    gt_world = origin + dirs_w[keep] * t_hit[:, None]
    return Scan(PointCloud(xyz_s, intensity), classes, gt_world)


def perturbation_transform(p: Perturbation, seed: int = 0) -> RigidTransform:
    """The rigid rotation a perturbation applies (identity if none)."""
    rng = np.random.default_rng(seed)
    if p.kind == "yaw":
        return yaw(np.deg2rad(p.magnitude))
    if p.kind == "random_yaw":
        return yaw(rng.uniform(0.0, 2.0 * np.pi))
    if p.kind == "pitch_roll":
        m = np.deg2rad(p.magnitude)
        roll = rotation_about(np.array([1.0, 0.0, 0.0]), rng.uniform(-m, m))
        pitch = rotation_about(np.array([0.0, 1.0, 0.0]), rng.uniform(-m, m))
        return RigidTransform(pitch @ roll, np.zeros(3))
    return RigidTransform(np.eye(3), np.zeros(3))


def _kept_indices(cloud: PointCloud, p: Perturbation, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = len(cloud)
    if p.kind == "fov_limit":
        az = np.arctan2(cloud.xyz[:, 1], cloud.xyz[:, 0])
        return np.flatnonzero(np.abs(az) <= np.deg2rad(p.magnitude) / 2.0)
    if p.kind == "dropout":
        return np.flatnonzero(rng.random(n) >= p.magnitude)
    return np.arange(n)


def perturb(cloud: PointCloud, p: Perturbation, seed: int = 0) -> PointCloud:
    """Corrupt a cloud; rotation kinds rotate, subset kinds drop rows.

    The same seed drives the rotation draw, the dropout mask, and the
    additive noise, so a perturbation is reproducible from (p, seed).
    """
    kept = _kept_indices(cloud, p, seed)
    if len(kept) == 0:
        raise EmptyScan("perturbation removed every point")
    xyz = cloud.xyz[kept]
    t = perturbation_transform(p, seed)
    xyz = xyz @ t.rotation.T
    if p.kind == "gaussian_noise":
        # Separate stream so the rotation draw (unused here) cannot shift
        # the noise realization between kinds.
        rng = np.random.default_rng(seed)
        xyz = xyz + rng.normal(0.0, p.magnitude, xyz.shape)
    return PointCloud(xyz, cloud.intensity[kept])


def perturb_scan(scan: Scan, p: Perturbation, seed: int = 0
                 ) -> Tuple[Scan, RigidTransform]:
    """Perturb a scan, keeping classes and ground truth row-aligned.

    Returns the new scan and the applied rotation; a pose that explains
    the perturbed cloud is the original pose composed with the inverse
    of that rotation.
    """
    kept = _kept_indices(scan.cloud, p, seed)
    if len(kept) == 0:
        raise EmptyScan("perturbation removed every point")
    t = perturbation_transform(p, seed)
    xyz = scan.cloud.xyz[kept] @ t.rotation.T
    if p.kind == "gaussian_noise":
        rng = np.random.default_rng(seed)
        xyz = xyz + rng.normal(0.0, p.magnitude, xyz.shape)
    cloud = PointCloud(xyz, scan.cloud.intensity[kept])
    return Scan(cloud, scan.classes[kept], scan.gt_world[kept]), t


def effective_truth(pose: RigidTransform, applied: RigidTransform
                    ) -> RigidTransform:
    """Ground-truth pose for a cloud rotated in the sensor frame."""
    return compose(pose, invert(applied))


@dataclass
class OracleSpec:
    """Stand-in predictor statistics.

    Reliable points get near-exact coordinates and high scores;
    ambiguous points get coordinates scattered uniformly in a cube of
    side outlier_box around the truth and low scores.
    """

    sigma_reliable: float = 0.05  # m
    outlier_box: float = 40.0  # m, cube side
    u_reliable: Tuple[float, float] = (2.0, 10.0)
    u_ambiguous: Tuple[float, float] = (-10.0, -2.0)


def oracle_predict(gt_world: np.ndarray, classes: np.ndarray,
                   oracle: Optional[OracleSpec] = None,
                   seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted (coords, u) per point, drawn from the class statistics.

    All random draws happen for every point regardless of class, so a
    point's prediction depends only on its row and the seed, not on the
    class mix around it.
    """
    oracle = oracle or OracleSpec()
    gt_world = np.asarray(gt_world, dtype=np.float64)
    classes = np.asarray(classes)
    if len(gt_world) != len(classes):
        raise LengthMismatch("classes must align with ground-truth points")
    rng = np.random.default_rng(seed)
    n = len(gt_world)
    jitter = rng.normal(0.0, oracle.sigma_reliable, (n, 3))
    scatter = rng.uniform(-oracle.outlier_box / 2.0, oracle.outlier_box / 2.0,
                          (n, 3))
    u_rel = rng.uniform(*oracle.u_reliable, n)
    u_amb = rng.uniform(*oracle.u_ambiguous, n)
    reliable = (classes == CLASS_RELIABLE)[:, None]
    coords = np.where(reliable, gt_world + jitter, gt_world + scatter)
    u = np.where(reliable[:, 0], u_rel, u_amb)
    return coords, u
