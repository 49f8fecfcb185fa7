"""Ground-plane fitting and planar rectification.

A scan is rectified by rotating the dominant plane's normal onto +z and
shifting the plane itself to z = 0.  Rectification removes the sensor's
pitch, roll, and height above ground, leaving yaw as the only unknown
rotation for the later pose solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateInput
from .se3 import PointCloud, RigidTransform, apply, rotation_about

EZ = np.array([0.0, 0.0, 1.0])


@dataclass
class PlaneModel:
    """Plane {p : normal . p + d = 0} with a unit normal.

    The normal is canonically oriented: positive z component, falling back
    to positive y then x when earlier components vanish, so equal planes
    compare equal regardless of the fitting path.
    """

    normal: np.ndarray  # (3,) unit vector
    d: float  # m, signed offset

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64)
        n = np.linalg.norm(self.normal)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-9:
            raise DegenerateInput("plane normal must be unit length")

    def distances(self, xyz: np.ndarray) -> np.ndarray:
        return np.abs(xyz @ self.normal + self.d)


@dataclass
class RansacPlaneParams:
    iterations: int = 200
    threshold: float = 0.1  # m, inlier distance
    min_inliers: int = 50
    seed: int = 0


def _canonicalize(normal: np.ndarray, d: float) -> Tuple[np.ndarray, float]:
    a, b, c = normal
    flip = c < 0.0 or (c == 0.0 and (b < 0.0 or (b == 0.0 and a < 0.0)))
    return (-normal, -d) if flip else (normal, d)


def _distinct_triples(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """Draw `count` index triples without replacement, vectorized."""
    i0 = rng.integers(0, n, count)
    i1 = rng.integers(0, n - 1, count)
    i1 = i1 + (i1 >= i0)
    lo = np.minimum(i0, i1)
    hi = np.maximum(i0, i1)
    i2 = rng.integers(0, n - 2, count)
    i2 = i2 + (i2 >= lo)
    i2 = i2 + (i2 >= hi)
    return np.stack([i0, i1, i2], axis=1)


def fit_plane_ransac(cloud: PointCloud,
                     params: Optional[RansacPlaneParams] = None
                     ) -> Tuple[PlaneModel, np.ndarray]:
    """Fit the dominant plane by RANSAC with a least-squares refit.

    Hypotheses come from pre-drawn point triples; the one with the most
    inliers wins (first such hypothesis on ties), then the plane is refit
    on its consensus set and inliers are recomputed against the refit.

    Returns:
        (plane, inlier_indices) with indices ascending into the cloud.

    Raises:
        DegenerateInput: all sampled triples collinear, or the best
            consensus set is smaller than min_inliers.
    """
    params = params or RansacPlaneParams()
    pts = cloud.xyz
    n = len(pts)
    if n < 3:
        raise DegenerateInput("plane fit needs at least 3 points")
    rng = np.random.default_rng(params.seed)
    triples = _distinct_triples(rng, n, params.iterations)

    p0 = pts[triples[:, 0]]
    normals = np.cross(pts[triples[:, 1]] - p0, pts[triples[:, 2]] - p0)
    lengths = np.linalg.norm(normals, axis=1)
    valid = lengths > 1e-12
    if not np.any(valid):
        raise DegenerateInput("all sampled triples are collinear")
    normals[valid] /= lengths[valid, None]
    offsets = -np.einsum("ij,ij->i", normals, p0)

    # (iterations, N) distance table; invalid hypotheses get zero inliers.
    dist = np.abs(normals @ pts.T + offsets[:, None])
    counts = np.where(valid, np.count_nonzero(dist <= params.threshold, axis=1), 0)
    best = int(np.argmax(counts))
    if counts[best] < params.min_inliers:
        raise DegenerateInput(
            f"best plane has {counts[best]} inliers, need {params.min_inliers}")

    inliers = np.flatnonzero(dist[best] <= params.threshold)
    plane = _least_squares_plane(pts[inliers])
    inliers = np.flatnonzero(plane.distances(pts) <= params.threshold)
    if len(inliers) < params.min_inliers:
        raise DegenerateInput("refit plane lost its consensus set")
    return plane, inliers


def _least_squares_plane(pts: np.ndarray) -> PlaneModel:
    centroid = pts.mean(axis=0)
    _, svals, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    if svals[1] <= 1e-12 * max(svals[0], 1e-300):
        raise DegenerateInput("inlier set is collinear")
    normal = vt[2]
    normal, d = _canonicalize(normal, float(-normal @ centroid))
    return PlaneModel(normal, d)


def align_normal(normal: np.ndarray) -> np.ndarray:
    """Minimal rotation taking a unit normal onto +z.

    Rotates by arccos(n . e_z) about the axis n x e_z.  The antiparallel
    case has no unique minimal axis; the convention here is a half-turn
    about +x.
    """
    n = np.asarray(normal, dtype=np.float64)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise DegenerateInput("align_normal expects a unit vector")
    axis = np.cross(n, EZ)
    s = np.linalg.norm(axis)
    c = float(np.clip(n @ EZ, -1.0, 1.0))
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        return rotation_about(np.array([1.0, 0.0, 0.0]), np.pi)
    return rotation_about(axis / s, np.arccos(c))


def build_plane_transform(plane: PlaneModel) -> RigidTransform:
    """Rigid motion sending the plane to z = 0.

    After rotating the normal onto +z every plane point sits at height
    n . p = -d, so translating by d along z lands the plane on zero.
    """
    return RigidTransform(align_normal(plane.normal), plane.d * EZ)


def rectify(cloud: PointCloud,
            params: Optional[RansacPlaneParams] = None
            ) -> Tuple[PointCloud, RigidTransform]:
    """Fit the ground plane and move the cloud into the rectified frame.

    Returns the transformed cloud and the raw-to-rectified transform that
    produced it.
    """
    plane, _ = fit_plane_ransac(cloud, params)
    t_plane = build_plane_transform(plane)
    return apply(t_plane, cloud), t_plane
