"""Cylindrical projection, voxelization, and the circular seam.

Points are unrolled onto a cylinder around the sensor's vertical axis:
x becomes arc length s*theta along the ring, y the horizontal radius,
z stays height.  A full turn maps to exactly ring_cells voxels along x,
so a yaw of the input is a circular shift of the grid and convolution
can wrap around the seam instead of truncating it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyGrid, OriginPoint, ShapeMismatch
from .se3 import PointCloud


@dataclass
class ProjectionConfig:
    """Grid geometry for the unrolled cylinder.

    Attributes:
        voxel_size: cell edge delta in meters, > 0.
        ring_cells: cells per full turn along x; even, at least 8.
    """

    voxel_size: float = 0.2
    ring_cells: int = 1024

    def __post_init__(self):
        if self.voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")
        if self.ring_cells < 8 or self.ring_cells % 2 != 0:
            raise ValueError("ring_cells must be an even integer >= 8")

    @property
    def scale(self) -> float:
        """Cylinder radius s that makes one turn exactly ring_cells cells."""
        return self.ring_cells * self.voxel_size / (2.0 * np.pi)

    @property
    def ring_length(self) -> float:
        """Arc length of a full turn; equals ring_cells * voxel_size."""
        return self.ring_cells * self.voxel_size


@dataclass
class VoxelCloud:
    """Occupied voxels with one representative point each.

    Attributes:
        indices: (M, 3) integer cells (ix, iy, iz).
        points: (M, 3) representative coordinates in projected space (m).
        intensity: (M,) representative intensities.
        source_index: (M,) row of each representative in the source cloud.
        ring_cells: cells per turn the grid was built with.
        voxel_size: cell edge (m).
        padded: (M,) True for seam clones added by cyclic_pad.
    """

    indices: np.ndarray
    points: np.ndarray
    intensity: np.ndarray
    source_index: np.ndarray
    ring_cells: int
    voxel_size: float
    padded: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.points = np.asarray(self.points, dtype=np.float64)
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        self.source_index = np.asarray(self.source_index, dtype=np.int64)
        m = len(self.indices)
        if self.indices.shape != (m, 3) or self.points.shape != (m, 3):
            raise ShapeMismatch("indices and points must both be (M, 3)")
        if self.intensity.shape != (m,) or self.source_index.shape != (m,):
            raise ShapeMismatch("per-voxel arrays must have length M")
        if self.padded is None:
            self.padded = np.zeros(m, dtype=bool)
        self.padded = np.asarray(self.padded, dtype=bool)
        if self.padded.shape != (m,):
            raise ShapeMismatch("padded mask must have length M")
        core = self.indices[~self.padded, 0]
        if len(core) and (core.min() < 0 or core.max() >= self.ring_cells):
            raise ValueError("unpadded ring index outside [0, ring_cells)")

    def __len__(self) -> int:
        return len(self.indices)


def project_cylindrical(cloud: PointCloud,
                        config: Optional[ProjectionConfig] = None) -> PointCloud:
    """Unroll a cloud onto the cylinder.

    Output coordinates are (arc, radius, height); intensity and point
    order carry over unchanged.

    Raises:
        OriginPoint: some point lies on the vertical sensor axis, where
            azimuth is undefined.
    """
    config = config or ProjectionConfig()
    x, y, z = cloud.xyz.T
    radius = np.hypot(x, y)
    if np.any(radius == 0.0):
        raise OriginPoint("point on the sensor axis has no azimuth")
    theta = np.arctan2(y, x)
    theta = np.where(theta < 0.0, theta + 2.0 * np.pi, theta)
    arc = config.scale * theta
    return PointCloud(np.column_stack([arc, radius, z]), cloud.intensity.copy())


def voxelize(projected: PointCloud,
             config: Optional[ProjectionConfig] = None) -> VoxelCloud:
    """Quantize a projected cloud, keeping the first point per cell.

    Cells are floor(coord / voxel_size); the ring index is reduced modulo
    ring_cells so an arc that rounds up to the full turn stays in range.
    Voxels are ordered by their representative's position in the input.
    """
    config = config or ProjectionConfig()
    idx = np.floor(projected.xyz / config.voxel_size).astype(np.int64)
    idx[:, 0] %= config.ring_cells
    _, first = np.unique(idx, axis=0, return_index=True)
    first = np.sort(first)
    return VoxelCloud(idx[first], projected.xyz[first],
                      projected.intensity[first], first,
                      config.ring_cells, config.voxel_size)


def cyclic_pad(v: VoxelCloud, w: int) -> VoxelCloud:
    """Clone voxels across the seam so a kernel of half-extent w sees them.

    Entries with ix < w reappear at ix + ring_cells, entries with
    ix > ring_cells - w reappear at ix - ring_cells; representative arcs
    shift by one full ring length alongside.  Originals come first in the
    output, clones carry the padded flag.
    """
    if w < 0:
        raise ValueError("pad extent must be non-negative")
    if np.any(v.padded):
        raise ValueError("cannot pad an already padded grid")
    shift_cells = np.array([v.ring_cells, 0, 0], dtype=np.int64)
    shift_arc = np.array([v.ring_cells * v.voxel_size, 0.0, 0.0])

    low = np.flatnonzero(v.indices[:, 0] < w)
    high = np.flatnonzero(v.indices[:, 0] > v.ring_cells - w)
    parts_idx = [v.indices, v.indices[low] + shift_cells, v.indices[high] - shift_cells]
    parts_pts = [v.points, v.points[low] + shift_arc, v.points[high] - shift_arc]
    n_clones = len(low) + len(high)
    return VoxelCloud(
        np.concatenate(parts_idx),
        np.concatenate(parts_pts),
        np.concatenate([v.intensity, v.intensity[low], v.intensity[high]]),
        np.concatenate([v.source_index, v.source_index[low], v.source_index[high]]),
        v.ring_cells, v.voxel_size,
        np.concatenate([v.padded, np.ones(n_clones, dtype=bool)]),
    )


def strip_padding(v: VoxelCloud) -> VoxelCloud:
    """Drop seam clones, restoring the original voxel list."""
    keep = ~v.padded
    return VoxelCloud(v.indices[keep], v.points[keep], v.intensity[keep],
                      v.source_index[keep], v.ring_cells, v.voxel_size)


def recover_cartesian(v: VoxelCloud,
                      config: Optional[ProjectionConfig] = None) -> PointCloud:
    """Map voxel centers back to Cartesian sensor coordinates.

    Uses the cell center (i + 1/2) * voxel_size on every axis, then folds
    the arc back into an angle.  Output order matches the voxel order.
    """
    config = config or ProjectionConfig()
    if len(v) == 0:
        raise EmptyGrid("nothing to recover from an empty grid")
    centers = (v.indices + 0.5) * config.voxel_size
    angle = centers[:, 0] / config.scale
    xyz = np.column_stack([
        centers[:, 1] * np.cos(angle),
        centers[:, 1] * np.sin(angle),
        centers[:, 2],
    ])
    return PointCloud(xyz, v.intensity.copy())
