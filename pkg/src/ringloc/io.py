"""File formats and atomic writes.

Formats:
    cloud CSV   header ``x,y,z,intensity``; simulated scans append
                ``cls,gt_x,gt_y,gt_z`` (surface class and the noiseless
                world-frame hit per point).
    pose file   12 whitespace-separated numbers, the 3x4 [R | t] matrix
                in row-major order.
    voxel CSV   header ``ix,iy,iz,px,py,pz,intensity,source_index``.
    tensors     text header naming each array and its shape, then packed
                little-endian float32 payloads in header order.

Writes go to a temp file in the target directory followed by an atomic
rename, so readers never observe a half-written file.  Floats are
serialized with shortest round-trip repr, which keeps reruns
byte-identical.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ParseError
from .projection import ProjectionConfig, VoxelCloud
from .se3 import PointCloud, RigidTransform

PathLike = Union[str, Path]

CLOUD_HEADER = "x,y,z,intensity"
SCAN_HEADER = "x,y,z,intensity,cls,gt_x,gt_y,gt_z"
VOXEL_HEADER = "ix,iy,iz,px,py,pz,intensity,source_index"
TENSOR_MAGIC = "ringloc-tensors 1"


def _fmt(x: float) -> str:
    return repr(float(x))


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_rows(path: Path, expected_header: str) -> np.ndarray:
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != expected_header:
        raise ParseError(f"{path}: expected header '{expected_header}'")
    width = expected_header.count(",") + 1
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise ParseError(f"{path}:{lineno}: expected {width} fields")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(-1, width)


def read_cloud_csv(path: PathLike) -> PointCloud:
    """Read a cloud, accepting either the plain or the simulated header."""
    cloud, _, _ = read_scan_csv(path)
    return cloud


def read_scan_csv(path: PathLike
                  ) -> Tuple[PointCloud, Optional[np.ndarray], Optional[np.ndarray]]:
    """Read a cloud plus optional class labels and ground-truth hits.

    Returns (cloud, classes, gt_world); the extras are None for plain
    cloud files.
    """
    path = Path(path)
    try:
        first = path.read_text().splitlines()[:1]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    header = first[0].strip() if first else ""
    if header == SCAN_HEADER:
        data = _parse_rows(path, SCAN_HEADER)
        cloud = _make_cloud(path, data[:, :3], data[:, 3])
        return cloud, data[:, 4].astype(np.int64), data[:, 5:8]
    data = _parse_rows(path, CLOUD_HEADER)
    return _make_cloud(path, data[:, :3], data[:, 3]), None, None


def _make_cloud(path: Path, xyz: np.ndarray, intensity: np.ndarray) -> PointCloud:
    try:
        return PointCloud(xyz, intensity)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_cloud_csv(path: PathLike, cloud: PointCloud) -> None:
    lines = [CLOUD_HEADER]
    for (x, y, z), i in zip(cloud.xyz, cloud.intensity):
        lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(z)},{_fmt(i)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_scan_csv(path: PathLike, cloud: PointCloud,
                   classes: np.ndarray, gt_world: np.ndarray) -> None:
    lines = [SCAN_HEADER]
    for (x, y, z), i, c, g in zip(cloud.xyz, cloud.intensity, classes, gt_world):
        lines.append(
            f"{_fmt(x)},{_fmt(y)},{_fmt(z)},{_fmt(i)},{int(c)},"
            f"{_fmt(g[0])},{_fmt(g[1])},{_fmt(g[2])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_pose(path: PathLike) -> RigidTransform:
    path = Path(path)
    try:
        tokens = path.read_text().split()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if len(tokens) != 12:
        raise ParseError(f"{path}: pose file must hold 12 numbers, got {len(tokens)}")
    try:
        vals = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    mat = vals.reshape(3, 4)
    t = RigidTransform(mat[:, :3], mat[:, 3])
    if not t.is_rigid(tol=1e-6):
        raise ParseError(f"{path}: rotation block is not a proper rotation")
    return t


def write_pose(path: PathLike, t: RigidTransform) -> None:
    rows = ["  ".join(_fmt(v) for v in row) for row in t.matrix()]
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_voxel_csv(path: PathLike, config: ProjectionConfig) -> VoxelCloud:
    data = _parse_rows(Path(path), VOXEL_HEADER)
    idx = data[:, :3]
    if np.any(idx != np.round(idx)):
        raise ParseError(f"{path}: voxel indices must be integers")
    src = data[:, 7]
    if np.any(src != np.round(src)) or np.any(src < 0):
        raise ParseError(f"{path}: source_index must be a non-negative integer")
    try:
        return VoxelCloud(idx.astype(np.int64), data[:, 3:6], data[:, 6],
                          src.astype(np.int64), config.ring_cells,
                          config.voxel_size)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_voxel_csv(path: PathLike, v: VoxelCloud) -> None:
    lines = [VOXEL_HEADER]
    for (ix, iy, iz), (px, py, pz), inten, src in zip(
            v.indices, v.points, v.intensity, v.source_index):
        lines.append(f"{ix},{iy},{iz},{_fmt(px)},{_fmt(py)},{_fmt(pz)},"
                     f"{_fmt(inten)},{src}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_tensors(path: PathLike, tensors: Sequence[Tuple[str, np.ndarray]]) -> None:
    """Serialize named float arrays: text header, then f32 payload."""
    header = [TENSOR_MAGIC]
    blobs: List[bytes] = []
    for name, arr in tensors:
        arr = np.asarray(arr, dtype=np.float64)
        header.append(name + " " + " ".join(str(d) for d in arr.shape))
        blobs.append(arr.astype("<f4").tobytes())
    payload = ("\n".join(header) + "\ndata\n").encode("ascii") + b"".join(blobs)
    atomic_write_bytes(path, payload)


def read_tensors(path: PathLike) -> Dict[str, np.ndarray]:
    """Read a tensor file into an ordered name -> float64 array dict."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    marker = b"\ndata\n"
    split = raw.find(marker)
    if split < 0:
        raise ParseError(f"{path}: missing tensor data marker")
    header_lines = raw[:split].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0] != TENSOR_MAGIC:
        raise ParseError(f"{path}: bad tensor file magic")
    out: Dict[str, np.ndarray] = {}
    cursor = split + len(marker)
    for line in header_lines[1:]:
        parts = line.split()
        if not parts:
            raise ParseError(f"{path}: blank tensor header line")
        name, dims = parts[0], parts[1:]
        try:
            shape = tuple(int(d) for d in dims)
        except ValueError as exc:
            raise ParseError(f"{path}: bad shape for tensor '{name}'") from exc
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        chunk = raw[cursor:cursor + nbytes]
        if len(chunk) != nbytes:
            raise ParseError(f"{path}: truncated payload for tensor '{name}'")
        out[name] = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        cursor += nbytes
    if cursor != len(raw):
        raise ParseError(f"{path}: trailing bytes after last tensor")
    return out
