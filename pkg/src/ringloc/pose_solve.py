"""Reliability filtering, point-set alignment, and robust pose search.

The solver consumes per-point correspondences (local coordinates in the
rectified scan frame, predicted world coordinates) plus reliability
scores.  A fixed fraction of the most reliable points is kept, RANSAC
over pre-drawn minimal samples finds a consensus rigid motion, and the
final motion is compensated for the rectification applied earlier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateInput, LengthMismatch, NoConsensus
from .se3 import RigidTransform, compose, invert


@dataclass
class SelectionPolicy:
    top_fraction: float = 0.25  # share of points kept, by reliability
    min_count: int = 50  # below this many, keep everything

    def __post_init__(self):
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValueError("top_fraction must be in (0, 1]")
        if self.min_count < 1:
            raise ValueError("min_count must be positive")


@dataclass
class RansacPoseParams:
    iterations: int = 1000
    threshold: float = 0.5  # m, inlier residual
    sample_size: int = 3
    refit_on_inliers: bool = True
    seed: int = 0


@dataclass
class PoseEstimate:
    transform: RigidTransform
    inliers: np.ndarray  # ascending indices into the correspondence arrays
    rms_residual: float  # m, over the inliers under the final transform


def select_reliable(u: np.ndarray,
                    policy: Optional[SelectionPolicy] = None) -> np.ndarray:
    """Indices of the ceil(top_fraction * n) highest scores, ascending.

    When that count would fall below min_count the whole index range is
    returned instead.  Equal scores are broken toward the lower index.
    """
    policy = policy or SelectionPolicy()
    u = np.asarray(u, dtype=np.float64)
    n = len(u)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    k = int(np.ceil(policy.top_fraction * n))
    if k < policy.min_count:
        return np.arange(n, dtype=np.int64)
    ranked = np.argsort(-u, kind="stable")  # stable: ties keep lower index
    return np.sort(ranked[:k]).astype(np.int64)


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid motion taking src points onto dst points.

    Classic SVD solution of the orthogonal Procrustes problem on the
    centered cross-covariance, with the determinant of the candidate
    rotation corrected through the smallest singular direction so the
    result is a proper rotation even for planar sets.

    Raises:
        LengthMismatch: different point counts.
        DegenerateInput: fewer than 3 points, or a collinear source set,
            which leaves a rotation about the line unconstrained.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape:
        raise LengthMismatch("src and dst must have matching shapes")
    if src.ndim != 2 or src.shape[1] != 3 or len(src) < 3:
        raise DegenerateInput("alignment needs at least 3 points")
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    h = (src - sc).T @ (dst - dc)
    u, svals, vt = np.linalg.svd(h)
    if svals[1] <= 1e-12 * max(svals[0], 1e-300):
        raise DegenerateInput("source points are collinear")
    v = vt.T
    if np.linalg.det(v @ u.T) < 0.0:
        v[:, 2] = -v[:, 2]
    r = v @ u.T
    return RigidTransform(r, dc - r @ sc)


def _distinct_samples(rng: np.random.Generator, n: int, count: int,
                      size: int) -> np.ndarray:
    """(count, size) index samples without replacement, fully vectorized."""
    out = np.empty((count, size), dtype=np.int64)
    for j in range(size):
        r = rng.integers(0, n - j, count)
        prev = np.sort(out[:, :j], axis=1)
        for m in range(j):
            r = r + (r >= prev[:, m])
        out[:, j] = r
    return out


def estimate_pose_ransac(local: np.ndarray, pred: np.ndarray,
                         params: Optional[RansacPoseParams] = None
                         ) -> PoseEstimate:
    """Consensus rigid motion from noisy correspondences.

    All minimal samples are drawn up front from one seeded generator, so
    the hypothesis set is fixed before any evaluation and the result
    does not depend on evaluation order.  The best hypothesis is the one
    with the most inliers, ties broken by lower inlier RMS and then by
    draw order; it is refit over its inliers and the inlier set is
    re-evaluated under the refit motion.

    Raises:
        NoConsensus: fewer correspondences than a minimal sample, or the
            best hypothesis's inliers would not even fill one.
    """
    params = params or RansacPoseParams()
    local = np.asarray(local, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if local.shape != pred.shape:
        raise LengthMismatch("local and predicted point counts differ")
    n = len(local)
    if n < params.sample_size:
        raise NoConsensus(f"{n} correspondences cannot fill a sample of "
                          f"{params.sample_size}")
    rng = np.random.default_rng(params.seed)
    samples = _distinct_samples(rng, n, params.iterations, params.sample_size)

    rot, trans, valid = _fit_minimal(local[samples], pred[samples])
    resid = np.einsum("kij,nj->kni", rot, local) + trans[:, None, :] - pred
    resid = np.linalg.norm(resid, axis=2)
    inlier_mask = resid <= params.threshold
    counts = np.where(valid, inlier_mask.sum(axis=1), 0)

    best_count = counts.max()
    if best_count < params.sample_size:
        raise NoConsensus(f"best hypothesis holds {best_count} inliers, "
                          f"need {params.sample_size}")
    candidates = np.flatnonzero(counts == best_count)
    cand_rms = [
        float(np.sqrt(np.mean(resid[c, inlier_mask[c]] ** 2)))
        for c in candidates
    ]
    best = int(candidates[int(np.argmin(cand_rms))])
    transform = RigidTransform(rot[best], trans[best])
    inliers = np.flatnonzero(inlier_mask[best])

    if params.refit_on_inliers and len(inliers) >= 3:
        try:
            transform = kabsch(local[inliers], pred[inliers])
        except DegenerateInput:
            pass  # keep the minimal-sample motion
        refit_res = np.linalg.norm(
            local @ transform.rotation.T + transform.translation - pred, axis=1)
        inliers = np.flatnonzero(refit_res <= params.threshold)
        if len(inliers) < params.sample_size:
            raise NoConsensus("refit collapsed the consensus set")
        rms = float(np.sqrt(np.mean(refit_res[inliers] ** 2)))
    else:
        rms = float(np.sqrt(np.mean(resid[best, inliers] ** 2)))
    return PoseEstimate(transform, inliers.astype(np.int64), rms)


def _fit_minimal(src: np.ndarray, dst: np.ndarray
                 ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched Kabsch over (K, s, 3) sample blocks; flags degenerate ones."""
    sc = src.mean(axis=1, keepdims=True)
    dc = dst.mean(axis=1, keepdims=True)
    h = np.einsum("kpi,kpj->kij", src - sc, dst - dc)
    u, svals, vt = np.linalg.svd(h)
    valid = svals[:, 1] > 1e-12 * np.maximum(svals[:, 0], 1e-300)
    v = vt.transpose(0, 2, 1)
    det = np.linalg.det(v @ u.transpose(0, 2, 1))
    v[det < 0.0, :, 2] *= -1.0
    rot = v @ u.transpose(0, 2, 1)
    trans = dc[:, 0, :] - np.einsum("kij,kj->ki", rot, sc[:, 0, :])
    return rot, trans, valid


def compensate(t_star: RigidTransform, t_plane: RigidTransform
               ) -> RigidTransform:
    """Strip a prior alignment from an estimated motion: t_star o t_plane^-1.

    If t_star maps frame B to the world and t_plane maps B to the sensor
    frame A (for the pose pipeline: rectified back to raw), the result
    maps A to the world.
    """
    return compose(t_star, invert(t_plane))
