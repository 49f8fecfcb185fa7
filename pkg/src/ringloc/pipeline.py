"""End-to-end localization and the synthetic benchmark loop.

One frame runs: ground rectification, cylindrical projection and
voxelization, per-voxel coordinate prediction (simulation oracle or the
trained regressor), reliability selection, robust pose search, and
finally compensation of the rectification, yielding the raw-sensor to
world motion.

Every stage draws from a seed derived from (run seed, frame, stage), so
a whole benchmark is a pure function of its config and seed.  Frames
that fail (degenerate plane, no consensus, emptied scan) are recorded
with their error name and skipped, not fatal.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .config import PipelineConfig
from .encoder import EncoderWeights, encode
from .errors import RinglocError
from .metrics import TrajectoryResult
from .plane import rectify
from .pose_solve import PoseEstimate, compensate, estimate_pose_ransac, \
    select_reliable
from .projection import project_cylindrical, recover_cartesian, voxelize
from .regressor import RegressorWeights, regress
from .se3 import RigidTransform, invert
from .simulate import Perturbation, Scan, SyntheticWorld, WorldSpec, \
    effective_truth, generate_world, loop_trajectory, oracle_predict, \
    perturb_scan, scan_seed, simulate_scan

THREADS_ENV = "LEADER_GEO_THREADS"

# Stage tags for per-frame seed derivation.
SEED_SCAN = 0
SEED_PLANE = 1
SEED_ORACLE = 2
SEED_POSE = 3
SEED_PERTURB = 4


@dataclass
class LocalizationResult:
    transform: RigidTransform  # raw sensor frame -> world
    t_plane: RigidTransform  # raw -> rectified
    pose: PoseEstimate  # consensus in the rectified frame
    n_points: int
    n_voxels: int
    n_selected: int


def worker_count() -> int:
    """Thread count from the environment, defaulting to serial."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def world_spec_from(cfg: PipelineConfig) -> WorldSpec:
    return WorldSpec(n_boxes=cfg.world.n_boxes,
                     n_cylinders=cfg.world.n_cylinders,
                     keepout_radius=cfg.trajectory.radius)


def localize_scan(scan: Scan, cfg: PipelineConfig, frame_seed: int,
                  predictor: str = "oracle",
                  encoder_weights: Optional[EncoderWeights] = None,
                  regressor_weights: Optional[RegressorWeights] = None
                  ) -> LocalizationResult:
    """Localize one scan against the world.

    The oracle predictor scores every source point from its simulated
    ground truth, and each voxel inherits its representative's
    prediction; the local side of a correspondence is the
    representative's exact rectified coordinate.  The regressor
    predictor works from encoded voxel features and pairs them with the
    voxel centers mapped back to Cartesian space, since the grid is all
    it sees.
    """
    rect_cloud, t_plane = rectify(
        scan.cloud, replace(cfg.plane, seed=scan_seed(frame_seed, SEED_PLANE)))
    projected = project_cylindrical(rect_cloud, cfg.projection)
    voxels = voxelize(projected, cfg.projection)
    src = voxels.source_index

    if predictor == "oracle":
        coords, scores = oracle_predict(
            scan.gt_world, scan.classes, cfg.oracle,
            seed=scan_seed(frame_seed, SEED_ORACLE))
        local = rect_cloud.xyz[src]
        pred = coords[src]
        u = scores[src]
    elif predictor == "regressor":
        if encoder_weights is None or regressor_weights is None:
            raise ValueError("regressor predictor needs both weight sets")
        feats = encode(voxels, encoder_weights)
        pred, u = regress(feats, regressor_weights)
        local = recover_cartesian(voxels, cfg.projection).xyz
    else:
        raise ValueError(f"unknown predictor '{predictor}'")

    selected = select_reliable(u, cfg.selection)
    estimate = estimate_pose_ransac(
        local[selected], pred[selected],
        replace(cfg.pose, seed=scan_seed(frame_seed, SEED_POSE)))
    transform = compensate(estimate.transform, invert(t_plane))
    return LocalizationResult(transform, t_plane, estimate,
                              len(scan.cloud), len(voxels), len(selected))


@dataclass
class BenchRow:
    """One perturbation's trajectory outcome."""

    label: str
    result: TrajectoryResult
    failures: List[Tuple[int, str]]


def simulate_trajectory(cfg: PipelineConfig, run_seed: int
                        ) -> Tuple[SyntheticWorld, List[RigidTransform],
                                   List[Scan]]:
    """World, poses, and the unperturbed scan of every frame."""
    world = generate_world(world_spec_from(cfg), cfg.world.seed)
    poses = loop_trajectory(cfg.trajectory.n_poses, cfg.trajectory.radius,
                            cfg.trajectory.height)
    scans = [
        simulate_scan(world, pose, cfg.sensor,
                      seed=scan_seed(scan_seed(run_seed, i), SEED_SCAN))
        for i, pose in enumerate(poses)
    ]
    return world, poses, scans


def run_perturbed_trajectory(cfg: PipelineConfig, run_seed: int,
                             poses: List[RigidTransform], scans: List[Scan],
                             perturbation: Optional[Perturbation],
                             predictor: str = "oracle",
                             encoder_weights=None, regressor_weights=None
                             ) -> BenchRow:
    """Localize every frame under one perturbation (None for baseline)."""
    label = "baseline"
    if perturbation is not None:
        label = f"{perturbation.kind}:{perturbation.magnitude:g}"

    def one_frame(i: int):
        frame_seed = scan_seed(run_seed, i)
        scan, truth = scans[i], poses[i]
        if perturbation is not None:
            scan, applied = perturb_scan(scan, perturbation,
                                         scan_seed(frame_seed, SEED_PERTURB))
            truth = effective_truth(truth, applied)
        res = localize_scan(scan, cfg, frame_seed, predictor,
                            encoder_weights, regressor_weights)
        return res.transform, truth

    outcomes: List[object] = [None] * len(scans)

    def guarded(i: int):
        try:
            outcomes[i] = one_frame(i)
        except RinglocError as exc:
            outcomes[i] = type(exc).__name__

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(guarded, range(len(scans))))
    else:
        for i in range(len(scans)):
            guarded(i)

    row = BenchRow(label, TrajectoryResult(), [])
    for i, out in enumerate(outcomes):
        if isinstance(out, str):
            row.failures.append((i, out))
        else:
            estimate, truth = out
            row.result.add(i, estimate, truth)
    return row


def run_bench(cfg: PipelineConfig, run_seed: int,
              perturbations: List[Optional[Perturbation]],
              predictor: str = "oracle",
              encoder_weights=None, regressor_weights=None,
              scans: Optional[List[Scan]] = None,
              poses: Optional[List[RigidTransform]] = None
              ) -> List[BenchRow]:
    """Baseline plus each perturbation over the standard trajectory.

    Pass precomputed (poses, scans) to amortize simulation across calls;
    they must have come from the same config and seed.
    """
    if scans is None or poses is None:
        _, poses, scans = simulate_trajectory(cfg, run_seed)
    rows = []
    for p in [None] + [p for p in perturbations if p is not None]:
        rows.append(run_perturbed_trajectory(
            cfg, run_seed, poses, scans, p, predictor,
            encoder_weights, regressor_weights))
    return rows
