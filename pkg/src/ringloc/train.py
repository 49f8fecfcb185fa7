"""Toy training of the coordinate regressor on frozen encoder features.

The encoder stays fixed at its random initialization; only the
regressor trains, by full-batch gradient descent with a per-epoch
multiplicative step decay.  Scenes make the reliability signal
structural: the encoder's features ignore the ring coordinate, so
ground and pole points look the same from every azimuth while their
world targets disagree, and no regressor can fit them.  Building
points carry distinctive geometry and can be learned.  The
reliability-weighted loss should therefore learn to rank building
points above ground, which is what the quartile evaluation checks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import PipelineConfig
from .encoder import EncoderWeights, encode
from .errors import EmptyScan
from . import losses
from .pipeline import SEED_PLANE, simulate_trajectory
from .plane import rectify
from .projection import project_cylindrical, voxelize
from .regressor import RegressorWeights, init_regressor_weights, regress, \
    regress_backward
from .simulate import scan_seed

LOSS_KINDS = ("trr", "mean", "matching")


@dataclass
class TrainingSet:
    """Per-voxel features and targets pooled over the training frames."""

    features: np.ndarray  # (P, N) frozen encoder outputs
    targets: np.ndarray  # (P, 3) world-frame ground truth
    classes: np.ndarray  # (P,) surface class per point
    scan_ids: np.ndarray  # (P,) originating frame

    def scan_slices(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.scan_ids == s)
                for s in np.unique(self.scan_ids)]


@dataclass
class EpochStats:
    epoch: int
    loss: float  # mean per-frame loss
    lr: float  # step size used this epoch
    n_clamped: int  # points whose score left the clamp band


def build_training_set(cfg: PipelineConfig, encoder_weights: EncoderWeights,
                       run_seed: int = 0) -> TrainingSet:
    """Simulate, rectify, voxelize, and encode the training frames.

    Uses every cfg.train.scan_stride-th frame of the standard loop and a
    seeded voxel subsample of each, with targets taken per representative
    point.
    """
    _, poses, scans = simulate_trajectory(cfg, run_seed)
    rng = np.random.default_rng(cfg.train.seed)
    feats, targets, classes, scan_ids = [], [], [], []
    for i in range(0, len(scans), cfg.train.scan_stride):
        scan = scans[i]
        frame_seed = scan_seed(run_seed, i)
        rect_cloud, _ = rectify(scan.cloud, replace(
            cfg.plane, seed=scan_seed(frame_seed, SEED_PLANE)))
        voxels = voxelize(project_cylindrical(rect_cloud, cfg.projection),
                          cfg.projection)
        f = encode(voxels, encoder_weights)
        src = voxels.source_index
        take = np.arange(len(voxels))
        if len(take) > cfg.train.points_per_scan:
            take = np.sort(rng.choice(len(take), cfg.train.points_per_scan,
                                      replace=False))
        feats.append(f[take])
        targets.append(scan.gt_world[src[take]])
        classes.append(scan.classes[src[take]])
        scan_ids.append(np.full(len(take), i, dtype=np.int64))
    if not feats:
        raise EmptyScan("no training frames selected")
    return TrainingSet(np.vstack(feats), np.vstack(targets),
                       np.concatenate(classes), np.concatenate(scan_ids))


def _loss_and_grads(kind: str, pred: np.ndarray, tgt: np.ndarray,
                    u: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray, int]:
    if kind == "trr":
        breakdown = losses.reliability_loss(pred, tgt, u)
        g_pred, g_u = losses.reliability_loss_gradients(pred, tgt, u)
        return breakdown.total, g_pred, g_u, breakdown.n_clamped
    if kind == "mean":
        g_pred, g_u = losses.mean_distance_gradients(pred, tgt, u)
        return losses.mean_distance_loss(pred, tgt), g_pred, g_u, 0
    if kind == "matching":
        g_pred, g_u = losses.matching_gradients(pred, tgt, u)
        return losses.matching_loss(pred, tgt, u), g_pred, g_u, 0
    raise ValueError(f"unknown loss kind '{kind}'")


def train_regressor(tset: TrainingSet, cfg: PipelineConfig, loss_kind: str,
                    epochs: Optional[int] = None
                    ) -> Tuple[RegressorWeights, List[EpochStats]]:
    """Gradient descent over the pooled frames.

    Losses normalize their weights within a frame, so gradients are
    computed frame by frame and averaged; epochs=0 returns the seeded
    initialization untouched.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss kind must be one of {LOSS_KINDS}")
    epochs = cfg.train.epochs if epochs is None else epochs
    weights = init_regressor_weights(cfg.regressor, seed=cfg.train.seed)
    slices = tset.scan_slices()
    telemetry: List[EpochStats] = []
    lr = cfg.train.lr
    for epoch in range(epochs):
        total = 0.0
        clamped = 0
        accum: Dict[str, np.ndarray] = {
            name: np.zeros_like(t) for name, t in weights.tensors.items()}
        for rows in slices:
            pred, u = regress(tset.features[rows], weights)
            loss, g_pred, g_u, n_cl = _loss_and_grads(
                loss_kind, pred, tset.targets[rows], u)
            grads, _ = regress_backward(tset.features[rows], weights,
                                        g_pred, g_u)
            for name, g in grads.items():
                accum[name] += g
            total += loss
            clamped += n_cl
        scale = lr / len(slices)
        for name in weights.tensors:
            weights.tensors[name] -= scale * accum[name]
        telemetry.append(EpochStats(epoch, total / len(slices), lr, clamped))
        lr *= cfg.train.decay
    return weights, telemetry


def quartile_errors(u: np.ndarray, errors: np.ndarray) -> np.ndarray:
    """Mean error per predicted-reliability quartile, most reliable first."""
    order = np.argsort(-np.asarray(u, dtype=np.float64), kind="stable")
    buckets = np.array_split(order, 4)
    return np.array([float(np.mean(errors[b])) for b in buckets])


def evaluate_quartiles(tset: TrainingSet, weights: RegressorWeights
                       ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Predicted scores, per-point errors, and the quartile means."""
    pred, u = regress(tset.features, weights)
    errors = losses.distance_residuals(pred, tset.targets)
    return u, errors, quartile_errors(u, errors)
