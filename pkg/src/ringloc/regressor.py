"""Per-voxel coordinate and reliability regressor.

A stack of multi-head max layers: each layer projects the feature to
`heads` candidate vectors and keeps the elementwise max across heads,
followed by layer normalization and a leaky rectifier.  A final affine
layer emits four numbers per voxel: the predicted world coordinate and a
raw reliability score u.

Forward and backward passes are written out by hand; the max routes
gradient to the winning head only (lowest head index on exact ties), and
everything is plain batched matmuls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ShapeMismatch
from .io import read_tensors, write_tensors

LEAKY_SLOPE = 0.01
LN_EPS = 1e-5
N_OUTPUTS = 4  # x, y, z, reliability


@dataclass
class RegressorConfig:
    width: int = 64  # feature width N carried between layers
    heads: int = 4  # candidate vectors per max layer
    layers: int = 5

    def __post_init__(self):
        if self.width < 1 or self.heads < 1 or self.layers < 1:
            raise ValueError("width, heads, and layers must be positive")


@dataclass
class RegressorWeights:
    config: RegressorConfig
    tensors: Dict[str, np.ndarray]


def _regressor_layout(cfg: RegressorConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    layout: List[Tuple[str, Tuple[int, ...]]] = []
    for i in range(1, cfg.layers + 1):
        layout += [
            (f"mhm{i}.w", (cfg.width, cfg.heads * cfg.width)),
            (f"mhm{i}.b", (cfg.heads * cfg.width,)),
            (f"ln{i}.g", (cfg.width,)),
            (f"ln{i}.b", (cfg.width,)),
        ]
    layout += [("head.w", (cfg.width, N_OUTPUTS)), ("head.b", (N_OUTPUTS,))]
    return layout


def init_regressor_weights(config: Optional[RegressorConfig] = None,
                           seed: int = 0) -> RegressorWeights:
    """Uniform +-1/sqrt(fan_in) for affine tensors; norms start at (1, 0)."""
    config = config or RegressorConfig()
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in _regressor_layout(config):
        if name.startswith("ln"):
            tensors[name] = (np.ones(shape) if name.endswith(".g")
                             else np.zeros(shape))
            continue
        bound = 1.0 / np.sqrt(config.width)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return RegressorWeights(config, tensors)


def save_regressor_weights(path, weights: RegressorWeights) -> None:
    write_tensors(path, [(n, weights.tensors[n])
                         for n, _ in _regressor_layout(weights.config)])


def load_regressor_weights(path) -> RegressorWeights:
    tensors = read_tensors(path)
    width, kn = tensors["mhm1.w"].shape
    layers = sum(1 for n in tensors if n.startswith("mhm") and n.endswith(".w"))
    config = RegressorConfig(width, kn // width, layers)
    expected = {n: s for n, s in _regressor_layout(config)}
    if expected != {n: t.shape for n, t in tensors.items()}:
        raise ValueError("weight file shapes do not form a valid regressor")
    return RegressorWeights(config, tensors)


def regress(features: np.ndarray, weights: RegressorWeights
            ) -> Tuple[np.ndarray, np.ndarray]:
    """Predict (coords (M, 3), reliability u (M,)) from (M, N) features."""
    out, _ = _forward(features, weights)
    return out[:, :3].copy(), out[:, 3].copy()


def regress_backward(features: np.ndarray, weights: RegressorWeights,
                     grad_coords: np.ndarray, grad_u: np.ndarray
                     ) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Gradients of sum(grad_coords * coords) + sum(grad_u * u).

    Returns per-tensor gradients (same names and shapes as the weights)
    and the gradient with respect to the input features.
    """
    _, cache = _forward(features, weights)
    return _backward(weights, cache, grad_coords, grad_u)


def _forward(features: np.ndarray, weights: RegressorWeights):
    cfg = weights.config
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != cfg.width:
        raise ShapeMismatch(
            f"features must be (M, {cfg.width}), got {features.shape}")
    t = weights.tensors
    h = features
    layers = []
    for i in range(1, cfg.layers + 1):
        z = h @ t[f"mhm{i}.w"] + t[f"mhm{i}.b"]
        zr = z.reshape(len(h), cfg.heads, cfg.width)
        win = np.argmax(zr, axis=1)  # first max wins ties
        mx = np.take_along_axis(zr, win[:, None, :], axis=1)[:, 0, :]

        mu = mx.mean(axis=1, keepdims=True)
        xc = mx - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
        xhat = xc * inv
        y = xhat * t[f"ln{i}.g"] + t[f"ln{i}.b"]
        a = np.where(y > 0.0, y, LEAKY_SLOPE * y)
        layers.append((h, win, xhat, inv, y))
        h = a
    out = h @ t["head.w"] + t["head.b"]
    return out, (layers, h)


def _backward(weights: RegressorWeights, cache, grad_coords, grad_u):
    cfg = weights.config
    t = weights.tensors
    layers, last = cache
    g_out = np.hstack([np.asarray(grad_coords, dtype=np.float64),
                       np.asarray(grad_u, dtype=np.float64)[:, None]])
    grads: Dict[str, np.ndarray] = {
        "head.w": last.T @ g_out,
        "head.b": g_out.sum(axis=0),
    }
    g_h = g_out @ t["head.w"].T
    for i in range(cfg.layers, 0, -1):
        h, win, xhat, inv, y = layers[i - 1]
        g_y = g_h * np.where(y > 0.0, 1.0, LEAKY_SLOPE)

        grads[f"ln{i}.g"] = (g_y * xhat).sum(axis=0)
        grads[f"ln{i}.b"] = g_y.sum(axis=0)
        g_xhat = g_y * t[f"ln{i}.g"]
        # Standard layer-norm backward: remove the mean and the xhat
        # component, both introduced by normalizing over the feature axis.
        g_mx = inv * (g_xhat - g_xhat.mean(axis=1, keepdims=True)
                      - xhat * (g_xhat * xhat).mean(axis=1, keepdims=True))

        g_zr = np.zeros((len(h), cfg.heads, cfg.width))
        np.put_along_axis(g_zr, win[:, None, :], g_mx[:, None, :], axis=1)
        g_z = g_zr.reshape(len(h), cfg.heads * cfg.width)
        grads[f"mhm{i}.w"] = h.T @ g_z
        grads[f"mhm{i}.b"] = g_z.sum(axis=0)
        g_h = g_z @ t[f"mhm{i}.w"].T
    return grads, g_h
