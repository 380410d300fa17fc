"""Inference for the pose-conditioned deformation and illumination nets.

Both nets run per vertex with shared weights. The pose features are the
same for every vertex, so the first layer is split: the pose half is
evaluated once and broadcast, only the vertex half runs per row.
"""

from __future__ import annotations

import numpy as np

from ..asset.types import Activation, InputSpec, MlpWeights, OutputSpace

INTENSITY_MAX = 4.0


def _act(x, activation):
    if activation == Activation.RELU:
        return np.maximum(x, 0.0)
    return np.tanh(x)


def forward(net: MlpWeights, pose_features: np.ndarray, vertices=None) -> np.ndarray:
    """Raw network output, (N, out_dim) for per-vertex nets or (1, out_dim) for pose-only."""
    pose_features = np.asarray(pose_features, dtype=np.float64).reshape(-1)
    first = net.layers[0]
    w = first.weight.astype(np.float64)
    pd = len(pose_features)
    if net.input_spec == InputSpec.POSE_AND_CANONICAL_VERTEX:
        if vertices is None:
            raise ValueError("net needs canonical vertices")
        vertices = np.asarray(vertices, dtype=np.float64)
        if w.shape[0] != pd + 3 or vertices.shape[1:] != (3,):
            raise ValueError(f"input width {w.shape[0]} does not match pose ({pd}) + vertex (3)")
        h = vertices @ w[pd:] + (pose_features @ w[:pd] + first.bias)
    else:
        if w.shape[0] != pd:
            raise ValueError(f"input width {w.shape[0]} does not match pose features ({pd})")
        h = (pose_features @ w + first.bias)[None, :]
    for layer in net.layers[1:]:
        h = _act(h, net.activation)
        h = h @ layer.weight.astype(np.float64) + layer.bias
    return h


def predict_deformation(net: MlpWeights, pose, canonical_vertices) -> np.ndarray:
    """Per-vertex offsets in LargeSteps space, (N, 3)."""
    if net.output_space != OutputSpace.LARGESTEPS_OFFSET or net.out_dim != 3:
        raise ValueError("deformation net must output 3-vectors in LargeSteps space")
    out = forward(net, pose.encoding(), canonical_vertices)
    return np.broadcast_to(out, (len(canonical_vertices), 3)).copy()


def predict_illumination(net: MlpWeights, pose, canonical_vertices) -> np.ndarray:
    """Per-vertex intensity: softplus of the net output, clamped to [0, 4]."""
    if net.output_space != OutputSpace.INTENSITY or net.out_dim != 1:
        raise ValueError("illumination net must output one intensity")
    raw = forward(net, pose.encoding(), canonical_vertices)[:, 0]
    lv = np.clip(np.logaddexp(0.0, raw), 0.0, INTENSITY_MAX)
    return np.broadcast_to(lv, (len(canonical_vertices),)).copy()
