"""Linear blend skinning of the clothed mesh and per-triangle frames."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..asset.types import AvatarAsset
from .kinematics import Pose, skinning_matrices
from .largesteps import LaplacianSystem, largesteps_map
from .mlp import predict_deformation, predict_illumination

DEGENERATE_AREA = 1e-12  # twice the triangle area, m^2


@dataclass
class TriangleFrames:
    """Posed and rest edge frames for every triangle.

    `local_to_world` maps a splat's triangle-local axes to world space. It is
    the rest-to-posed affine A times the orthonormal rest frame
    [E1/|E1|, N x E1/|E1|, N], so local z is always the triangle normal.
    """

    p0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    n: np.ndarray
    rest_e1: np.ndarray
    rest_e2: np.ndarray
    rest_n: np.ndarray
    affine: np.ndarray
    local_to_world: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return len(self.p0)

    @property
    def centroid(self) -> np.ndarray:
        return self.p0 + (self.e1 + self.e2) / 3.0


@dataclass
class PosedGeometry:
    vertices: np.ndarray  # (N, 3) world
    frames: TriangleFrames
    intensity: np.ndarray  # (N,) Lv


def _edges(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - p0
    e2 = vertices[triangles[:, 2]] - p0
    c = np.cross(e1, e2)
    area2 = np.linalg.norm(c, axis=1)
    degenerate = ~(area2 > DEGENERATE_AREA)
    n = c / np.where(degenerate, 1.0, area2)[:, None]
    n[degenerate] = 0.0
    return p0, e1, e2, n, degenerate


def rest_frames(vertices, triangles):
    """Rest edges, normal, inverse edge matrix and orthonormal rest frame."""
    _, e1, e2, n, degenerate = _edges(vertices, triangles)
    m = np.stack([e1, e2, n], axis=2)
    m[degenerate] = np.eye(3)
    inv = np.linalg.inv(m)
    t = e1 / np.maximum(np.linalg.norm(e1, axis=1), 1e-300)[:, None]
    frame = np.stack([t, np.cross(n, t), n], axis=2)
    frame[degenerate] = np.eye(3)
    return e1, e2, n, inv, frame, degenerate


class Rig:
    """Per-asset constant state for posing: rest frames, skin and the LS system."""

    def __init__(self, asset: AvatarAsset, direct_solve: bool = False):
        self.asset = asset
        self.template = asset.template_vertices()
        self.triangles = asset.triangles()
        self.joints, self.weights = asset.skin()
        self.rest_vertices = self.template + asset.static_offsets.astype(np.float64)
        (self.rest_e1, self.rest_e2, self.rest_n, self._rest_inv, self.rest_frame,
         self.rest_degenerate) = rest_frames(self.rest_vertices, self.triangles)
        self.system = LaplacianSystem.for_mesh(self.triangles, len(self.template), asset.laplacian_lambda, direct=direct_solve)
        # triangle frames only depend on posed vertices, so a rest frame
        # composed with A can be precomputed as inv(rest edges) @ rest frame
        self._rest_to_local = self._rest_inv @ self.rest_frame

    def deformation(self, pose: Pose, enabled: bool = True) -> np.ndarray:
        """Euclidean pose-dependent offsets LS(dV^d(theta))."""
        if not enabled:
            return np.zeros_like(self.template)
        u = predict_deformation(self.asset.deform_net, pose, self.template)
        return largesteps_map(self.system, u)

    def illumination(self, pose: Pose, enabled: bool = True) -> np.ndarray:
        if not enabled:
            return np.ones(len(self.template))
        return predict_illumination(self.asset.illum_net, pose, self.template)

    def skin(self, pose: Pose, offsets: Optional[np.ndarray], intensity: np.ndarray) -> PosedGeometry:
        mats = skinning_matrices(self.asset.skeleton, pose)[:, :3, :]
        v = self.rest_vertices if offsets is None else self.rest_vertices + offsets
        blend = np.einsum("nk,nkij->nij", self.weights, mats[self.joints])
        posed = np.einsum("nij,nj->ni", blend[:, :, :3], v) + blend[:, :, 3]
        return PosedGeometry(posed, self.frames(posed), intensity)

    def frames(self, posed: np.ndarray) -> TriangleFrames:
        return _posed_frames(posed, self.triangles, (self.rest_e1, self.rest_e2, self.rest_n), self._rest_inv,
                             self._rest_to_local, self.rest_degenerate)


def _posed_frames(posed, triangles, rest_edges, rest_inv, rest_to_local, rest_degenerate) -> TriangleFrames:
    p0, e1, e2, n, degenerate = _edges(posed, triangles)
    degenerate = degenerate | rest_degenerate
    posed_m = np.stack([e1, e2, n], axis=2)
    affine = posed_m @ rest_inv
    l2w = posed_m @ rest_to_local
    affine[degenerate] = 0.0
    l2w[degenerate] = 0.0
    return TriangleFrames(p0, e1, e2, n, *rest_edges, affine, l2w, degenerate)


def triangle_frames(rest_vertices, posed_vertices, triangles) -> TriangleFrames:
    """Frames for an arbitrary rest/posed vertex pair (no rig state needed)."""
    triangles = np.asarray(triangles, dtype=np.int64)
    e1, e2, n, inv, frame, degenerate = rest_frames(np.asarray(rest_vertices, dtype=np.float64), triangles)
    return _posed_frames(np.asarray(posed_vertices, dtype=np.float64), triangles, (e1, e2, n), inv, inv @ frame,
                         degenerate)


def skin_vertices(asset: AvatarAsset, pose: Pose, enable_deform: bool = True, enable_illum: bool = True,
                  rig: Optional[Rig] = None) -> PosedGeometry:
    """V = LBS(V_T + dV^s + LS(dV^d(theta)), theta), with frames and Lv."""
    rig = rig or Rig(asset)
    x = rig.deformation(pose, enable_deform)
    return rig.skin(pose, x, rig.illumination(pose, enable_illum))
