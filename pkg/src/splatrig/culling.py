"""Hierarchical visibility: component spheres, back-facing triangles, per-splat frustum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binding import splat_means

BACKFACE_EPS = 1e-6
SPHERE_PAD = 1e-4
PIXEL_MARGIN = 4.0  # covers the 0.3 px^2 dilation (< 1.7 px at 3 sigma) and pixel-center rounding


@dataclass
class Frustum:
    """Six inward planes n . p + d >= 0 in world space: left, right, top, bottom, near, far."""

    normals: np.ndarray  # (6, 3)
    offsets: np.ndarray  # (6,)
    near: float
    far: float

    @classmethod
    def from_camera(cls, camera, pixel_margin: float = PIXEL_MARGIN) -> "Frustum":
        m = pixel_margin
        x_lo = (-m - camera.cx) / camera.fx
        x_hi = (camera.width + m - camera.cx) / camera.fx
        y_lo = (-m - camera.cy) / camera.fy
        y_hi = (camera.height + m - camera.cy) / camera.fy
        nv = np.array([
            [1.0, 0.0, -x_lo],
            [-1.0, 0.0, x_hi],
            [0.0, 1.0, -y_lo],
            [0.0, -1.0, y_hi],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ])
        nv /= np.linalg.norm(nv, axis=1)[:, None]
        dv = np.array([0.0, 0.0, 0.0, 0.0, -camera.near, camera.far])
        r, t = camera.rotation, camera.world_to_view[:3, 3]
        return cls(nv @ r, dv + nv @ t, camera.near, camera.far)

    def signed_distance(self, points) -> np.ndarray:
        """(n, 6) signed distances to each plane, positive inside."""
        return np.asarray(points, dtype=np.float64) @ self.normals.T + self.offsets

    def intersects_spheres(self, centers, radii) -> np.ndarray:
        """False only when a sphere lies strictly outside some plane."""
        d = self.signed_distance(centers)
        return np.all(d >= -np.asarray(radii, dtype=np.float64).reshape(-1, 1), axis=1)


@dataclass
class VisibilityBuffer:
    component: np.ndarray  # (C,) bool
    triangle: np.ndarray  # (T,) bool
    splat: np.ndarray  # (n,) bool
    counts: dict = field(default_factory=dict)

    @property
    def survivors(self) -> np.ndarray:
        return np.flatnonzero(self.splat)

    def union(self, other: "VisibilityBuffer") -> "VisibilityBuffer":
        counts = {k: int(max(self.counts.get(k, 0), other.counts.get(k, 0))) for k in self.counts}
        out = VisibilityBuffer(self.component | other.component, self.triangle | other.triangle, self.splat | other.splat, counts)
        out.counts["splat"] = int(out.splat.sum())
        return out


def posed_spheres(vertices, asset):
    """Per-component sphere: centroid of posed vertices, radius = max distance + pad."""
    offs = asset.vertex_offsets()
    centers, radii = [], []
    for i in range(len(asset.components)):
        v = vertices[offs[i]:offs[i + 1]]
        c = v.mean(axis=0)
        centers.append(c)
        radii.append(np.sqrt(((v - c) ** 2).sum(axis=1).max()) + SPHERE_PAD)
    return np.array(centers), np.array(radii)


def cull_meshes(centers, radii, frustum: Frustum, margin: float = 0.0) -> np.ndarray:
    """Component bits. `margin` widens every sphere to cover splats that extend past the mesh."""
    return frustum.intersects_spheres(centers, np.asarray(radii) + margin)


def cull_triangles(component_bits, triangle_component, closed, frames, camera_position) -> np.ndarray:
    """Triangle bits: closed-component triangles facing away are cleared; degenerate ones always."""
    keep = component_bits[triangle_component].copy()
    facing = np.einsum("ij,ij->i", frames.n, np.asarray(camera_position, dtype=np.float64) - frames.centroid)
    back = (facing <= -BACKFACE_EPS) & closed[triangle_component]
    keep &= ~back
    keep &= ~frames.degenerate
    return keep


def max_stretch(frames) -> float:
    """Largest spectral norm of the local-to-world maps over usable triangles."""
    m = frames.local_to_world[~frames.degenerate]
    if not len(m):
        return 0.0
    return float(np.sqrt(np.linalg.eigvalsh(np.swapaxes(m, 1, 2) @ m)[:, -1].max()))


def splat_radius(max_scale: float, frames, cutoff: float = 3.0) -> float:
    """Conservative world radius of any splat's cutoff ellipsoid this frame."""
    return cutoff * max_scale * max_stretch(frames)


def cull_splats(positions, component_bits, triangle_bits, triangle_component, frames, frustum: Frustum,
                radius: float, frustum_test: bool = True):
    """Splat mask: component alive, (l = 0 or triangle alive), inflated mean inside the frustum.

    Returns (mask, world means). Splats on degenerate triangles are always dropped.
    """
    t = np.asarray(positions.t, dtype=np.int64)
    mask = component_bits[triangle_component[t]]
    mask &= (positions.label == 0) | triangle_bits[t]
    mask &= ~frames.degenerate[t]
    means = splat_means(t, positions.u, positions.v, positions.w, frames)
    if frustum_test:
        idx = np.flatnonzero(mask)
        mask[idx] = frustum.intersects_spheres(means[idx], np.full(len(idx), radius))
    return mask, means


def cull(asset, positions, posed, camera, max_scale: float, max_abs_w: float, cutoff: float = 3.0,
         mesh: bool = True, triangle: bool = True, splat: bool = True, pixel_margin: float = PIXEL_MARGIN):
    """All three tiers for one camera. Returns (VisibilityBuffer, world means, splat radius)."""
    frames = posed.frames
    frustum = Frustum.from_camera(camera, pixel_margin)
    tri_comp = asset.triangle_component()
    n_comp = len(asset.components)
    radius = splat_radius(max_scale, frames, cutoff)
    if mesh:
        centers, radii = posed_spheres(posed.vertices, asset)
        comp_bits = cull_meshes(centers, radii, frustum, margin=radius + max_abs_w)
    else:
        comp_bits = np.ones(n_comp, dtype=bool)
    if triangle:
        closed = np.array([c.closed for c in asset.components], dtype=bool)
        tri_bits = cull_triangles(comp_bits, tri_comp, closed, frames, camera.position)
    else:
        tri_bits = comp_bits[tri_comp] & ~frames.degenerate
    mask, means = cull_splats(positions, comp_bits, tri_bits, tri_comp, frames, frustum, radius, frustum_test=splat)
    t = np.asarray(positions.t, dtype=np.int64)
    after_mesh = comp_bits[tri_comp[t]]
    after_tri = after_mesh & ((positions.label == 0) | tri_bits[t])
    counts = {"total": int(len(t)), "mesh": int(after_mesh.sum()), "triangle": int(after_tri.sum()), "splat": int(mask.sum())}
    return VisibilityBuffer(comp_bits, tri_bits, mask, counts), means, radius
