"""Triangle-bound splats to world space, SH color and illumination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat
from .asset.types import SplatAttributes

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


@dataclass
class WorldSplats:
    """World-space splats; covariance is basis @ basis.T."""

    mean: np.ndarray  # (n, 3)
    basis: np.ndarray  # (n, 3, 3)
    color: np.ndarray  # (n, 3)
    opacity: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.mean)

    def covariance(self) -> np.ndarray:
        return self.basis @ np.swapaxes(self.basis, 1, 2)


def splat_means(t, u, v, w, frames) -> np.ndarray:
    """u p0 + v p1 + (1-u-v) p2 + w n, using posed frames indexed by triangle id."""
    u = np.asarray(u, dtype=np.float64)[:, None]
    v = np.asarray(v, dtype=np.float64)[:, None]
    w = np.asarray(w, dtype=np.float64)[:, None]
    p0, e1, e2 = frames.p0[t], frames.e1[t], frames.e2[t]
    # p1 = p0 + e1, p2 = p0 + e2
    return p0 + v * e1 + (1.0 - u - v) * e2 + w * frames.n[t]


def splat_to_world(splats: SplatAttributes, frames):
    """Means and covariance bases (A R(r) diag(s) in the triangle's local frame)."""
    t = np.asarray(splats.t, dtype=np.int64)
    mean = splat_means(t, splats.u, splats.v, np.where(splats.surface2d, 0.0, splats.w), frames)
    scale = np.exp(splats.log_scale.astype(np.float64))
    scale[np.asarray(splats.surface2d, dtype=bool), 2] = 0.0
    rot = quat.to_matrix(quat.normalize(splats.rotation.astype(np.float64)))
    basis = frames.local_to_world[t] @ rot * scale[:, None, :]
    return mean, basis


def eval_sh(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Real SH up to degree 3; sh is (n, K, 3), dirs (n, 3) unit. Returns (n, 3) without offset."""
    k = sh.shape[1]
    out = SH_C0 * sh[:, 0]
    if k < 4:
        return out
    x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    out = out - SH_C1 * y * sh[:, 1] + SH_C1 * z * sh[:, 2] - SH_C1 * x * sh[:, 3]
    if k < 9:
        return out
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out = (out + SH_C2[0] * xy * sh[:, 4] + SH_C2[1] * yz * sh[:, 5] + SH_C2[2] * (2 * zz - xx - yy) * sh[:, 6]
           + SH_C2[3] * xz * sh[:, 7] + SH_C2[4] * (xx - yy) * sh[:, 8])
    if k < 16:
        return out
    out = (out + SH_C3[0] * y * (3 * xx - yy) * sh[:, 9] + SH_C3[1] * xy * z * sh[:, 10]
           + SH_C3[2] * y * (4 * zz - xx - yy) * sh[:, 11] + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh[:, 12]
           + SH_C3[4] * x * (4 * zz - xx - yy) * sh[:, 13] + SH_C3[5] * z * (xx - yy) * sh[:, 14]
           + SH_C3[6] * x * (xx - 3 * yy) * sh[:, 15])
    return out


def eval_color(sh: np.ndarray, view_dir: np.ndarray, intensity) -> np.ndarray:
    """clamp(SH(d) + 0.5, >= 0) scaled by the splat's illumination intensity."""
    sh = np.asarray(sh, dtype=np.float64)
    single = sh.ndim == 2
    if single:
        sh, view_dir = sh[None], np.asarray(view_dir, dtype=np.float64)[None]
    c = np.maximum(eval_sh(sh, np.asarray(view_dir, dtype=np.float64)) + 0.5, 0.0)
    c = c * np.asarray(intensity, dtype=np.float64).reshape(-1, 1)
    return c[0] if single else c


def interpolate_intensity(t, u, v, triangles, vertex_intensity) -> np.ndarray:
    """Barycentric blend of per-vertex Lv: u Lv0 + v Lv1 + (1-u-v) Lv2."""
    tri = triangles[np.asarray(t, dtype=np.int64)]
    lv = np.asarray(vertex_intensity, dtype=np.float64)[tri]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.maximum(u * lv[:, 0] + v * lv[:, 1] + (1.0 - u - v) * lv[:, 2], 0.0)


def shade(splats: SplatAttributes, posed, triangles, camera_position) -> WorldSplats:
    """Full transform and shade of decoded splats for one viewpoint."""
    mean, basis = splat_to_world(splats, posed.frames)
    d = mean - np.asarray(camera_position, dtype=np.float64)
    d /= np.maximum(np.linalg.norm(d, axis=1), 1e-12)[:, None]
    lv = interpolate_intensity(splats.t, splats.u, splats.v, triangles, posed.intensity)
    color = eval_color(splats.sh.astype(np.float64), d, lv)
    return WorldSplats(mean, basis, color, splats.opacity.astype(np.float64))
