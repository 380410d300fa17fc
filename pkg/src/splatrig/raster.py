"""Perspective projection of world splats and a deterministic tile compositor.

View space follows the pinhole convention x right, y down, z forward;
pixel (i, j) has its center at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

DILATION = 0.3  # px^2 low-pass
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1.0 / 255.0


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_view: np.ndarray  # 4x4 rigid
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        self.world_to_view = np.asarray(self.world_to_view, dtype=np.float64).reshape(4, 4)
        self.width, self.height = int(self.width), int(self.height)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_view[:3, :3]

    @property
    def position(self) -> np.ndarray:
        r, t = self.world_to_view[:3, :3], self.world_to_view[:3, 3]
        return -r.T @ t

    @property
    def forward(self) -> np.ndarray:
        return self.world_to_view[2, :3].copy()

    @property
    def right(self) -> np.ndarray:
        return self.world_to_view[0, :3].copy()

    def to_view(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.world_to_view[:3, 3]

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "width": self.width,
                "height": self.height, "world_to_view": [float(x) for x in self.world_to_view.reshape(-1)],
                "near": self.near, "far": self.far}

    @classmethod
    def from_json(cls, data: dict) -> "Camera":
        try:
            return cls(float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]),
                       int(data["width"]), int(data["height"]), np.asarray(data["world_to_view"], dtype=np.float64),
                       float(data.get("near", 0.05)), float(data.get("far", 100.0)))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed camera: {exc}") from None

    def with_pose(self, world_to_view) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, world_to_view, self.near, self.far)


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-view transform for a camera at `eye` looking at `target` (y down in view)."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f /= np.linalg.norm(f)
    r = np.cross(f, np.asarray(up, dtype=np.float64))
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    m = np.eye(4)
    m[0, :3], m[1, :3], m[2, :3] = r, d, f
    m[:3, 3] = -m[:3, :3] @ eye
    return m


def load_camera(path) -> Camera:
    return Camera.from_json(json.loads(Path(path).read_text()))


@dataclass
class Projected:
    """Screen-space splats; rect is inclusive pixel bounds (x0, y0, x1, y1), empty when x0 > x1."""

    mean2d: np.ndarray  # (n, 2)
    cov2d: np.ndarray  # (n, 3) a, b, c of [[a, b], [b, c]]
    conic: np.ndarray  # (n, 3) inverse covariance
    depth: np.ndarray  # (n,)
    radius: np.ndarray  # (n,)
    rect: np.ndarray  # (n, 4) int32
    valid: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return len(self.depth)


def project_splats(mean, basis, camera: Camera, cutoff: float = 3.0) -> Projected:
    """EWA projection: cov2d = J W S W^T J^T + 0.3 I; invalid if outside [near, far]."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1, 3)
    basis = np.asarray(basis, dtype=np.float64).reshape(-1, 3, 3)
    pv = camera.to_view(mean)
    z = pv[:, 2]
    valid = (z >= camera.near) & (z <= camera.far)
    zs = np.where(valid, z, 1.0)
    x, y = pv[:, 0], pv[:, 1]
    mx = camera.fx * x / zs + camera.cx
    my = camera.fy * y / zs + camera.cy
    j = np.zeros((len(z), 2, 3))
    j[:, 0, 0] = camera.fx / zs
    j[:, 0, 2] = -camera.fx * x / (zs * zs)
    j[:, 1, 1] = camera.fy / zs
    j[:, 1, 2] = -camera.fy * y / (zs * zs)
    m = j @ (camera.rotation @ basis)
    a = np.einsum("ij,ij->i", m[:, 0], m[:, 0]) + DILATION
    b = np.einsum("ij,ij->i", m[:, 0], m[:, 1])
    c = np.einsum("ij,ij->i", m[:, 1], m[:, 1]) + DILATION
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = cutoff * np.sqrt(lam_max)
    rect = np.empty((len(z), 4), dtype=np.int64)
    with np.errstate(invalid="ignore"):
        rect[:, 0] = np.ceil(mx - radius - 0.5)
        rect[:, 1] = np.ceil(my - radius - 0.5)
        rect[:, 2] = np.floor(mx + radius - 0.5)
        rect[:, 3] = np.floor(my + radius - 0.5)
    np.clip(rect[:, 0], 0, camera.width, out=rect[:, 0])
    np.clip(rect[:, 1], 0, camera.height, out=rect[:, 1])
    np.clip(rect[:, 2], -1, camera.width - 1, out=rect[:, 2])
    np.clip(rect[:, 3], -1, camera.height - 1, out=rect[:, 3])
    rect[~valid] = (0, 0, -1, -1)
    return Projected(np.stack([mx, my], axis=1), np.stack([a, b, c], axis=1), conic, z, radius,
                     rect.astype(np.int32), valid)


def project_splat(mean, basis, camera: Camera, cutoff: float = 3.0):
    """Single-splat projection; raises ValueError if the splat is outside [near, far]."""
    p = project_splats(np.asarray(mean)[None], np.asarray(basis)[None], camera, cutoff)
    if not p.valid[0]:
        raise ValueError("splat is behind the near plane")
    a, b, c = p.cov2d[0]
    return p.mean2d[0], np.array([[a, b], [b, c]]), float(p.depth[0]), float(p.radius[0])


# ---------------------------------------------------------------------------
# tile compositor


@numba.njit(cache=True, nogil=True)
def _bin_tiles(rect, tile, tiles_x, tiles_y):
    """Per-tile splat lists in input (global sort) order: CSR offsets + indices."""
    n = rect.shape[0]
    counts = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    for i in range(n):
        x0, y0, x1, y1 = rect[i, 0], rect[i, 1], rect[i, 2], rect[i, 3]
        if x0 > x1 or y0 > y1:
            continue
        for ty in range(y0 // tile, y1 // tile + 1):
            for tx in range(x0 // tile, x1 // tile + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    index = np.empty(offsets[-1], dtype=np.int32)
    for i in range(n):
        x0, y0, x1, y1 = rect[i, 0], rect[i, 1], rect[i, 2], rect[i, 3]
        if x0 > x1 or y0 > y1:
            continue
        for ty in range(y0 // tile, y1 // tile + 1):
            for tx in range(x0 // tile, x1 // tile + 1):
                k = ty * tiles_x + tx
                index[fill[k]] = i
                fill[k] += 1
    return offsets, index


@numba.njit(cache=True, nogil=True)
def _composite_tiles(t_begin, t_end, offsets, index, mean2d, conic, opacity, color, rect, tile, tiles_x,
                     width, height, out):
    for k in range(t_begin, t_end):
        tx0 = (k % tiles_x) * tile
        ty0 = (k // tiles_x) * tile
        lo, hi = offsets[k], offsets[k + 1]
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                t = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                fx = px + 0.5
                fy = py + 0.5
                for q in range(lo, hi):
                    i = index[q]
                    if px < rect[i, 0] or px > rect[i, 2] or py < rect[i, 1] or py > rect[i, 3]:
                        continue
                    dx = fx - mean2d[i, 0]
                    dy = fy - mean2d[i, 1]
                    power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                    if power > 0.0:
                        continue
                    alpha = min(ALPHA_MAX, opacity[i] * np.exp(power))
                    if alpha < ALPHA_MIN:
                        continue
                    w = t * alpha
                    r += w * color[i, 0]
                    g += w * color[i, 1]
                    b += w * color[i, 2]
                    t *= 1.0 - alpha
                    if t < T_MIN:
                        break
                out[py, px, 0] = r
                out[py, px, 1] = g
                out[py, px, 2] = b
                out[py, px, 3] = 1.0 - t


def composite(proj: Projected, order, opacity, color, width: int, height: int, tile: int = 16,
              threads: int = 1) -> np.ndarray:
    """Front-to-back blend in `order`; returns float (H, W, 4) premultiplied RGBA over black."""
    order = np.asarray(order, dtype=np.int64)
    out = np.zeros((height, width, 4), dtype=np.float64)
    if len(order) == 0:
        return out
    rect = np.ascontiguousarray(proj.rect[order])
    mean2d = np.ascontiguousarray(proj.mean2d[order])
    conic = np.ascontiguousarray(proj.conic[order])
    op = np.ascontiguousarray(np.asarray(opacity, dtype=np.float64)[order])
    col = np.ascontiguousarray(np.asarray(color, dtype=np.float64)[order])
    tiles_x = -(-width // tile)
    tiles_y = -(-height // tile)
    offsets, index = _bin_tiles(rect, tile, tiles_x, tiles_y)
    ntiles = tiles_x * tiles_y
    args = (offsets, index, mean2d, conic, op, col, rect, tile, tiles_x, width, height, out)
    if threads <= 1:
        _composite_tiles(0, ntiles, *args)
    else:
        # tile rows interleaved across workers; each pixel is written by exactly one tile
        step = max(1, tiles_x)
        bounds = [(s, min(s + step, ntiles)) for s in range(0, ntiles, step)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: _composite_tiles(b[0], b[1], *args), bounds))
    return out


def to_rgba8(image: np.ndarray) -> np.ndarray:
    """Round half away from zero after clamping to [0, 1]."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def ppm_bytes(rgba8: np.ndarray) -> bytes:
    h, w = rgba8.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgba8[:, :, :3]).tobytes()


def write_ppm(path, rgba8: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(rgba8))


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    # exactly one whitespace byte separates the header from the raster
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", data)
    if not m:
        raise ValueError("not an 8-bit P6 file")
    w, h = int(m.group(1)), int(m.group(2))
    body = data[m.end():m.end() + w * h * 3]
    if len(body) != w * h * 3:
        raise ValueError("truncated P6 raster")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def write_png(path, rgba8: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(rgba8), mode="RGBA").save(path, optimize=False)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB between two 8-bit images over their RGB channels."""
    a = np.asarray(a, dtype=np.float64)[..., :3]
    b = np.asarray(b, dtype=np.float64)[..., :3]
    mse = np.mean((a - b) ** 2)
    return float("inf") if mse == 0 else float(10 * np.log10(255.0 ** 2 / mse))
