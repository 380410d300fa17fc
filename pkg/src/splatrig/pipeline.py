"""Per-frame orchestration, stereo and sequence runs with per-pass timings.

Stage order: deform_mlp -> skinning -> decode_phase1 -> cull -> decode_phase2
-> transform_shade -> quantize -> sort -> raster.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import codec
from .asset.types import AvatarAsset, SplatAttributes
from .binding import eval_color, interpolate_intensity, splat_to_world
from .culling import cull
from .raster import Camera, composite, project_splats, to_rgba8, write_ppm, write_png
from .rig import Pose, Rig
from .sorting import depth_keys, float_order, sort_survivors

PASSES = ("deform_mlp", "skinning", "decode_phase1", "cull", "decode_phase2", "transform_shade", "quantize", "sort", "raster")
WARMUP_FRAMES = 10
PARALLEL_TOL = 1e-6


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@dataclass
class RenderConfig:
    """Pipeline toggles; JSON keys use dotted names such as "cull.mesh"."""

    cull_mesh: bool = True
    cull_triangle: bool = True
    cull_splat: bool = True
    codec_on_demand: bool = True
    sort_mode: str = "quantized"  # or "float_reference"
    stereo_shared_sort: bool = True
    deform_enabled: bool = True
    illum_enabled: bool = True
    tile_size: int = 16
    cutoff: float = 3.0
    threads: int = 1

    def __post_init__(self):
        if self.sort_mode not in ("quantized", "float_reference"):
            raise ValueError(f"unknown sort.mode {self.sort_mode!r}")
        if self.tile_size < 1 or self.threads < 1 or not self.cutoff > 0:
            raise ValueError("tile size, threads and cutoff must be positive")

    @classmethod
    def all_off(cls, **kw) -> "RenderConfig":
        base = dict(cull_mesh=False, cull_triangle=False, cull_splat=False, codec_on_demand=False,
                    sort_mode="float_reference", stereo_shared_sort=False)
        return cls(**{**base, **kw})

    def replace(self, **kw) -> "RenderConfig":
        return RenderConfig(**{**asdict(self), **kw})

    def to_json(self) -> dict:
        return {k.replace("_", ".", 1) if k.split("_")[0] in _GROUPS else k: v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, data: dict) -> "RenderConfig":
        flat = {}
        for key, val in data.items():
            if isinstance(val, dict):
                for sub, v in val.items():
                    flat[f"{key}_{sub}"] = v
            else:
                flat[key.replace(".", "_")] = val
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(flat) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**flat)


_GROUPS = ("cull", "codec", "sort", "stereo", "deform", "illum")


def load_config(path) -> RenderConfig:
    return RenderConfig.from_json(json.loads(Path(path).read_text()))


@dataclass
class StereoCamera:
    left: Camera
    right: Camera

    def __post_init__(self):
        for k in ("fx", "fy", "cx", "cy", "width", "height", "near", "far"):
            if getattr(self.left, k) != getattr(self.right, k):
                raise ValueError(f"stereo intrinsics differ in {k}")

    @property
    def parallel(self) -> bool:
        return bool(np.linalg.norm(self.left.forward - self.right.forward) <= PARALLEL_TOL)

    @property
    def baseline(self) -> np.ndarray:
        return self.right.position - self.left.position

    @classmethod
    def from_center(cls, camera: Camera, baseline: float = 0.064) -> "StereoCamera":
        """Eyes offset by -b/2 and +b/2 along the camera's right axis, forward axes shared."""
        def shifted(dx):
            m = camera.world_to_view.copy()
            m[0, 3] -= dx
            return camera.with_pose(m)
        return cls(shifted(-0.5 * baseline), shifted(0.5 * baseline))

    @classmethod
    def from_json(cls, data: dict) -> "StereoCamera":
        if "left" in data:
            return cls(Camera.from_json(data["left"]), Camera.from_json(data["right"]))
        return cls.from_center(Camera.from_json(data["camera"]), float(data.get("baseline", 0.064)))

    def to_json(self) -> dict:
        return {"left": self.left.to_json(), "right": self.right.to_json()}


def load_stereo(path) -> StereoCamera:
    return StereoCamera.from_json(json.loads(Path(path).read_text()))


@dataclass
class PassTimings:
    ms: dict = field(default_factory=lambda: {p: 0.0 for p in PASSES + ("total",)})
    counts: dict = field(default_factory=dict)
    splat_count: int = 0
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"ms": dict(self.ms), "counts": dict(self.counts), "splat_count": self.splat_count,
                "warnings": list(self.warnings)}


@dataclass
class FrameResult:
    image: np.ndarray  # (H, W, 4) uint8
    timings: PassTimings
    survivors: np.ndarray
    order: np.ndarray  # splat ids, front to back


@dataclass
class StereoResult:
    left: np.ndarray
    right: np.ndarray
    timings: PassTimings
    survivors: np.ndarray
    order_left: np.ndarray
    order_right: np.ndarray


class _Source:
    """Phase-1 / phase-2 access over raw or compressed splats, with decode counters."""

    def __init__(self, splats):
        self.splats = splats
        self.compressed = not isinstance(splats, SplatAttributes)
        if self.compressed:
            self.max_scale = codec.max_scale(splats)
            self.max_abs_w = float(np.abs(splats.w_range).max()) if splats.chunk_count else 0.0
        else:
            ls = splats.log_scale[np.isfinite(splats.log_scale)]
            self.max_scale = float(np.exp(ls.max())) if len(ls) else 0.0
            self.max_abs_w = float(np.abs(splats.w).max()) if len(splats) else 0.0
        self.decoded_positions = 0
        self.decoded_full = 0

    def positions(self) -> codec.PositionView:
        self.decoded_positions += len(self.splats)
        if self.compressed:
            return codec.decompress_positions(self.splats)
        s = self.splats
        return codec.PositionView(t=s.t.astype(np.int64), u=s.u, v=s.v, w=s.w, label=s.label)

    def full(self, index: Optional[np.ndarray]) -> SplatAttributes:
        if index is None:
            self.decoded_full += len(self.splats)
            return codec.decompress_full(self.splats) if self.compressed else self.splats
        self.decoded_full += len(index)
        return codec.decompress_full(self.splats, index) if self.compressed else self.splats.take(index)


class Renderer:
    """Holds per-asset state (rig, LS warm start, decoder) across frames."""

    def __init__(self, asset: AvatarAsset, config: Optional[RenderConfig] = None, direct_solve: bool = False):
        self.asset = asset
        self.config = config or RenderConfig()
        self.rig = Rig(asset, direct_solve=direct_solve)
        self.source = _Source(asset.splats)
        self.triangles = asset.triangles()
        self.counters = {"deform_mlp": 0, "skinning": 0, "decode_phase1": 0, "frames": 0}

    @property
    def decoded_full(self) -> int:
        return self.source.decoded_full

    # -- shared passes ---------------------------------------------------
    @contextmanager
    def _stage(self, timings: PassTimings, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 - rewrapped with the stage name
            raise StageError(name, exc) from exc
        finally:
            timings.ms[name] += (time.perf_counter() - t0) * 1e3

    def _shared(self, pose: Pose, tm: PassTimings):
        cfg = self.config
        with self._stage(tm, "deform_mlp"):
            offsets = self.rig.deformation(pose, cfg.deform_enabled)
            intensity = self.rig.illumination(pose, cfg.illum_enabled)
            self.counters["deform_mlp"] += 1
        with self._stage(tm, "skinning"):
            posed = self.rig.skin(pose, offsets, intensity)
            self.counters["skinning"] += 1
        with self._stage(tm, "decode_phase1"):
            positions = self.source.positions()
            self.counters["decode_phase1"] += 1
        return posed, positions

    def _cull(self, positions, posed, camera):
        cfg = self.config
        vis, _, _ = cull(self.asset, positions, posed, camera, self.source.max_scale, self.source.max_abs_w,
                         cfg.cutoff, cfg.cull_mesh, cfg.cull_triangle, cfg.cull_splat)
        return vis

    def _decode(self, survivors):
        if self.config.codec_on_demand:
            return self.source.full(survivors)
        return self.source.full(None).take(survivors)

    def _colors(self, splats, mean, intensity, camera):
        d = mean - camera.position
        d /= np.maximum(np.linalg.norm(d, axis=1), 1e-12)[:, None]
        return eval_color(splats.sh.astype(np.float64), d, intensity)

    def _order(self, depth, candidates, tm):
        """Front-to-back order of `candidates` (local indices) by their depths."""
        if self.config.sort_mode == "float_reference":
            with self._stage(tm, "sort"):
                return float_order(depth[candidates], candidates)
        with self._stage(tm, "quantize"):
            keys, _, _ = depth_keys(depth[candidates])
        with self._stage(tm, "sort"):
            return sort_survivors(keys, candidates)

    def _raster(self, proj, order, splats, color, camera, tm):
        cfg = self.config
        with self._stage(tm, "raster"):
            img = composite(proj, order, splats.opacity, color, camera.width, camera.height, cfg.tile_size, cfg.threads)
            return to_rgba8(img)

    # -- frames ------------------------------------------------------------
    def render_frame(self, pose: Pose, camera: Camera) -> FrameResult:
        cfg = self.config
        tm = PassTimings(splat_count=len(self.source.splats))
        t0 = time.perf_counter()
        posed, positions = self._shared(pose, tm)
        with self._stage(tm, "cull"):
            vis = self._cull(positions, posed, camera)
        survivors = vis.survivors
        with self._stage(tm, "decode_phase2"):
            splats = self._decode(survivors)
        with self._stage(tm, "transform_shade"):
            mean, basis = splat_to_world(splats, posed.frames)
            lv = interpolate_intensity(splats.t, splats.u, splats.v, self.triangles, posed.intensity)
            color = self._colors(splats, mean, lv, camera)
            proj = project_splats(mean, basis, camera, cfg.cutoff)
        local = self._order(proj.depth, np.flatnonzero(proj.valid), tm)
        image = self._raster(proj, local, splats, color, camera, tm)
        tm.ms["total"] = (time.perf_counter() - t0) * 1e3
        tm.counts = {**vis.counts, "decoded_full": int(len(splats)), "projected": int(proj.valid.sum())}
        self.counters["frames"] += 1
        return FrameResult(image, tm, survivors, survivors[local])

    def render_stereo(self, pose: Pose, stereo: StereoCamera) -> StereoResult:
        cfg = self.config
        tm = PassTimings(splat_count=len(self.source.splats))
        t0 = time.perf_counter()
        posed, positions = self._shared(pose, tm)
        with self._stage(tm, "cull"):
            vis_l = self._cull(positions, posed, stereo.left)
            vis_r = self._cull(positions, posed, stereo.right)
            union = vis_l.union(vis_r)
        survivors = union.survivors
        with self._stage(tm, "decode_phase2"):
            splats = self._decode(survivors)
        in_l = vis_l.splat[survivors]
        in_r = vis_r.splat[survivors]
        with self._stage(tm, "transform_shade"):
            mean, basis = splat_to_world(splats, posed.frames)
            lv = interpolate_intensity(splats.t, splats.u, splats.v, self.triangles, posed.intensity)
            color_l = self._colors(splats, mean, lv, stereo.left)
            color_r = self._colors(splats, mean, lv, stereo.right)
            proj_l = project_splats(mean, basis, stereo.left, cfg.cutoff)
            proj_r = project_splats(mean, basis, stereo.right, cfg.cutoff)
        share = cfg.stereo_shared_sort
        if share and not stereo.parallel:
            tm.warnings.append("stereo forward axes not parallel; shared sort disabled")
            share = False
        if share:
            cand = np.flatnonzero((in_l | in_r) & (proj_l.valid | proj_r.valid))
            order = self._order(proj_l.depth, cand, tm)
            order_l = order[in_l[order] & proj_l.valid[order]]
            order_r = order[in_r[order] & proj_r.valid[order]]
        else:
            order_l = self._order(proj_l.depth, np.flatnonzero(in_l & proj_l.valid), tm)
            order_r = self._order(proj_r.depth, np.flatnonzero(in_r & proj_r.valid), tm)
        left = self._raster(proj_l, order_l, splats, color_l, stereo.left, tm)
        right = self._raster(proj_r, order_r, splats, color_r, stereo.right, tm)
        tm.ms["total"] = (time.perf_counter() - t0) * 1e3
        tm.counts = {
            "total": vis_l.counts["total"],
            "left": dict(vis_l.counts), "right": dict(vis_r.counts),
            "mesh": int(max(vis_l.counts["mesh"], vis_r.counts["mesh"])),
            "triangle": int(max(vis_l.counts["triangle"], vis_r.counts["triangle"])),
            "splat": int(len(survivors)), "decoded_full": int(len(splats)),
        }
        self.counters["frames"] += 1
        return StereoResult(left, right, tm, survivors, survivors[order_l], survivors[order_r])


def render_frame(asset: AvatarAsset, pose: Pose, camera: Camera, config: Optional[RenderConfig] = None) -> FrameResult:
    return Renderer(asset, config).render_frame(pose, camera)


def render_stereo(asset: AvatarAsset, pose: Pose, stereo: StereoCamera, config: Optional[RenderConfig] = None) -> StereoResult:
    return Renderer(asset, config).render_stereo(pose, stereo)


# ---------------------------------------------------------------------------
# sequences


def aggregate(frames: list, warmup: int = WARMUP_FRAMES) -> dict:
    """mean / p50 / p99 per pass, skipping warmup frames when enough remain."""
    kept = frames[warmup:] if len(frames) > warmup else frames
    out = {}
    for p in PASSES + ("total",):
        v = np.array([f["ms"][p] for f in kept])
        out[p] = {"mean": float(v.mean()), "p50": float(np.percentile(v, 50)), "p99": float(np.percentile(v, 99))}
    return out


def run_sequence(asset: AvatarAsset, sequence, camera, config: Optional[RenderConfig] = None, out_dir=None,
                 timings_path=None, png: bool = False, warmup: int = WARMUP_FRAMES, renderer: Optional[Renderer] = None,
                 keep_images: bool = False):
    """Render every pose; mono when `camera` is a Camera, stereo for a StereoCamera.

    Writes frame_NNNN.ppm (or frame_NNNN_L/_R.ppm) when out_dir is given and
    returns (timings document, images). The document is also written to
    timings_path; images is empty unless keep_images is set.
    """
    frames = sequence.frames if hasattr(sequence, "frames") else list(sequence)
    if not frames:
        raise ValueError("pose sequence is empty")
    renderer = renderer or Renderer(asset, config)
    stereo = isinstance(camera, StereoCamera)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    per_frame = []
    images = []
    for i, pose in enumerate(frames):
        if stereo:
            res = renderer.render_stereo(pose, camera)
            pair = {"L": res.left, "R": res.right}
        else:
            res = renderer.render_frame(pose, camera)
            pair = {"": res.image}
        per_frame.append(res.timings.to_json())
        if keep_images:
            images.append(pair)
        if out is not None:
            for tag, img in pair.items():
                stem = f"frame_{i:04d}" + (f"_{tag}" if tag else "")
                try:
                    write_ppm(out / f"{stem}.ppm", img)
                    if png:
                        write_png(out / f"{stem}.png", img)
                except OSError as exc:
                    raise OSError(f"frame {i}: {exc}") from exc
    doc = {
        "frame_count": len(frames),
        "stereo": stereo,
        "splat_count": int(len(asset.splats)),
        "warmup_frames": warmup if len(frames) > warmup else 0,
        "config": renderer.config.to_json(),
        "frames": per_frame,
        "aggregate": aggregate(per_frame, warmup),
        "counters": dict(renderer.counters),
    }
    if timings_path is not None:
        Path(timings_path).write_text(json.dumps(doc, indent=1))
    return doc, images


def timings_schema() -> dict:
    from importlib import resources

    return json.loads(resources.files("splatrig").joinpath("data/timings.schema.json").read_text())


def framing_camera(asset: AvatarAsset, width: int, height: int, distance: float = 3.2, target=(0.0, 0.9, 0.0),
                   fov_y_deg: float = 40.0, near: float = 0.05, far: float = 100.0) -> Camera:
    """Camera in front of the avatar (which faces +Z) looking at `target`."""
    from .raster import look_at

    f = 0.5 * height / np.tan(np.radians(fov_y_deg) / 2)
    target = np.asarray(target, dtype=np.float64)
    eye = target + np.array([0.0, 0.0, distance])
    return Camera(f, f, width / 2, height / 2, width, height, look_at(eye, target), near, far)
