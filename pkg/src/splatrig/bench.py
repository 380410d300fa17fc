"""On/off ablation matrix over the pipeline toggles.

Each row switches a set of toggles off, renders the same pose sequence with
the row on and off, and reports the chosen metric (sum of passes, p50 over
non-warmup frames) together with the reference speedup for comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .pipeline import WARMUP_FRAMES, RenderConfig, Renderer, StereoCamera, framing_camera
from .raster import Camera
from .rig import arm_raise_sequence

_OFF_VALUES = {"sort.mode": "float_reference"}


@dataclass
class RowResult:
    name: str
    metric: list
    off_ms: float
    on_ms: float
    survivors_off: list
    survivors_on: list
    reference: Optional[dict]

    @property
    def speedup(self) -> float:
        return self.off_ms / self.on_ms if self.on_ms > 0 else float("inf")

    def to_json(self) -> dict:
        ref = self.reference or {}
        return {"name": self.name, "metric": self.metric, "off_ms": self.off_ms, "on_ms": self.on_ms,
                "speedup": self.speedup, "survivors_off": self.survivors_off, "survivors_on": self.survivors_on,
                "reference_off_ms": ref.get("off"), "reference_on_ms": ref.get("on"),
                "reference_speedup": (ref["off"] / ref["on"]) if ref.get("off") and ref.get("on") else None}


def default_matrix() -> dict:
    return json.loads(resources.files("splatrig").joinpath("data/ablation.json").read_text())


def half_view_camera(asset, width: int = 2048, height: int = 945) -> Camera:
    """Full-body camera distance with the avatar's right half past the left image edge."""
    f = 0.5 * height / np.tan(np.radians(40.0) / 2)
    shift = 0.5 * width / f * 3.2
    return framing_camera(asset, width, height, distance=3.2, target=(shift, 0.9, 0.0))


def _toggle_off(config: RenderConfig, toggles) -> RenderConfig:
    kw = {}
    for t in toggles:
        kw[t.replace(".", "_")] = _OFF_VALUES.get(t, False)
    return config.replace(**kw)


def _metric(timings, metric) -> float:
    return float(sum(timings.ms[m] for m in metric))


def _run(renderer, poses, camera, stereo, metric, eyes_separately=False):
    values, counts = [], None
    for pose in poses:
        if stereo and eyes_separately:
            a = renderer.render_frame(pose, camera.left).timings
            b = renderer.render_frame(pose, camera.right).timings
            values.append(_metric(a, metric) + _metric(b, metric))
            counts = [a.counts["splat"], b.counts["splat"]]
        elif stereo:
            t = renderer.render_stereo(pose, camera).timings
            values.append(_metric(t, metric))
            counts = [t.counts["left"]["splat"], t.counts["right"]["splat"]]
        else:
            t = renderer.render_frame(pose, camera).timings
            values.append(_metric(t, metric))
            counts = [t.counts["mesh"], t.counts["triangle"], t.counts["splat"]]
    kept = values[WARMUP_FRAMES:] if len(values) > WARMUP_FRAMES else values
    return float(np.percentile(kept, 50)), counts


def run_matrix(asset, matrix: Optional[dict] = None, frames: int = 120, camera: Optional[Camera] = None,
               stereo: Optional[StereoCamera] = None, base: Optional[RenderConfig] = None) -> list[RowResult]:
    matrix = matrix or default_matrix()
    base = base or RenderConfig()
    if camera is None:
        camera = Camera.from_json(matrix["camera"]) if "camera" in matrix else half_view_camera(asset)
    if stereo is None:
        if "stereo" in matrix:
            stereo = StereoCamera.from_json(matrix["stereo"])
        else:
            res = matrix.get("stereo_resolution", [1920, 1824])
            stereo = StereoCamera.from_center(framing_camera(asset, res[0], res[1]))
    poses = arm_raise_sequence(asset.skeleton, frames=max(frames, 1)).frames
    rows = []
    for row in matrix["rows"]:
        metric = row.get("metric", ["total"])
        metric = [metric] if isinstance(metric, str) else list(metric)
        is_stereo = bool(row.get("stereo", False))
        cam = stereo if is_stereo else camera
        on_cfg = base
        off_cfg = _toggle_off(base, row.get("toggles", []))
        separate = is_stereo and row.get("off_mode") == "separate_eyes"
        off_ms, off_counts = _run(Renderer(asset, off_cfg), poses, cam, is_stereo, metric, eyes_separately=separate)
        on_ms, on_counts = _run(Renderer(asset, on_cfg), poses, cam, is_stereo, metric)
        rows.append(RowResult(row["name"], metric, off_ms, on_ms, off_counts, on_counts, row.get("reference")))
    return rows


def format_table(rows: list[RowResult]) -> str:
    head = f"{'strategy':<30} {'off ms':>10} {'on ms':>10} {'speedup':>8} {'reference':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        ref = r.to_json()["reference_speedup"]
        ref_s = f"{ref:.2f}x" if ref else "n/a"
        lines.append(f"{r.name:<30} {r.off_ms:>10.2f} {r.on_ms:>10.2f} {r.speedup:>7.2f}x {ref_s:>10}")
    return "\n".join(lines)


def save_results(rows: list[RowResult], path) -> None:
    Path(path).write_text(json.dumps({"rows": [r.to_json() for r in rows]}, indent=1))
