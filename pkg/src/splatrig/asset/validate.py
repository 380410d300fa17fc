"""Invariant checks over a whole asset. Report-only; never raises."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .types import AvatarAsset, ComponentKind, InputSpec, OutputSpace, SplatAttributes

BARY_TOL = 1e-7
UNIT_TOL = 1e-6
WEIGHT_TOL = 1e-6


@dataclass(frozen=True)
class Violation:
    section: str
    kind: str
    record: Optional[int]
    detail: str = ""

    def __str__(self) -> str:
        where = self.section if self.record is None else f"{self.section} {self.record}"
        return f"{where}: {self.kind}" + (f" ({self.detail})" if self.detail else "")


def _each(out, section, kind, mask, detail=""):
    for i in np.flatnonzero(mask):
        out.append(Violation(section, kind, int(i), detail))


def _check_skeleton(asset, out):
    sk = asset.skeleton
    j = sk.joint_count
    parents = np.asarray(sk.parents)
    if j == 0:
        out.append(Violation("joint", "empty-skeleton", None))
        return
    for name, arr, shape in (("rest_rotation", sk.rest_rotation, (j, 4)), ("rest_translation", sk.rest_translation, (j, 3)),
                             ("inverse_bind", sk.inverse_bind, (j, 4, 4))):
        if np.shape(arr) != shape:
            out.append(Violation("joint", "shape", None, f"{name} has shape {np.shape(arr)}"))
            return
    idx = np.arange(j)
    roots = parents < 0
    if roots.sum() != 1:
        out.append(Violation("joint", "root-count", None, f"{int(roots.sum())} roots"))
    _each(out, "joint", "parent-order", ~roots & (parents >= idx))
    norms = np.linalg.norm(np.asarray(sk.rest_rotation, dtype=np.float64), axis=1)
    _each(out, "joint", "quaternion-norm", np.abs(norms - 1) > UNIT_TOL)


def _check_components(asset, out):
    comps = asset.components
    if not comps or comps[0].kind != ComponentKind.BODY:
        out.append(Violation("mesh", "body-first", 0))
    j = asset.skeleton.joint_count
    for ci, c in enumerate(comps):
        sec = f"mesh {ci} vertex"
        w = np.asarray(c.skin_weights, dtype=np.float64)
        _each(out, sec, "negative-skin-weight", np.any(w < 0, axis=1))
        _each(out, sec, "skin-weight-sum", np.abs(w.sum(axis=1) - 1) > WEIGHT_TOL)
        _each(out, sec, "skin-joint-range", np.any((c.skin_joints >= j) & (w > 0), axis=1))
        tri = np.asarray(c.triangles, dtype=np.int64)
        _each(out, f"mesh {ci} triangle", "vertex-index-range", np.any((tri < 0) | (tri >= c.vertex_count), axis=1))
        d = np.linalg.norm(c.vertices.astype(np.float64) - np.asarray(c.sphere_center, dtype=np.float64), axis=1)
        _each(out, sec, "outside-bounding-sphere", d > c.sphere_radius * (1 + 1e-6) + 1e-7)


def _check_net(asset, net, tag, out):
    dims_ok = all(a.out_dim == b.in_dim for a, b in zip(net.layers, net.layers[1:]))
    if not net.layers or not dims_ok:
        out.append(Violation(tag, "layer-chain", None))
        return
    for li, layer in enumerate(net.layers):
        if layer.bias.shape != (layer.out_dim,):
            out.append(Violation(tag, "bias-shape", li))
    want_out = 3 if net.output_space == OutputSpace.LARGESTEPS_OFFSET else 1
    if net.out_dim != want_out:
        out.append(Violation(tag, "output-dim", None, f"{net.out_dim} != {want_out}"))
    pose_dim = 6 * asset.skeleton.joint_count
    want_in = pose_dim + 3 if net.input_spec == InputSpec.POSE_AND_CANONICAL_VERTEX else pose_dim
    if net.in_dim != want_in:
        out.append(Violation(tag, "input-dim", None, f"{net.in_dim} != {want_in}"))


def check_splats(s: SplatAttributes, asset: AvatarAsset, out: list) -> None:
    sec = "splat"
    n_tri = asset.triangle_count
    t = np.asarray(s.t, dtype=np.int64)
    bad_t = (t < 0) | (t >= n_tri)
    _each(out, sec, "triangle-id-range", bad_t)
    u = s.u.astype(np.float64)
    v = s.v.astype(np.float64)
    bary_bad = (u < -BARY_TOL) | (v < -BARY_TOL) | (1 - u - v < -BARY_TOL) | ~np.isfinite(u + v)
    _each(out, sec, "barycentric", bary_bad)
    o = s.opacity
    _each(out, sec, "opacity-range", ~((o >= 0) & (o <= 1)))
    norms = np.linalg.norm(s.rotation.astype(np.float64), axis=1)
    _each(out, sec, "quaternion-norm", ~(np.abs(norms - 1) <= UNIT_TOL))
    _each(out, sec, "label", s.label > 1)

    tri_kind = np.array([c.kind for c in asset.components], dtype=np.int64)[asset.triangle_component()]
    hair = np.zeros(len(t), dtype=bool)
    hair[~bad_t] = tri_kind[t[~bad_t]] == ComponentKind.HAIR
    _each(out, sec, "surface2d-flag", s.surface2d != ~hair)

    surf = np.asarray(s.surface2d, dtype=bool)
    ls = s.log_scale
    flat_bad = surf & ((s.w != 0) | ~np.isneginf(ls[:, 2]))
    _each(out, sec, "2d-constraint", flat_bad)
    free_axes = np.isfinite(ls)
    free_axes[surf, 2] = True
    _each(out, sec, "scale-finite", ~free_axes.all(axis=1))
    _each(out, sec, "w-finite", ~np.isfinite(s.w))
    _each(out, sec, "sh-finite", ~np.isfinite(s.sh.reshape(len(t), -1)).all(axis=1))
    if s.sh_degree != asset.sh_degree:
        out.append(Violation(sec, "sh-degree", None, f"{s.sh_degree} != {asset.sh_degree}"))


def validate_asset(asset: AvatarAsset) -> list[Violation]:
    """Every violated invariant, with the offending record index where there is one."""
    from .. import codec

    out: list[Violation] = []
    _check_skeleton(asset, out)
    _check_components(asset, out)
    _check_net(asset, asset.deform_net, "deform_net", out)
    _check_net(asset, asset.illum_net, "illum_net", out)
    if asset.deform_net.output_space != OutputSpace.LARGESTEPS_OFFSET:
        out.append(Violation("deform_net", "output-space", None))
    if asset.illum_net.output_space != OutputSpace.INTENSITY:
        out.append(Violation("illum_net", "output-space", None))
    if np.shape(asset.static_offsets) != (asset.vertex_count, 3):
        out.append(Violation("static_offsets", "length", None, f"{np.shape(asset.static_offsets)}"))
    if not asset.laplacian_lambda >= 0:
        out.append(Violation("meta", "lambda", None))
    if out and any(v.kind in ("shape", "empty-skeleton") for v in out):
        return out
    splats = asset.splats
    if not isinstance(splats, SplatAttributes):
        try:
            splats = codec.decompress_full(splats)
        except (codec.CodecError, IndexError, ValueError) as exc:
            out.append(Violation("splat", "codec", None, str(exc)))
            return out
    check_splats(splats, asset, out)
    return out
