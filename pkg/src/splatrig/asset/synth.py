"""Deterministic synthetic avatars: capsule humanoid, optional garment tube, hair cap.

The body is a set of closed capsules sharing one skinned component, so it is
a closed (if multi-shell) manifold. The garment is an open tube around the
torso and the hair is an open spherical cap over the head. Splats are
sampled uniformly by area over all triangles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .types import (
    Activation,
    AvatarAsset,
    ComponentKind,
    InputSpec,
    MeshComponent,
    MlpLayer,
    MlpWeights,
    OutputSpace,
    Skeleton,
    SplatAttributes,
)

SH_C0 = 0.28209479177387814

# name, parent, rest world position (Y up, facing +Z, arms along X)
_BASE_JOINTS = [
    ("pelvis", -1, (0.0, 0.95, 0.0)),
    ("spine", 0, (0.0, 1.10, 0.0)),
    ("chest", 1, (0.0, 1.30, 0.0)),
    ("neck", 2, (0.0, 1.50, 0.0)),
    ("head", 3, (0.0, 1.60, 0.0)),
    ("l_shoulder", 2, (0.18, 1.44, 0.0)),
    ("l_elbow", 5, (0.46, 1.44, 0.0)),
    ("l_wrist", 6, (0.72, 1.44, 0.0)),
    ("r_shoulder", 2, (-0.18, 1.44, 0.0)),
    ("r_elbow", 8, (-0.46, 1.44, 0.0)),
    ("r_wrist", 9, (-0.72, 1.44, 0.0)),
    ("l_hip", 0, (0.10, 0.92, 0.0)),
    ("l_knee", 11, (0.10, 0.50, 0.0)),
    ("l_ankle", 12, (0.10, 0.08, 0.0)),
    ("r_hip", 0, (-0.10, 0.92, 0.0)),
    ("r_knee", 14, (-0.10, 0.50, 0.0)),
    ("r_ankle", 15, (-0.10, 0.08, 0.0)),
]
MIN_JOINTS = len(_BASE_JOINTS)

# extra leaf effectors appended cyclically when more joints are requested
_EXTRA_LEAVES = [
    ("l_hand_end", 7, (0.08, 0.0, 0.0)),
    ("r_hand_end", 10, (-0.08, 0.0, 0.0)),
    ("l_toe", 13, (0.0, -0.05, 0.12)),
    ("r_toe", 16, (0.0, -0.05, 0.12)),
    ("head_top", 4, (0.0, 0.14, 0.0)),
]

# start, end, radius, skinning joints, breakpoints along the segment (0..1)
_CAPSULES = [
    ((0.0, 0.86, 0.0), (0.0, 1.42, 0.0), 0.16, ("pelvis", "spine", "chest"), (0.28, 0.64)),
    ((0.0, 1.56, 0.0), (0.0, 1.70, 0.0), 0.10, ("neck", "head"), (-0.2,)),
    ((0.18, 1.44, 0.0), (0.46, 1.44, 0.0), 0.05, ("chest", "l_shoulder", "l_elbow"), (-0.05, 1.0)),
    ((0.46, 1.44, 0.0), (0.72, 1.44, 0.0), 0.04, ("l_elbow", "l_wrist"), (1.0,)),
    ((-0.18, 1.44, 0.0), (-0.46, 1.44, 0.0), 0.05, ("chest", "r_shoulder", "r_elbow"), (-0.05, 1.0)),
    ((-0.46, 1.44, 0.0), (-0.72, 1.44, 0.0), 0.04, ("r_elbow", "r_wrist"), (1.0,)),
    ((0.10, 0.92, 0.0), (0.10, 0.50, 0.0), 0.075, ("pelvis", "l_hip", "l_knee"), (-0.05, 1.0)),
    ((0.10, 0.50, 0.0), (0.10, 0.08, 0.0), 0.055, ("l_knee", "l_ankle"), (1.0,)),
    ((-0.10, 0.92, 0.0), (-0.10, 0.50, 0.0), 0.075, ("pelvis", "r_hip", "r_knee"), (-0.05, 1.0)),
    ((-0.10, 0.50, 0.0), (-0.10, 0.08, 0.0), 0.055, ("r_knee", "r_ankle"), (1.0,)),
]
_BLEND = 0.08  # half-width of skinning blend zones, in segment units
_SURFACE_SIGMA = (1.1, 1.7)  # in-plane sigma range, in units of the mean sample spacing

_GARMENT = dict(bottom=0.80, top=1.38, r_bottom=0.195, r_top=0.178, joints=("pelvis", "spine", "chest"))
_HAIR = dict(center=(0.0, 1.70, 0.0), radius=0.112, max_polar=np.radians(75.0))

_BODY_RGB = (0.80, 0.60, 0.50)
_GARMENT_RGB = (0.20, 0.35, 0.70)
_HAIR_RGB = (0.16, 0.11, 0.08)

# smallest closed capsule: 8 around, 2 rings per cap, 1 cylinder span
_MIN_SEG, _MIN_CAP, _MIN_CYL = 8, 2, 1


@dataclass(frozen=True)
class SynthSpec:
    splat_count: int = 100_000
    vertex_budget: int = 20_000
    joint_count: int = MIN_JOINTS
    garment: bool = True
    seed: int = 0
    sh_degree: int = 3
    laplacian_lambda: float = 10.0
    deform_hidden: tuple = (64, 64)
    illum_hidden: tuple = (32, 32)


def _skeleton(joint_count: int) -> Skeleton:
    if joint_count < MIN_JOINTS:
        raise ValueError(f"joint_count must be >= {MIN_JOINTS}")
    names = [j[0] for j in _BASE_JOINTS]
    parents = [j[1] for j in _BASE_JOINTS]
    world = [np.array(j[2]) for j in _BASE_JOINTS]
    k = 0
    while len(names) < joint_count:
        name, parent, offset = _EXTRA_LEAVES[k % len(_EXTRA_LEAVES)]
        rep = k // len(_EXTRA_LEAVES)
        names.append(name if rep == 0 else f"{name}_{rep}")
        # repeats chain off the previous copy
        par = parent if rep == 0 else len(names) - 1 - len(_EXTRA_LEAVES)
        parents.append(par)
        world.append(world[par] + np.array(offset))
        k += 1
    world = np.array(world)
    local = np.array([world[i] - (world[p] if p >= 0 else 0.0) for i, p in enumerate(parents)])
    ib = np.tile(np.eye(4), (joint_count, 1, 1))
    ib[:, :3, 3] = -world
    return Skeleton(
        names=names,
        parents=np.asarray(parents, dtype=np.int32),
        rest_rotation=np.tile(np.array([0, 0, 0, 1], dtype=np.float32), (joint_count, 1)),
        rest_translation=local.astype(np.float32),
        inverse_bind=ib.astype(np.float32),
    )


def _frame(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return axis, e1, e2


def _ring_mesh(profile, seg, start, axis, pole_lo=None, pole_hi=None):
    """Surface of revolution: rings of (axial offset, radius), optional pole caps.

    Winding is arbitrary here; callers fix orientation with _orient_outward.
    """
    axis, e1, e2 = _frame(axis)
    ang = 2 * np.pi * np.arange(seg) / seg
    circle = np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2
    verts = []
    if pole_lo is not None:
        verts.append(start + pole_lo * axis)
    base = len(verts)
    for off, rad in profile:
        verts.extend(start + off * axis + rad * circle)
    if pole_hi is not None:
        verts.append(start + pole_hi * axis)
    verts = np.asarray(verts)
    tris = []
    j = np.arange(seg)
    jn = (j + 1) % seg
    for k in range(len(profile) - 1):
        a = base + k * seg
        b = base + (k + 1) * seg
        tris.append(np.stack([a + j, b + j, a + jn], axis=1))
        tris.append(np.stack([a + jn, b + j, b + jn], axis=1))
    if pole_lo is not None:
        tris.append(np.stack([np.zeros(seg, dtype=int), base + j, base + jn], axis=1))
    if pole_hi is not None:
        top = len(verts) - 1
        last = base + (len(profile) - 1) * seg
        tris.append(np.stack([np.full(seg, top), last + j, last + jn], axis=1))
    tris = np.concatenate(tris).astype(np.int64)
    return verts, tris


def _orient_outward(verts, tris, inside_point_fn):
    """Flip any triangle whose normal points toward the shape's axis."""
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    n = np.cross(p1 - p0, p2 - p0)
    c = (p0 + p1 + p2) / 3
    flip = np.sum(n * (c - inside_point_fn(c)), axis=1) < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def _capsule(a, b, r, seg, cap, cyl):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    length = np.linalg.norm(b - a)
    axis = (b - a) / length
    theta = np.arange(1, cap + 1) * (np.pi / 2) / cap
    prof = [(-r * np.cos(t), r * np.sin(t)) for t in theta]
    prof += [(length * k / cyl, r) for k in range(1, cyl)]
    prof += [(length + r * np.cos(t), r * np.sin(t)) for t in theta[::-1]]
    verts, tris = _ring_mesh(prof, seg, a, axis, pole_lo=-r, pole_hi=length + r)

    def nearest_axis_point(p):
        s = np.clip((p - a) @ axis, 0, length)
        return a + s[:, None] * axis

    tris = _orient_outward(verts, tris, nearest_axis_point)
    s = (verts - a) @ axis / length
    return verts, tris, s


def _trapezoid_weights(s, breakpoints, count):
    """Partition of unity over joints along a segment; exactly 1 away from breakpoints."""
    edges = np.concatenate([[-np.inf], breakpoints, [np.inf]])
    w = np.zeros((len(s), count))
    for k in range(count):
        lo = np.clip((s - edges[k] + _BLEND) / (2 * _BLEND), 0, 1) if np.isfinite(edges[k]) else np.ones(len(s))
        hi = np.clip((edges[k + 1] + _BLEND - s) / (2 * _BLEND), 0, 1) if np.isfinite(edges[k + 1]) else np.ones(len(s))
        w[:, k] = np.minimum(lo, hi)
    return w / w.sum(axis=1, keepdims=True)


def _pack_skin(joint_ids, weights):
    """(N, K) dense weights over joint_ids -> top-4 (joint, weight) pairs."""
    n, k = weights.shape
    order = np.argsort(-weights, axis=1, kind="stable")[:, :4]
    if k < 4:
        order = np.concatenate([order, np.zeros((n, 4 - k), dtype=int)], axis=1)
    w = np.take_along_axis(np.pad(weights, ((0, 0), (0, max(0, 4 - k)))), order, axis=1)
    if k < 4:
        w[:, k:] = 0
    w = w / w.sum(axis=1, keepdims=True)
    j = np.asarray(joint_ids)[np.minimum(order, k - 1)]
    j = np.where(w > 0, j, 0)
    w32 = w.astype(np.float32)
    # fold float32 rounding into the heaviest weight so rows sum to 1
    w32[:, 0] += np.float32(1) - w32.sum(axis=1, dtype=np.float32)
    return j.astype(np.uint16), w32


def minimal_sphere(points, iterations=20_000):
    """Bădoiu-Clarkson core-set iteration on the convex hull; radius is exact for the returned center."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) >= 5:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # noqa: BLE001 - coplanar input; iterate on all points
            pass
    c = pts.mean(axis=0)
    for i in range(1, iterations + 1):
        far = pts[np.argmax(np.sum((pts - c) ** 2, axis=1))]
        c = c + (far - c) / (i + 1)
    return c


def _bounding_sphere(vertices):
    center = minimal_sphere(vertices).astype(np.float32)
    r = np.max(np.linalg.norm(vertices.astype(np.float64) - center.astype(np.float64), axis=1))
    r32 = np.float32(r * (1 + 1e-6))
    if r32 < r:
        r32 = np.nextafter(r32, np.float32(np.inf))
    return center, float(r32)


def _component(kind, verts, tris, joint_ids, weights, closed):
    j, w = _pack_skin(joint_ids, weights)
    v32 = verts.astype(np.float32)
    center, radius = _bounding_sphere(v32)
    return MeshComponent(
        kind=kind, vertices=v32, triangles=tris.astype(np.uint32), skin_joints=j, skin_weights=w,
        closed=closed, sphere_center=center, sphere_radius=radius,
    )


def _areas(verts, tris):
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)


def _capsule_area(r, length):
    return 4 * np.pi * r * r + 2 * np.pi * r * length


def _body(names, budget):
    index = {n: i for i, n in enumerate(names)}
    areas = np.array([_capsule_area(r, np.linalg.norm(np.subtract(b, a))) for a, b, r, *_ in _CAPSULES])
    spacing = np.sqrt(areas.sum() / max(budget, 1))
    verts, tris, weights = [], [], []
    offset = 0
    for (a, b, r, joints, bps), _ in zip(_CAPSULES, areas):
        length = np.linalg.norm(np.subtract(b, a))
        seg = max(_MIN_SEG, int(round(2 * np.pi * r / spacing)))
        cap = max(_MIN_CAP, int(round(0.5 * np.pi * r / spacing)))
        cyl = max(_MIN_CYL, int(round(length / spacing)))
        v, t, s = _capsule(a, b, r, seg, cap, cyl)
        dense = _trapezoid_weights(s, np.asarray(bps), len(joints))
        full = np.zeros((len(v), len(names)))
        full[:, [index[j] for j in joints]] = dense
        verts.append(v)
        tris.append(t + offset)
        weights.append(full)
        offset += len(v)
    verts = np.concatenate(verts)
    weights = np.concatenate(weights)
    return _component(ComponentKind.BODY, verts, np.concatenate(tris), np.arange(len(names)), weights, True)


def _body_min_vertices():
    ring_count = 2 * _MIN_CAP + _MIN_CYL - 1
    return len(_CAPSULES) * (2 + _MIN_SEG * ring_count)


def _garment(names, budget):
    g = _GARMENT
    index = {n: i for i, n in enumerate(names)}
    height = g["top"] - g["bottom"]
    r_mean = 0.5 * (g["r_bottom"] + g["r_top"])
    spacing = np.sqrt(2 * np.pi * r_mean * height / max(budget, 1))
    seg = max(_MIN_SEG, int(round(2 * np.pi * r_mean / spacing)))
    rings = max(2, int(round(height / spacing)) + 1)
    fr = np.linspace(0, 1, rings)
    prof = [(height * f, g["r_bottom"] + (g["r_top"] - g["r_bottom"]) * f) for f in fr]
    start = np.array([0.0, g["bottom"], 0.0])
    axis = np.array([0.0, 1.0, 0.0])
    verts, tris = _ring_mesh(prof, seg, start, axis)
    tris = _orient_outward(verts, tris, lambda p: np.stack([np.zeros(len(p)), p[:, 1], np.zeros(len(p))], axis=1))
    # same torso blend as the body capsule, expressed in body-segment units
    a, b = _CAPSULES[0][0][1], _CAPSULES[0][1][1]
    s = (verts[:, 1] - a) / (b - a)
    dense = _trapezoid_weights(s, np.asarray(_CAPSULES[0][4]), 3)
    full = np.zeros((len(verts), len(names)))
    full[:, [index[j] for j in g["joints"]]] = dense
    return _component(ComponentKind.GARMENT, verts, tris, np.arange(len(names)), full, False)


def _hair(names, budget):
    h = _HAIR
    index = {n: i for i, n in enumerate(names)}
    r = h["radius"]
    area = 2 * np.pi * r * r * (1 - np.cos(h["max_polar"]))
    spacing = np.sqrt(area / max(budget, 1))
    seg = max(_MIN_SEG, int(round(2 * np.pi * r * np.sin(h["max_polar"]) / spacing)))
    rings = max(2, int(round(r * h["max_polar"] / spacing)))
    polar = h["max_polar"] * np.arange(1, rings + 1) / rings
    # rings from the open rim upward toward the pole
    prof = [(r * np.cos(p), r * np.sin(p)) for p in polar[::-1]]
    center = np.array(h["center"])
    verts, tris = _ring_mesh(prof, seg, center, np.array([0.0, 1.0, 0.0]), pole_hi=r)
    tris = _orient_outward(verts, tris, lambda p: np.broadcast_to(center, p.shape))
    full = np.zeros((len(verts), len(names)))
    full[:, index["head"]] = 1.0
    return _component(ComponentKind.HAIR, verts, tris, np.arange(len(names)), full, False)


def _mlp(rng, dims, activation, input_spec, output_space, out_scale, out_bias):
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        w = rng.standard_normal((a, b)) / np.sqrt(a)
        bias = 0.01 * rng.standard_normal(b)
        if last:
            w *= out_scale
            bias = np.full(b, out_bias)
        layers.append(MlpLayer(weight=w.astype(np.float32), bias=bias.astype(np.float32)))
    return MlpWeights(layers=layers, activation=activation, input_spec=input_spec, output_space=output_space)


def _sample_splats(rng, comps, n, sh_degree):
    verts = [c.vertices.astype(np.float64) for c in comps]
    tris = [c.triangles.astype(np.int64) for c in comps]
    areas = np.concatenate([_areas(v, t) for v, t in zip(verts, tris)])
    kinds = np.concatenate([np.full(len(t), int(c.kind)) for c, t in zip(comps, tris)])
    closed = np.concatenate([np.full(len(t), c.closed) for c, t in zip(comps, tris)])

    # expected count per triangle, remainder distributed by a seeded draw
    expected = areas / areas.sum() * n
    base = np.floor(expected).astype(np.int64)
    rest = n - int(base.sum())
    if rest:
        frac = expected - base
        extra = rng.choice(len(areas), size=rest, replace=False, p=frac / frac.sum())
        base[extra] += 1
    t = np.repeat(np.arange(len(areas)), base)

    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1
    u = np.where(flip, 1 - r1, r1)
    v = np.where(flip, 1 - r2, r2)

    hair = kinds[t] == ComponentKind.HAIR
    surface = ~hair
    spacing = np.sqrt(areas.sum() / n)

    w = np.where(hair, rng.uniform(0.0, 0.01, n), 0.0)

    phi = rng.uniform(0, 2 * np.pi, n)
    rot = np.zeros((n, 4))
    rot[:, 2] = np.sin(phi / 2)
    rot[:, 3] = np.cos(phi / 2)
    rand_q = rng.standard_normal((n, 4))
    rand_q /= np.linalg.norm(rand_q, axis=1, keepdims=True)
    rot[hair] = rand_q[hair]

    scale = spacing * rng.uniform(*_SURFACE_SIGMA, (n, 3))
    scale[:, 2] = np.where(hair, spacing * rng.uniform(0.3, 0.8, n), 0.0)
    with np.errstate(divide="ignore"):
        log_scale = np.log(scale)

    opacity = np.where(hair, rng.uniform(0.6, 0.95, n), rng.uniform(0.92, 0.99, n))

    palette = {int(ComponentKind.BODY): _BODY_RGB, int(ComponentKind.GARMENT): _GARMENT_RGB, int(ComponentKind.HAIR): _HAIR_RGB}
    rgb = np.array([palette[k] for k in kinds[t]]) + 0.05 * rng.standard_normal((n, 3))
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = (np.clip(rgb, 0.02, 0.98) - 0.5) / SH_C0
    if k > 1:
        sh[:, 1:, :] = 0.03 * rng.standard_normal((n, k - 1, 3))

    rot32 = rot.astype(np.float32)
    return SplatAttributes(
        t=t.astype(np.uint32),
        u=u.astype(np.float32),
        v=v.astype(np.float32),
        w=w.astype(np.float32),
        rotation=rot32,
        log_scale=log_scale.astype(np.float32),
        opacity=opacity.astype(np.float32),
        sh=sh.astype(np.float32),
        label=closed[t].astype(np.uint8),
        surface2d=surface,
    )


def generate_synthetic_asset(spec: SynthSpec = SynthSpec(), **overrides) -> AvatarAsset:
    """Build a seeded avatar; equal specs give byte-identical assets."""
    if overrides:
        spec = SynthSpec(**{**spec.__dict__, **overrides})
    if spec.splat_count < 1:
        raise ValueError("splat_count must be >= 1")
    if not 0 <= spec.sh_degree <= 3:
        raise ValueError("sh_degree must be in 0..3")
    rng = np.random.default_rng(spec.seed)
    skeleton = _skeleton(spec.joint_count)

    # budget split roughly by surface area: body ~80%, garment ~15%, hair ~5%
    shares = (0.80, 0.15, 0.05) if spec.garment else (0.94, 0.0, 0.06)
    body_budget = int(spec.vertex_budget * shares[0])
    if body_budget < _body_min_vertices():
        raise ValueError(
            f"vertex_budget {spec.vertex_budget} too small to close the body mesh "
            f"(body needs >= {_body_min_vertices()} vertices)"
        )
    comps = [_body(skeleton.names, body_budget)]
    if spec.garment:
        comps.append(_garment(skeleton.names, int(spec.vertex_budget * shares[1])))
    comps.append(_hair(skeleton.names, int(spec.vertex_budget * shares[2])))

    splats = _sample_splats(rng, comps, spec.splat_count, spec.sh_degree)

    nv = sum(c.vertex_count for c in comps)
    static_offsets = (0.0003 * rng.standard_normal((nv, 3))).astype(np.float32)

    pose_dim = 6 * skeleton.joint_count
    deform = _mlp(rng, [pose_dim + 3, *spec.deform_hidden, 3], Activation.RELU,
                  InputSpec.POSE_AND_CANONICAL_VERTEX, OutputSpace.LARGESTEPS_OFFSET, out_scale=0.002, out_bias=0.0)
    # final bias puts softplus at ~1 so the synthetic lighting is near neutral
    illum = _mlp(rng, [pose_dim + 3, *spec.illum_hidden, 1], Activation.RELU,
                 InputSpec.POSE_AND_CANONICAL_VERTEX, OutputSpace.INTENSITY, out_scale=0.05,
                 out_bias=float(np.log(np.e - 1.0)))

    return AvatarAsset(
        skeleton=skeleton, components=comps, splats=splats, static_offsets=static_offsets,
        deform_net=deform, illum_net=illum, laplacian_lambda=float(np.float32(spec.laplacian_lambda)),
        seed=int(spec.seed), sh_degree=spec.sh_degree,
    )
