import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from splatrig import quat
from splatrig.asset.types import SplatAttributes
from splatrig.binding import SH_C0, eval_color, eval_sh, interpolate_intensity, shade, splat_to_world
from splatrig.rig import Rig, arm_raise_sequence, skin_vertices, triangle_frames

TRI = np.array([[0, 1, 2]])
REST = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0]])


def _splats(n=1, u=1.0, v=0.0, w=0.0, rot=(0, 0, 0, 1), scale=(0.01, 0.02, 0.005), surface=False, sh_degree=0):
    k = (sh_degree + 1) ** 2
    ls = np.tile(np.log(np.array(scale, np.float64)), (n, 1)).astype(np.float32)
    if surface:
        ls[:, 2] = -np.inf
    return SplatAttributes(
        t=np.zeros(n, np.uint32), u=np.full(n, u, np.float32), v=np.full(n, v, np.float32),
        w=np.full(n, w, np.float32), rotation=np.tile(np.asarray(rot, np.float32), (n, 1)), log_scale=ls,
        opacity=np.full(n, 0.5, np.float32), sh=np.zeros((n, k, 3), np.float32),
        label=np.ones(n, np.uint8), surface2d=np.full(n, surface))


def _cov(basis):
    return basis @ np.swapaxes(basis, -1, -2)


def test_identity_frame():
    f = triangle_frames(REST, REST, TRI)
    np.testing.assert_allclose(f.affine[0], np.eye(3), atol=1e-12)
    mean, basis = splat_to_world(_splats(), f)
    np.testing.assert_allclose(mean[0], REST[0], atol=1e-7)
    # rest frame here is the world axes (E1 along x, normal along z)
    np.testing.assert_allclose(basis[0], np.diag([0.01, 0.02, 0.005]), atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_rigid_motion_transports(seed):
    rng = np.random.default_rng(seed)
    rest = REST + rng.normal(0, 0.01, (3, 3))
    r = Rotation.random(random_state=seed)
    t = rng.normal(size=3)
    posed = r.apply(rest) + t
    s = _splats(n=4, u=0.2, v=0.3, w=0.01, rot=quat.normalize(rng.normal(size=4)))
    m0, b0 = splat_to_world(s, triangle_frames(rest, rest, TRI))
    m1, b1 = splat_to_world(s, triangle_frames(rest, posed, TRI))
    np.testing.assert_allclose(m1, r.apply(m0) + t, atol=1e-12)
    rm = r.as_matrix()
    np.testing.assert_allclose(_cov(b1), rm @ _cov(b0) @ rm.T, atol=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(_cov(b1)), np.linalg.eigvalsh(_cov(b0)), atol=1e-6)


def test_uniform_in_plane_scale():
    posed = REST * np.array([2.0, 2.0, 1.0])
    f = triangle_frames(REST, posed, TRI)
    np.testing.assert_allclose(f.affine[0], np.diag([2.0, 2.0, 1.0]), atol=1e-12)
    s = _splats(rot=quat.from_axis_angle([1, 2, 3], 0.4))
    _, b0 = splat_to_world(s, triangle_frames(REST, REST, TRI))
    _, b1 = splat_to_world(s, f)
    c0, c1 = _cov(b0)[0], _cov(b1)[0]
    # in-plane block scales by 4, normal variance unchanged, in/out cross terms by 2
    np.testing.assert_allclose(c1[:2, :2], 4 * c0[:2, :2], atol=1e-14)
    np.testing.assert_allclose(c1[2, 2], c0[2, 2], atol=1e-14)
    np.testing.assert_allclose(c1[:2, 2], 2 * c0[:2, 2], atol=1e-14)
    # with the normal axis as a principal axis the eigenvalues split exactly
    s2 = _splats(rot=quat.from_axis_angle([0, 0, 1], 0.7))
    e0 = np.sort(np.linalg.eigvalsh(_cov(splat_to_world(s2, triangle_frames(REST, REST, TRI))[1])[0]))
    e1 = np.sort(np.linalg.eigvalsh(_cov(splat_to_world(s2, f)[1])[0]))
    sx, sy, sz = np.exp(s2.log_scale[0].astype(np.float64))  # scales as stored (float32 logs)
    np.testing.assert_allclose(e1, np.sort([4 * sx**2, 4 * sy**2, sz**2]), rtol=1e-10)
    np.testing.assert_allclose(e0, np.sort([sx**2, sy**2, sz**2]), rtol=1e-10)


def test_surface_splat_rank_two_after_shear(rng):
    posed = REST + np.array([[0, 0, 0], [0.03, 0.02, 0.05], [-0.02, 0.04, -0.01]])
    s = _splats(n=50, u=0.3, v=0.3, w=0.02, surface=True)
    # surface splats only turn about the normal
    s.rotation[:] = quat.from_axis_angle(np.array([0, 0, 1.0]), rng.uniform(0, 2 * np.pi, 50))
    f = triangle_frames(REST, posed, TRI)
    mean, basis = splat_to_world(s, f)
    sv = np.linalg.svd(basis, compute_uv=False)
    assert np.all(sv[:, 2] <= 1e-6 * sv[:, 0])
    # zero extent along the posed normal, and w is ignored
    np.testing.assert_allclose(f.n[0] @ basis, 0, atol=1e-15)
    np.testing.assert_allclose((mean - f.p0[0]) @ f.n[0], 0, atol=1e-15)


def test_barycentric_interior_and_affine_consistency(rng):
    posed = REST @ Rotation.random(random_state=3).as_matrix().T * 1.3 + 0.5
    f0 = triangle_frames(REST, REST, TRI)
    f1 = triangle_frames(REST, posed, TRI)
    n = 200
    u = rng.uniform(0, 1, n)
    v = rng.uniform(0, 1, n) * (1 - u)
    s = _splats(n=n)
    s.u[:], s.v[:] = u, v
    s.w[:] = rng.normal(0, 0.01, n)
    m0, _ = splat_to_world(s, f0)
    m1, _ = splat_to_world(s, f1)
    # offsets from p0 map through A
    np.testing.assert_allclose((m0 - f0.p0[0]) @ f1.affine[0].T, m1 - f1.p0[0], atol=1e-12)
    # w = 0 means lie inside the posed triangle: recover nonnegative barycentrics
    s.w[:] = 0
    m1, _ = splat_to_world(s, f1)
    e = np.stack([f1.e1[0], f1.e2[0]], axis=1)
    coef, *_ = np.linalg.lstsq(e, (m1 - f1.p0[0]).T, rcond=None)
    assert np.all(coef >= -1e-9) and np.all(coef.sum(axis=0) <= 1 + 1e-9)


def test_interpolate_intensity_examples():
    tri = np.array([[0, 1, 2]])
    lv = np.array([0.0, 1.0, 2.0])
    assert interpolate_intensity([0], [0.25], [0.5], tri, lv)[0] == pytest.approx(1.0, abs=1e-12)
    assert interpolate_intensity([0], [1.0], [0.0], tri, lv)[0] == 0.0
    ones = interpolate_intensity(np.zeros(5, int), np.linspace(0, 1, 5), np.zeros(5), tri, np.ones(3))
    np.testing.assert_allclose(ones, 1.0, atol=1e-12)


def test_interpolate_intensity_bounds(rng):
    tri = rng.integers(0, 30, (40, 3))
    lv = rng.uniform(0, 4, 30)
    t = rng.integers(0, 40, 1000)
    u = rng.uniform(0, 1, 1000)
    v = rng.uniform(0, 1, 1000) * (1 - u)
    out = interpolate_intensity(t, u, v, tri, lv)
    lo, hi = lv[tri[t]].min(axis=1), lv[tri[t]].max(axis=1)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def _sphere_quadrature(n_theta=16, n_phi=32):
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1 - ct**2)
    dirs = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    weights = np.repeat(w, n_phi) * (2 * np.pi / n_phi)
    return dirs, weights


def test_sh_basis_orthonormal():
    dirs, weights = _sphere_quadrature()
    basis = np.empty((len(dirs), 16))
    for k in range(16):
        sh = np.zeros((len(dirs), 16, 3))
        sh[:, k, 0] = 1
        basis[:, k] = eval_sh(sh, dirs)[:, 0]
    gram = (basis * weights[:, None]).T @ basis
    np.testing.assert_allclose(gram, np.eye(16), atol=1e-10)


def test_sh_degree_one_signs():
    # common splatting convention: -C1 y, +C1 z, -C1 x
    sh = np.zeros((3, 4, 3))
    sh[:, 1:, 0] = np.eye(3)
    d = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0.0]])
    out = eval_sh(sh, d)[:, 0]
    c1 = 0.4886025119029199
    np.testing.assert_allclose(out, [-c1, c1, -c1], atol=1e-15)


def test_color_properties(rng):
    n = 100
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dc = rng.normal(0, 1, (1, 1, 3))
    c = eval_color(np.repeat(dc, n, axis=0), dirs, np.ones(n))
    np.testing.assert_allclose(c, np.maximum(SH_C0 * dc[0, 0] + 0.5, 0)[None].repeat(n, 0), atol=1e-15)
    sh = rng.normal(0, 0.5, (n, 16, 3))
    plain = np.maximum(eval_sh(sh, dirs) + 0.5, 0)
    np.testing.assert_allclose(eval_color(sh, dirs, np.ones(n)), plain)
    assert np.all(eval_color(sh, dirs, np.zeros(n)) == 0)
    np.testing.assert_allclose(eval_color(sh, dirs, np.full(n, 2.5)), 2.5 * plain)
    assert np.all(plain >= 0)
    one = eval_color(sh[0], dirs[0], 1.0)
    np.testing.assert_allclose(one, plain[0])


def test_shade_on_posed_asset(small_asset):
    rig = Rig(small_asset)
    pose = arm_raise_sequence(small_asset.skeleton, frames=10).frames[5]
    posed = skin_vertices(small_asset, pose, rig=rig)
    splats = small_asset.splats
    ws = shade(splats, posed, rig.triangles, np.array([0.0, 1.0, 3.0]))
    assert len(ws) == len(splats)
    cov = ws.covariance()
    ev = np.linalg.eigvalsh(cov)
    assert ev.min() >= -1e-12
    surf = splats.surface2d & ~posed.frames.degenerate[splats.t]
    sv = np.linalg.svd(ws.basis[surf], compute_uv=False)
    assert np.all(sv[:, 2] <= 1e-6 * sv[:, 0])
    assert np.all(ws.color >= 0) and np.all(np.isfinite(ws.color))
