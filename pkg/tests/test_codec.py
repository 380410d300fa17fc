import itertools

import numpy as np
import pytest

from splatrig import codec
from splatrig.asset import generate_synthetic_asset
from splatrig.asset.types import SPLAT_FIELDS, SplatAttributes

M16 = 65535.0


def _stored(raw: SplatAttributes, buf) -> SplatAttributes:
    """Raw attributes permuted into the buffer's storage order."""
    return raw if buf.order is None else raw.take(buf.order)


def _quat_angle_deg(a, b):
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    d = np.clip(np.abs(np.sum(a.astype(np.float64) * b, axis=1)), 0, 1)
    return np.degrees(2 * np.arccos(d))


def check_error_bounds(raw: SplatAttributes, buf) -> None:
    """Every per-attribute bound, for every splat."""
    x = _stored(raw, buf)
    y = codec.decompress_full(buf)
    cid = buf.chunk_ids()
    lay = buf.layout
    np.testing.assert_array_equal(y.t, x.t)
    assert np.all(np.diff(y.t.astype(np.int64)) >= 0)
    assert np.all(np.abs(y.u - x.u) <= 1 / M16)
    assert np.all(np.abs(y.v - x.v) <= 1 / M16)
    assert np.all(y.u >= 0) and np.all(y.v >= 0) and np.all(y.u.astype(np.float64) + y.v <= 1)

    ext = (buf.w_range[:, 1] - buf.w_range[:, 0]).astype(np.float64)[cid]
    surf = x.surface2d
    assert np.all(np.abs(y.w - x.w)[~surf] <= ext[~surf] / M16 + 1e-12)
    assert np.all(y.w[surf] == 0)
    lo, hi = buf.w_range[cid, 0], buf.w_range[cid, 1]
    assert np.all((y.w[~surf] >= lo[~surf]) & (y.w[~surf] <= hi[~surf]))

    assert _quat_angle_deg(x.rotation, y.rotation).max() <= 0.4
    assert np.all(np.abs(y.opacity - x.opacity) <= 1 / 255)

    sbits = (1 << lay.scale_bits) - 1
    sext = (buf.scale_range[..., 1] - buf.scale_range[..., 0]).astype(np.float64)[cid]
    with np.errstate(invalid="ignore"):
        err = np.abs(y.log_scale.astype(np.float64) - x.log_scale)
    err[:, 2][surf] = 0
    assert np.isneginf(y.log_scale[surf, 2]).all()
    assert np.all(err <= sext / sbits + 1e-12)

    dbits = (1 << lay.dc_bits) - 1
    dext = (buf.dc_range[..., 1] - buf.dc_range[..., 0]).astype(np.float64)[cid]
    assert np.all(np.abs(y.sh[:, 0, :].astype(np.float64) - x.sh[:, 0, :]) <= dext / dbits + 1e-12)
    dlo, dhi = buf.dc_range[cid, :, 0], buf.dc_range[cid, :, 1]
    assert np.all((y.sh[:, 0, :] >= dlo) & (y.sh[:, 0, :] <= dhi))

    bbits = (1 << lay.band_bits) - 1
    for b in range(1, lay.stored_degree + 1):
        sl = slice(b * b, (b + 1) * (b + 1))
        bext = (buf.band_range[:, b - 1, 1] - buf.band_range[:, b - 1, 0]).astype(np.float64)[cid]
        e = np.abs(y.sh[:, sl, :].astype(np.float64) - x.sh[:, sl, :])
        assert np.all(e <= bext[:, None, None] / bbits + 1e-12), f"band {b}"
    # dropped bands decode as zero
    if lay.stored_degree < buf.sh_degree:
        assert np.all(y.sh[:, (lay.stored_degree + 1) ** 2:, :] == 0)
    np.testing.assert_array_equal(y.label, x.label)
    np.testing.assert_array_equal(y.surface2d, x.surface2d)


@pytest.mark.parametrize("seed", range(10))
def test_error_bounds_over_seeds(seed):
    a = generate_synthetic_asset(splat_count=8000, seed=100 + seed)
    for profile in codec.PROFILES:
        check_error_bounds(a.splats, codec.compress_splats(a.splats, profile))


def _single(u=0.0, v=0.0, w=0.0, rot=(0, 0, 0, 1), surface=True, t=0, sh_degree=3):
    k = (sh_degree + 1) ** 2
    ls = np.array([[-5.0, -5.0, -np.inf if surface else -6.0]], np.float32)
    return SplatAttributes(
        t=np.array([t], np.uint32), u=np.array([u], np.float32), v=np.array([v], np.float32),
        w=np.array([w], np.float32), rotation=np.array([rot], np.float32), log_scale=ls,
        opacity=np.array([0.5], np.float32), sh=np.zeros((1, k, 3), np.float32),
        label=np.array([1], np.uint8), surface2d=np.array([surface]))


def test_barycentric_endpoints_exact():
    for u, v in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]:
        buf = codec.compress_splats(_single(u, v))
        y = codec.decompress_full(buf)
        assert y.u[0] == u and y.v[0] == v


def test_barycentric_sum_kept_valid():
    # both coordinates round up: the decoder must still see u + v <= 1
    u = np.float32(0.3 + 0.4 / M16)
    v = np.float32(1.0 - u)
    buf = codec.compress_splats(_single(u, v))
    y = codec.decompress_full(buf)
    assert float(y.u[0]) + float(y.v[0]) <= 1.0
    assert abs(y.v[0] - v) <= 1 / M16


def test_barycentric_code_sum_edge_all_codes():
    # every code pair summing to 65535: float32 decode must not round u + v past 1
    a = np.arange(M16 + 1, dtype=np.float64)
    s = _single()
    n = len(a)
    raw = SplatAttributes(
        t=np.zeros(n, np.uint32), u=(a / M16).astype(np.float32), v=((M16 - a) / M16).astype(np.float32),
        w=np.zeros(n, np.float32), rotation=np.tile(s.rotation, (n, 1)), log_scale=np.tile(s.log_scale, (n, 1)),
        opacity=np.full(n, 0.5, np.float32), sh=np.zeros((n, 16, 3), np.float32),
        label=np.ones(n, np.uint8), surface2d=np.ones(n, bool))
    buf = codec.compress_splats(raw)
    for view in (codec.decompress_full(buf), codec.decompress_positions(buf)):
        assert np.all(view.u.astype(np.float64) + view.v <= 1.0)
        assert np.all(np.abs(view.v.astype(np.float64) - raw.v) <= 1 / M16)

def test_t_delta_coding():
    np.testing.assert_array_equal(codec.encode_t_deltas([5, 5, 6, 9]), [5, 0, 1, 3])
    singles = [_single(t=t) for t in (5, 5, 6, 9)]
    s = SplatAttributes(**{k: np.concatenate([getattr(x, k) for x in singles]) for k in SPLAT_FIELDS})
    buf = codec.compress_splats(s)
    np.testing.assert_array_equal(codec.decode_t(buf), [5, 5, 6, 9])
    stream = codec._varint_decode(buf.t_stream)
    np.testing.assert_array_equal(stream, [5, 0, 1, 3])


def test_varint_large_values():
    vals = np.array([0, 127, 128, 16383, 16384, 2**28, 2**32 - 1])
    np.testing.assert_array_equal(codec._varint_decode(codec._varint_encode(vals)), vals)


def test_zero_w_extent_decodes_min():
    s = _single(w=0.02, surface=False)
    s2 = SplatAttributes(**{k: np.concatenate([getattr(s, k)] * 3) for k in SPLAT_FIELDS})
    buf = codec.compress_splats(s2)
    assert buf.w_range[0, 0] == buf.w_range[0, 1]
    pv = codec.decompress_positions(buf)
    assert np.all(pv.w == buf.w_range[0, 0])
    assert np.all(pv.w == np.float32(0.02))


def test_identity_quaternion():
    y = codec.decompress_full(codec.compress_splats(_single(rot=(0, 0, 0, 1))))
    assert _quat_angle_deg(np.array([[0, 0, 0, 1.0]]), y.rotation)[0] <= 0.4


def test_rotation_grid_worst_case(rng):
    # brute force over a dense set of hard rotations: near-ties between components
    q = rng.standard_normal((20000, 4))
    ties = np.repeat(np.abs(q[:, :1]), 2, axis=1) * np.array([1, -1])
    q[:5000, :2] = ties[:5000]
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    code = codec._rot_encode(q)
    back = codec._rot_decode(code)
    assert _quat_angle_deg(q, back).max() <= 0.4
    # a decoded quaternion re-encodes to the same code
    np.testing.assert_array_equal(codec._rot_encode(back), code)


@pytest.mark.parametrize("profile", codec.PROFILES)
def test_idempotent(small_asset, profile):
    buf = codec.compress_splats(small_asset.splats, profile)
    again = codec.compress_splats(codec.decompress_full(buf), profile)
    assert codec.to_bytes(again) == codec.to_bytes(buf)


@pytest.mark.parametrize("profile", codec.PROFILES)
def test_phase_consistency(small_asset, profile):
    buf = codec.compress_splats(small_asset.splats, profile)
    pv = codec.decompress_positions(buf)
    full = codec.decompress_full(buf)
    for k in ("t", "u", "v", "w", "label"):
        np.testing.assert_array_equal(getattr(pv, k), getattr(full, k))


def test_unsorted_input_is_sorted_with_permutation(small_asset, rng):
    s = small_asset.splats
    perm = rng.permutation(len(s))
    shuffled = SplatAttributes(**{k: getattr(s, k)[perm] for k in SPLAT_FIELDS})
    buf = codec.compress_splats(shuffled)
    assert buf.order is not None
    np.testing.assert_array_equal(codec.decode_t(buf), shuffled.t[buf.order])
    check_error_bounds(shuffled, buf)


def test_profiles_monotone(small_asset):
    d = codec.compress_splats(small_asset.splats, "default")
    a = codec.compress_splats(small_asset.splats, "aggressive")
    assert a.ratio <= d.ratio
    assert d.ratio <= 0.30 and a.ratio <= 0.12


def test_survivor_subsets(small_compressed):
    buf = small_compressed.splats
    full = codec.decompress_full(buf)
    everything = codec.decompress_full(buf, np.arange(len(buf)))
    for k in ("t", "u", "v", "w", "rotation", "opacity", "sh", "label"):
        np.testing.assert_array_equal(getattr(everything, k), getattr(full, k))
    empty = codec.decompress_full(buf, [])
    assert len(empty) == 0 and empty.sh.shape[1:] == full.sh.shape[1:]
    idx = np.array([0, 255, 256, 257, len(buf) - 1])
    part = codec.decompress_full(buf, idx)
    np.testing.assert_array_equal(part.rotation, full.rotation[idx])
    np.testing.assert_array_equal(part.sh, full.sh[idx])


def test_survivor_index_errors(small_compressed):
    buf = small_compressed.splats
    with pytest.raises(IndexError):
        codec.decompress_full(buf, [len(buf)])
    with pytest.raises(IndexError):
        codec.decompress_full(buf, [-1])
    with pytest.raises(ValueError):
        codec.decompress_full(buf, [5, 3])


def test_non_finite_rejected():
    s = _single()
    s.opacity[0] = np.nan
    with pytest.raises(codec.CodecError, match="opacity"):
        codec.compress_splats(s)
    with pytest.raises(codec.CodecError):
        codec.compress_splats(_single(), "lossless")


def test_bytes_round_trip(small_asset):
    for profile in codec.PROFILES:
        buf = codec.compress_splats(small_asset.splats, profile)
        data = codec.to_bytes(buf)
        back = codec.from_bytes(data)
        assert codec.to_bytes(back) == data
        for a, b in itertools.combinations([codec.decompress_full(buf), codec.decompress_full(back)], 2):
            np.testing.assert_array_equal(a.sh, b.sh)


def test_corrupt_t_stream(small_compressed):
    buf = small_compressed.splats
    data = bytearray(codec.to_bytes(buf))
    with pytest.raises(codec.CodecError):
        codec.from_bytes(bytes(data[:-7]))


def test_max_scale_bounds_decoded(small_compressed):
    y = codec.decompress_full(small_compressed.splats)
    finite = np.where(np.isfinite(y.log_scale), y.log_scale, -np.inf)
    assert np.exp(finite.max()) <= codec.max_scale(small_compressed.splats) * (1 + 1e-6)
