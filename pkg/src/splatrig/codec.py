"""Chunked splat attribute compression with two-phase decode.

Splats are stored sorted by parent triangle in chunks of 256. Each chunk
carries float32 min/max headers for the range-normalized groups (normal
offset, per-axis log scale, SH DC per channel, one range per higher SH
band). The payload is a set of fixed-width planes plus a delta-varint
stream of triangle ids, so a single splat can be decoded without touching
its neighbours (except for ``t``, which is decoded per chunk).

Phase 1 (:func:`decompress_positions`) decodes only what culling needs.
Phase 2 (:func:`decompress_full`) decodes every attribute for an explicit
survivor list. The byte layout is documented in ``docs/hra_format.md``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .asset.types import SplatAttributes, raw_bytes_per_splat, sh_coeff_count

CHUNK_SIZE = 256
PROFILES = ("default", "aggressive")

_SQRT1_2 = np.sqrt(0.5)
_ROT_BITS = 10
_ROT_MAX = (1 << _ROT_BITS) - 1
_AGGR_SH_BITS = 6

FLAG_LABEL = 1
FLAG_SURFACE2D = 2


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class _Layout:
    """Bit widths for one profile at a given SH degree."""

    scale_bits: int
    dc_bits: int
    stored_degree: int
    band_bits: int

    @property
    def higher_count(self) -> int:
        # per-splat higher-band scalars (coefficients x RGB)
        return 3 * (sh_coeff_count(self.stored_degree) - 1)

    @property
    def higher_bytes_per_chunk_splat(self) -> float:
        return self.higher_count * self.band_bits / 8.0


def layout_for(profile: str, sh_degree: int) -> _Layout:
    if profile == "default":
        return _Layout(scale_bits=16, dc_bits=16, stored_degree=sh_degree, band_bits=8)
    if profile == "aggressive":
        # bands above 1 are dropped; see docs/hra_format.md for the size budget
        return _Layout(scale_bits=8, dc_bits=8, stored_degree=min(sh_degree, 1), band_bits=_AGGR_SH_BITS)
    raise CodecError(f"unknown profile {profile!r}")


@dataclass
class PositionView:
    """Phase-1 decode output: what culling needs and nothing more."""

    t: np.ndarray  # (n,) int64
    u: np.ndarray  # (n,) float32
    v: np.ndarray
    w: np.ndarray
    label: np.ndarray  # (n,) uint8

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class ChunkedSplatBuffer:
    profile: str
    sh_degree: int
    count: int
    chunk_counts: np.ndarray  # (C,) int64
    w_range: np.ndarray  # (C, 2) float32
    scale_range: np.ndarray  # (C, 3, 2) float32
    dc_range: np.ndarray  # (C, 3, 2) float32
    band_range: np.ndarray  # (C, B, 2) float32, B = stored degree
    t_stream: np.ndarray  # uint8, concatenated per-chunk varint streams
    t_stream_lens: np.ndarray  # (C,) int64
    u_code: np.ndarray  # (n,) uint16
    v_code: np.ndarray
    w_code: np.ndarray
    rot_code: np.ndarray  # (n,) uint32, 10-10-10-2
    scale_code: np.ndarray  # (n, 3) uint16 or uint8
    opacity_code: np.ndarray  # (n,) uint8
    dc_code: np.ndarray  # (n, 3) uint16 or uint8
    higher: np.ndarray  # default: (n, H) uint8; aggressive: packed 6-bit stream, uint8
    flags: np.ndarray  # (n,) uint8
    order: Optional[np.ndarray] = None  # input index of each stored splat, when compress() reordered

    def __len__(self) -> int:
        return self.count

    @property
    def layout(self) -> _Layout:
        return layout_for(self.profile, self.sh_degree)

    @property
    def chunk_count(self) -> int:
        return len(self.chunk_counts)

    @property
    def nbytes(self) -> int:
        return len(to_bytes(self))

    @property
    def ratio(self) -> float:
        """Compressed size over the float32 structure-of-arrays baseline."""
        return self.nbytes / float(self.count * raw_bytes_per_splat(self.sh_degree))

    def chunk_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.chunk_count), self.chunk_counts)


# ---------------------------------------------------------------------------
# scalar quantizers


def _quantize_unit(x, bits):
    qmax = (1 << bits) - 1
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) * qmax + 0.5), 0, qmax).astype(np.int64)


def _dequantize_unit(q, bits):
    return (q.astype(np.float64) / ((1 << bits) - 1)).astype(np.float32)


def _quantize_range(x, lo, hi, bits):
    qmax = (1 << bits) - 1
    x = np.asarray(x, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    ext = np.asarray(hi, dtype=np.float64) - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(ext > 0, np.floor((x - lo) / ext * qmax + 0.5), 0.0)
    return np.clip(q, 0, qmax).astype(np.int64)


def _dequantize_range(q, lo, hi, bits):
    qmax = (1 << bits) - 1
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    val = lo + q.astype(np.float64) * ((hi - lo) / qmax)
    # endpoints decode exactly so recompressing reproduces the header
    val = np.where(q == qmax, hi, val)
    val = np.where(q == 0, lo, val)
    return val.astype(np.float32)


def _chunk_minmax(x, starts, mask=None):
    """Per-chunk min and max along axis 0; masked-out entries are ignored."""
    x = np.asarray(x, dtype=np.float32)
    if mask is not None:
        lo_src = np.where(mask, x, np.float32(np.inf))
        hi_src = np.where(mask, x, np.float32(-np.inf))
    else:
        lo_src = hi_src = x
    lo = np.minimum.reduceat(lo_src, starts, axis=0)
    hi = np.maximum.reduceat(hi_src, starts, axis=0)
    empty = ~np.isfinite(lo)
    lo = np.where(empty, np.float32(0), lo)
    hi = np.where(empty, np.float32(0), hi)
    return lo.astype(np.float32), hi.astype(np.float32)


# ---------------------------------------------------------------------------
# rotation: smallest-three, 10 bits per kept component, 2-bit index


def _rot_decode(code):
    code = np.asarray(code, dtype=np.uint32).astype(np.int64)
    idx = (code >> 30) & 3
    comps = np.stack([(code >> (10 * k)) & _ROT_MAX for k in range(3)], axis=-1)
    small = -_SQRT1_2 + comps.astype(np.float64) * (2 * _SQRT1_2 / _ROT_MAX)
    ss = np.sum(small * small, axis=-1)
    big = np.sqrt(np.maximum(0.0, 1.0 - ss))
    q = np.empty(code.shape + (4,))
    rows = np.arange(len(code))
    q[rows, idx] = big
    others = np.array([[j for j in range(4) if j != i] for i in range(4)])
    q[rows[:, None], others[idx]] = small
    over = ss > 1.0
    if np.any(over):
        q[over] /= np.linalg.norm(q[over], axis=-1, keepdims=True)
    return q.astype(np.float32)


def _rot_encode_with(q, idx):
    rows = np.arange(len(q))
    sign = np.where(q[rows, idx] < 0, -1.0, 1.0)
    q = q * sign[:, None]
    others = np.array([[j for j in range(4) if j != i] for i in range(4)])
    small = q[rows[:, None], others[idx]]
    comps = np.clip(np.floor((small + _SQRT1_2) / (2 * _SQRT1_2) * _ROT_MAX + 0.5), 0, _ROT_MAX).astype(np.int64)
    code = comps[:, 0] | (comps[:, 1] << 10) | (comps[:, 2] << 20) | (idx.astype(np.int64) << 30)
    return code.astype(np.uint32)


def _rot_encode(rotation):
    q = np.asarray(rotation, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    idx = np.argmax(np.abs(q), axis=-1)
    code = _rot_encode_with(q, idx)
    # Near-ties between the two largest components can decode to a quaternion
    # whose omitted component is no longer the strict maximum; re-encoding that
    # would pick another slot. Step the offending kept components one code
    # toward zero until the omitted one dominates again.
    others = np.array([[j for j in range(4) if j != i] for i in range(4)])
    for _ in range(8):
        dec = np.abs(_rot_decode(code))
        rows = np.arange(len(code))
        big = dec[rows, idx]
        kept = dec[rows[:, None], others[idx]]
        offend = kept >= big[:, None]
        bad = np.flatnonzero(offend.any(axis=1))
        if len(bad) == 0:
            break
        c = code[bad].astype(np.int64)
        for k in range(3):
            sel = offend[bad, k]
            field = (c >> (10 * k)) & _ROT_MAX
            step = np.where(field > _ROT_MAX // 2, -1, 1)
            field = np.where(sel, field + step, field)
            c = (c & ~(_ROT_MAX << (10 * k))) | (field << (10 * k))
        code[bad] = c.astype(np.uint32)
    return code


# ---------------------------------------------------------------------------
# triangle ids: per-chunk delta varints


def _varint_encode(values):
    values = np.asarray(values, dtype=np.int64)
    if len(values) == 0:
        return np.zeros(0, dtype=np.uint8)
    nbytes = np.ones(len(values), dtype=np.int64)
    for k in range(1, 5):
        nbytes += values >= (1 << (7 * k))
    starts = np.concatenate([[0], np.cumsum(nbytes)[:-1]])
    out = np.zeros(int(nbytes.sum()), dtype=np.uint8)
    for k in range(5):
        sel = nbytes > k
        byte = (values[sel] >> (7 * k)) & 0x7F
        byte = byte | np.where(nbytes[sel] > k + 1, 0x80, 0)
        out[starts[sel] + k] = byte
    return out


def _varint_decode(stream):
    stream = np.asarray(stream, dtype=np.uint8)
    if len(stream) == 0:
        return np.zeros(0, dtype=np.int64)
    if stream[-1] & 0x80:
        raise CodecError("truncated varint stream")
    is_end = stream < 0x80
    value_id = np.concatenate([[0], np.cumsum(is_end)[:-1]])
    ends = np.flatnonzero(is_end)
    starts = np.concatenate([[0], ends[:-1] + 1])
    pos = np.arange(len(stream)) - starts[value_id]
    if np.any(pos >= 5):
        raise CodecError("varint longer than 5 bytes")
    contrib = (stream.astype(np.int64) & 0x7F) << (7 * pos)
    return np.bincount(value_id, weights=contrib.astype(np.float64), minlength=len(ends)).astype(np.int64)


def encode_t_deltas(t):
    """Delta sequence for one chunk; the first entry is the absolute id."""
    t = np.asarray(t, dtype=np.int64)
    return np.diff(t, prepend=0)


# ---------------------------------------------------------------------------
# 6-bit packing for the aggressive profile


def _pack_bits(codes, bits):
    """Pack (n, k) codes LSB-first, row after row, into a byte stream."""
    n, k = codes.shape
    total_bits = n * k * bits
    shifts = np.arange(bits)
    bit_array = ((codes.astype(np.int64)[..., None] >> shifts) & 1).astype(np.uint8).reshape(-1)
    padded = np.zeros(-(-total_bits // 8) * 8, dtype=np.uint8)
    padded[:total_bits] = bit_array
    return np.packbits(padded, bitorder="little")


def _unpack_rows(stream, rows, k, bits):
    """Extract rows of k codes each from a packed stream (row width k*bits <= 57)."""
    row_bits = k * bits
    buf = np.concatenate([stream, np.zeros(8, dtype=np.uint8)])
    bit0 = np.asarray(rows, dtype=np.int64) * row_bits
    byte0 = bit0 >> 3
    shift = (bit0 & 7).astype(np.uint64)
    window = np.zeros(len(byte0), dtype=np.uint64)
    for j in range(8):
        window |= buf[byte0 + j].astype(np.uint64) << np.uint64(8 * j)
    window >>= shift
    mask = np.uint64((1 << bits) - 1)
    out = np.empty((len(byte0), k), dtype=np.int64)
    for j in range(k):
        out[:, j] = ((window >> np.uint64(j * bits)) & mask).astype(np.int64)
    return out


# ---------------------------------------------------------------------------


def _check_finite(splats: SplatAttributes):
    for name in ("u", "v", "w", "rotation", "opacity", "sh"):
        arr = getattr(splats, name)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr).reshape(len(arr), -1).all(axis=1))[0])
            raise CodecError(f"non-finite {name} at splat {bad}")
    ls = splats.log_scale
    allowed = np.zeros(ls.shape, dtype=bool)
    allowed[:, 2] = splats.surface2d & np.isneginf(ls[:, 2])
    ok = np.isfinite(ls) | allowed
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok.all(axis=1))[0])
        raise CodecError(f"non-finite log_scale at splat {bad}")


def compress_splats(splats: SplatAttributes, profile: str = "default") -> ChunkedSplatBuffer:
    """Quantize a splat set into 256-splat chunks.

    Splats not already ordered by triangle id are stably sorted first; the
    applied permutation is kept on ``buffer.order``.
    """
    lay = layout_for(profile, splats.sh_degree)
    _check_finite(splats)
    n = len(splats)
    order = None
    t_in = np.asarray(splats.t, dtype=np.int64)
    if n and np.any(np.diff(t_in) < 0):
        order = np.argsort(t_in, kind="stable")
        splats = splats.take(order)

    counts = np.full(-(-n // CHUNK_SIZE), CHUNK_SIZE, dtype=np.int64)
    if n % CHUNK_SIZE:
        counts[-1] = n % CHUNK_SIZE
    starts = np.arange(len(counts)) * CHUNK_SIZE
    cid = np.repeat(np.arange(len(counts)), counts)

    t = np.asarray(splats.t, dtype=np.int64)
    deltas = t - np.where(np.arange(n) % CHUNK_SIZE == 0, 0, np.concatenate([[0], t[:-1]]))
    streams = [_varint_encode(deltas[s:s + c]) for s, c in zip(starts, counts)]
    t_lens = np.array([len(s) for s in streams], dtype=np.int64)
    t_stream = np.concatenate(streams) if streams else np.zeros(0, dtype=np.uint8)

    u_code = _quantize_unit(splats.u, 16)
    v_code = _quantize_unit(splats.v, 16)
    over = u_code + v_code > 65535
    v_code[over] -= 1

    surf = np.asarray(splats.surface2d, dtype=bool)
    w = np.where(surf, np.float32(0), splats.w).astype(np.float32)
    w_lo, w_hi = _chunk_minmax(w, starts)
    w_code = _quantize_range(w, w_lo[cid], w_hi[cid], 16)

    rot_code = _rot_encode(splats.rotation)

    ls = np.asarray(splats.log_scale, dtype=np.float32)
    valid = np.isfinite(ls)
    s_lo, s_hi = _chunk_minmax(ls, starts, mask=valid)
    scale_code = _quantize_range(np.where(valid, ls, s_lo[cid]), s_lo[cid], s_hi[cid], lay.scale_bits)

    opacity_code = _quantize_unit(splats.opacity, 8)

    sh = np.asarray(splats.sh, dtype=np.float32)
    dc = sh[:, 0, :]
    dc_lo, dc_hi = _chunk_minmax(dc, starts)
    dc_code = _quantize_range(dc, dc_lo[cid], dc_hi[cid], lay.dc_bits)

    bands = lay.stored_degree
    band_range = np.zeros((len(counts), bands, 2), dtype=np.float32)
    higher_codes = np.zeros((n, lay.higher_count), dtype=np.int64)
    col = 0
    for b in range(1, bands + 1):
        block = sh[:, b * b:(b + 1) * (b + 1), :].reshape(n, -1)
        lo = np.minimum.reduceat(block.min(axis=1), starts) if n else np.zeros(0, np.float32)
        hi = np.maximum.reduceat(block.max(axis=1), starts) if n else np.zeros(0, np.float32)
        band_range[:, b - 1, 0] = lo
        band_range[:, b - 1, 1] = hi
        higher_codes[:, col:col + block.shape[1]] = _quantize_range(block, lo[cid, None], hi[cid, None], lay.band_bits)
        col += block.shape[1]

    if profile == "aggressive":
        higher = _pack_bits(higher_codes, lay.band_bits)
    else:
        higher = higher_codes.astype(np.uint8)

    flags = (np.asarray(splats.label, dtype=np.uint8) & 1) | (surf.astype(np.uint8) << 1)

    scale_dtype = np.uint16 if lay.scale_bits == 16 else np.uint8
    dc_dtype = np.uint16 if lay.dc_bits == 16 else np.uint8
    return ChunkedSplatBuffer(
        profile=profile,
        sh_degree=splats.sh_degree,
        count=n,
        chunk_counts=counts,
        w_range=np.stack([w_lo, w_hi], axis=-1),
        scale_range=np.stack([s_lo, s_hi], axis=-1),
        dc_range=np.stack([dc_lo, dc_hi], axis=-1),
        band_range=band_range,
        t_stream=t_stream,
        t_stream_lens=t_lens,
        u_code=u_code.astype(np.uint16),
        v_code=v_code.astype(np.uint16),
        w_code=w_code.astype(np.uint16),
        rot_code=rot_code,
        scale_code=scale_code.astype(scale_dtype),
        opacity_code=opacity_code.astype(np.uint8),
        dc_code=dc_code.astype(dc_dtype),
        higher=higher,
        flags=flags.astype(np.uint8),
        order=order,
    )


def decode_t(buffer: ChunkedSplatBuffer) -> np.ndarray:
    deltas = _varint_decode(buffer.t_stream)
    if len(deltas) != buffer.count:
        raise CodecError(f"t stream holds {len(deltas)} ids, expected {buffer.count}")
    t = np.cumsum(deltas)
    starts = np.arange(buffer.chunk_count) * CHUNK_SIZE
    base = np.concatenate([[0], t[starts[1:] - 1]]) if buffer.chunk_count else np.zeros(0, np.int64)
    return t - np.repeat(base, buffer.chunk_counts)


def _positions(buffer, index):
    cid = index // CHUNK_SIZE
    u = _dequantize_unit(buffer.u_code[index], 16)
    v = _dequantize_unit(buffer.v_code[index], 16)
    # float32 rounding can push u + v past 1 when the codes sum to 65535
    cap = (1.0 - u.astype(np.float64)).astype(np.float32)
    cap = np.where(u.astype(np.float64) + cap > 1.0, np.nextafter(cap, np.float32(0)), cap)
    v = np.minimum(v, cap)
    w = _dequantize_range(buffer.w_code[index], buffer.w_range[cid, 0], buffer.w_range[cid, 1], 16)
    flags = buffer.flags[index]
    w = np.where(flags & FLAG_SURFACE2D, np.float32(0), w).astype(np.float32)
    return u, v, w, flags


def decompress_positions(buffer: ChunkedSplatBuffer) -> PositionView:
    """Phase 1: triangle id, barycentrics, normal offset and label for every splat."""
    index = np.arange(buffer.count)
    t = decode_t(buffer)
    u, v, w, flags = _positions(buffer, index)
    return PositionView(t=t, u=u, v=v, w=w, label=(flags & FLAG_LABEL).astype(np.uint8))


def decompress_full(buffer: ChunkedSplatBuffer, survivor_indices=None) -> SplatAttributes:
    """Phase 2: full attributes for the listed splats only (all when None)."""
    lay = buffer.layout
    if survivor_indices is None:
        index = np.arange(buffer.count)
    else:
        index = np.asarray(survivor_indices, dtype=np.int64).reshape(-1)
        if len(index) and (index.min() < 0 or index.max() >= buffer.count):
            raise IndexError("survivor index out of range")
        if len(index) > 1 and np.any(np.diff(index) < 0):
            raise ValueError("survivor indices must be sorted")
    k = len(index)
    ncoef = sh_coeff_count(buffer.sh_degree)
    if k == 0:
        return SplatAttributes(
            t=np.zeros(0, np.uint32), u=np.zeros(0, np.float32), v=np.zeros(0, np.float32),
            w=np.zeros(0, np.float32), rotation=np.zeros((0, 4), np.float32),
            log_scale=np.zeros((0, 3), np.float32), opacity=np.zeros(0, np.float32),
            sh=np.zeros((0, ncoef, 3), np.float32), label=np.zeros(0, np.uint8),
            surface2d=np.zeros(0, bool),
        )
    cid = index // CHUNK_SIZE
    t = decode_t(buffer)[index]
    u, v, w, flags = _positions(buffer, index)
    surf = (flags & FLAG_SURFACE2D) != 0

    rotation = _rot_decode(buffer.rot_code[index])

    s_lo = buffer.scale_range[cid, :, 0]
    s_hi = buffer.scale_range[cid, :, 1]
    log_scale = _dequantize_range(buffer.scale_code[index], s_lo, s_hi, lay.scale_bits)
    log_scale[surf, 2] = -np.inf

    opacity = _dequantize_unit(buffer.opacity_code[index], 8)

    sh = np.zeros((k, ncoef, 3), dtype=np.float32)
    sh[:, 0, :] = _dequantize_range(buffer.dc_code[index], buffer.dc_range[cid, :, 0], buffer.dc_range[cid, :, 1], lay.dc_bits)
    if lay.higher_count:
        if buffer.profile == "aggressive":
            codes = _unpack_rows(buffer.higher, index, lay.higher_count, lay.band_bits)
        else:
            codes = buffer.higher[index].astype(np.int64)
        col = 0
        for b in range(1, lay.stored_degree + 1):
            width = 3 * (2 * b + 1)
            lo = buffer.band_range[cid, b - 1, 0][:, None]
            hi = buffer.band_range[cid, b - 1, 1][:, None]
            sh[:, b * b:(b + 1) * (b + 1), :] = _dequantize_range(codes[:, col:col + width], lo, hi, lay.band_bits).reshape(k, 2 * b + 1, 3)
            col += width

    return SplatAttributes(
        t=t.astype(np.uint32), u=u, v=v, w=w, rotation=rotation, log_scale=log_scale,
        opacity=opacity, sh=sh, label=(flags & FLAG_LABEL).astype(np.uint8), surface2d=surf,
    )


# ---------------------------------------------------------------------------
# serialization (SPLC section payload)

_PROFILE_CODE = {"default": 0, "aggressive": 1}
_PROFILE_NAME = {v: k for k, v in _PROFILE_CODE.items()}


def _chunk_bytes(buf: ChunkedSplatBuffer, c: int, start: int, t_off: int) -> bytes:
    lay = buf.layout
    n = int(buf.chunk_counts[c])
    sl = slice(start, start + n)
    parts = [
        struct.pack("<HH", n, int(buf.t_stream_lens[c])),
        buf.w_range[c].astype("<f4").tobytes(),
        buf.scale_range[c].astype("<f4").tobytes(),
        buf.dc_range[c].astype("<f4").tobytes(),
        buf.band_range[c].astype("<f4").tobytes(),
        buf.t_stream[t_off:t_off + int(buf.t_stream_lens[c])].tobytes(),
        buf.u_code[sl].astype("<u2").tobytes(),
        buf.v_code[sl].astype("<u2").tobytes(),
        buf.w_code[sl].astype("<u2").tobytes(),
        buf.rot_code[sl].astype("<u4").tobytes(),
        buf.scale_code[sl].astype("<u2" if lay.scale_bits == 16 else "u1").tobytes(),
        buf.opacity_code[sl].tobytes(),
        buf.dc_code[sl].astype("<u2" if lay.dc_bits == 16 else "u1").tobytes(),
    ]
    if lay.higher_count:
        if buf.profile == "aggressive":
            row_bits = lay.higher_count * lay.band_bits
            b0 = start * row_bits // 8
            b1 = -(-(start + n) * row_bits // 8)
            parts.append(buf.higher[b0:b1].tobytes())
        else:
            parts.append(buf.higher[sl].tobytes())
    parts.append(buf.flags[sl].tobytes())
    return b"".join(parts)


def to_bytes(buf: ChunkedSplatBuffer) -> bytes:
    chunks = []
    t_off = 0
    for c in range(buf.chunk_count):
        chunks.append(_chunk_bytes(buf, c, c * CHUNK_SIZE, t_off))
        t_off += int(buf.t_stream_lens[c])
    offsets = np.concatenate([[0], np.cumsum([len(x) for x in chunks])[:-1]]).astype("<u4") if chunks else np.zeros(0, "<u4")
    head = struct.pack("<BBII", _PROFILE_CODE[buf.profile], buf.sh_degree, buf.count, buf.chunk_count)
    return head + offsets.tobytes() + b"".join(chunks)


def from_bytes(data: bytes) -> ChunkedSplatBuffer:
    mv = memoryview(data)
    if len(mv) < 10:
        raise CodecError("SPLC payload too short")
    pcode, degree, count, nchunks = struct.unpack_from("<BBII", mv, 0)
    if pcode not in _PROFILE_NAME or degree > 3:
        raise CodecError("corrupt SPLC header")
    profile = _PROFILE_NAME[pcode]
    lay = layout_for(profile, degree)
    if nchunks != -(-count // CHUNK_SIZE):
        raise CodecError("chunk count does not match splat count")
    pos = 10
    if len(mv) < pos + 4 * nchunks:
        raise CodecError("truncated chunk directory")
    offsets = np.frombuffer(mv, dtype="<u4", count=nchunks, offset=pos).astype(np.int64)
    base = pos + 4 * nchunks
    sdt = np.dtype("<u2") if lay.scale_bits == 16 else np.dtype("u1")
    ddt = np.dtype("<u2") if lay.dc_bits == 16 else np.dtype("u1")
    nb = lay.stored_degree

    fields = {k: [] for k in ("counts", "w", "s", "dc", "band", "t", "tl", "u", "v", "wc", "rot", "sc", "op", "dcc", "hi", "fl")}
    for c in range(nchunks):
        p = base + int(offsets[c])
        expected = min(CHUNK_SIZE, count - c * CHUNK_SIZE)

        def take(dtype, num):
            nonlocal p
            dtype = np.dtype(dtype)
            size = dtype.itemsize * num
            if p + size > len(mv):
                raise CodecError(f"chunk {c} truncated")
            arr = np.frombuffer(mv, dtype=dtype, count=num, offset=p)
            p += size
            return arr

        n, tlen = (int(x) for x in take("<u2", 2))
        if n != expected:
            raise CodecError(f"chunk {c} header declares {n} splats, expected {expected}")
        w = take("<f4", 2)
        s = take("<f4", 6).reshape(3, 2)
        dc = take("<f4", 6).reshape(3, 2)
        band = take("<f4", 2 * nb).reshape(nb, 2)
        hdr = np.concatenate([w, s.ravel(), dc.ravel(), band.ravel()])
        if not np.all(np.isfinite(hdr)) or np.any(hdr[0::2] > hdr[1::2]):
            raise CodecError(f"chunk {c} has a corrupt min/max header")
        fields["counts"].append(n)
        fields["w"].append(w)
        fields["s"].append(s)
        fields["dc"].append(dc)
        fields["band"].append(band)
        fields["t"].append(take("u1", tlen))
        fields["tl"].append(tlen)
        fields["u"].append(take("<u2", n))
        fields["v"].append(take("<u2", n))
        fields["wc"].append(take("<u2", n))
        fields["rot"].append(take("<u4", n))
        fields["sc"].append(take(sdt, 3 * n).reshape(n, 3))
        fields["op"].append(take("u1", n))
        fields["dcc"].append(take(ddt, 3 * n).reshape(n, 3))
        if lay.higher_count:
            if profile == "aggressive":
                row_bits = lay.higher_count * lay.band_bits
                start = c * CHUNK_SIZE
                nbytes = -(-(start + n) * row_bits // 8) - start * row_bits // 8
                fields["hi"].append(take("u1", nbytes))
            else:
                fields["hi"].append(take("u1", lay.higher_count * n).reshape(n, lay.higher_count))
        fields["fl"].append(take("u1", n))

    def cat(key, shape, dtype):
        if fields[key]:
            return np.concatenate(fields[key]).astype(dtype)
        return np.zeros(shape, dtype=dtype)

    if profile == "aggressive" or not lay.higher_count:
        higher = cat("hi", (0,), np.uint8)
    else:
        higher = cat("hi", (0, lay.higher_count), np.uint8)
    buf = ChunkedSplatBuffer(
        profile=profile, sh_degree=degree, count=count,
        chunk_counts=np.asarray(fields["counts"], dtype=np.int64),
        w_range=cat("w", (0, 2), np.float32).reshape(-1, 2),
        scale_range=cat("s", (0, 3, 2), np.float32).reshape(-1, 3, 2),
        dc_range=cat("dc", (0, 3, 2), np.float32).reshape(-1, 3, 2),
        band_range=cat("band", (0, nb, 2), np.float32).reshape(-1, nb, 2),
        t_stream=cat("t", (0,), np.uint8),
        t_stream_lens=np.asarray(fields["tl"], dtype=np.int64),
        u_code=cat("u", (0,), np.uint16), v_code=cat("v", (0,), np.uint16),
        w_code=cat("wc", (0,), np.uint16), rot_code=cat("rot", (0,), np.uint32),
        scale_code=cat("sc", (0, 3), sdt.newbyteorder("=")).reshape(-1, 3),
        opacity_code=cat("op", (0,), np.uint8),
        dc_code=cat("dcc", (0, 3), ddt.newbyteorder("=")).reshape(-1, 3),
        higher=higher,
        flags=cat("fl", (0,), np.uint8),
    )
    ends = (buf.t_stream < 0x80).astype(np.int64)
    seg = np.concatenate([[0], np.cumsum(buf.t_stream_lens)[:-1]])
    per_chunk = np.add.reduceat(ends, seg) if len(ends) and nchunks else np.zeros(nchunks, np.int64)
    if nchunks and (np.any(buf.t_stream_lens == 0) or not np.array_equal(per_chunk, buf.chunk_counts)):
        raise CodecError("t stream does not match chunk splat counts")
    return buf


def max_scale(buffer: ChunkedSplatBuffer) -> float:
    """Upper bound on any decoded linear scale, read from the chunk headers.

    The normal-axis range of a chunk holding only surface splats is a
    placeholder, so it is skipped.
    """
    if not buffer.chunk_count:
        return 0.0
    hi = buffer.scale_range[..., 1].astype(np.float64)
    starts = np.arange(buffer.chunk_count) * CHUNK_SIZE
    volumetric = np.logical_or.reduceat((buffer.flags & FLAG_SURFACE2D) == 0, starts)
    m = hi[:, :2].max()
    if volumetric.any():
        m = max(m, hi[volumetric, 2].max())
    return float(np.exp(m))
