"""Depth keys and a stable two-pass LSD radix sort over 16-bit keys."""

from __future__ import annotations

import numba
import numpy as np

KEY_MAX = 65535


def quantize_depths(depths, z_min: float, z_max: float) -> np.ndarray:
    """u16 keys: floor((z - z_min) / (z_max - z_min) * 65535 + 0.5), depths clamped to the range."""
    z = np.asarray(depths, dtype=np.float64)
    if not z_max > z_min:
        return np.zeros(len(z), dtype=np.uint16)
    f = (np.clip(z, z_min, z_max) - z_min) / (z_max - z_min)
    return np.minimum(np.floor(f * KEY_MAX + 0.5), KEY_MAX).astype(np.uint16)


def depth_keys(depths):
    """Keys over the survivors' own depth range; returns (keys, z_min, z_max)."""
    z = np.asarray(depths, dtype=np.float64)
    if not len(z):
        return np.zeros(0, dtype=np.uint16), 0.0, 0.0
    lo, hi = float(z.min()), float(z.max())
    return quantize_depths(z, lo, hi), lo, hi


@numba.njit(cache=True, nogil=True)
def _radix16(keys, values):
    n = keys.shape[0]
    k_tmp = np.empty_like(keys)
    v_tmp = np.empty_like(values)
    for shift in (0, 8):
        hist = np.zeros(257, dtype=np.int64)
        for i in range(n):
            hist[((keys[i] >> shift) & 0xFF) + 1] += 1
        for b in range(256):
            hist[b + 1] += hist[b]
        for i in range(n):
            d = (keys[i] >> shift) & 0xFF
            pos = hist[d]
            k_tmp[pos] = keys[i]
            v_tmp[pos] = values[i]
            hist[d] = pos + 1
        keys, k_tmp = k_tmp, keys
        values, v_tmp = v_tmp, values
    return keys, values


def sort_survivors(keys, indices=None) -> np.ndarray:
    """Stable ascending sort of `indices` (default 0..n-1) by u16 key."""
    keys = np.ascontiguousarray(keys, dtype=np.uint16)
    if indices is None:
        indices = np.arange(len(keys), dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    if len(keys) != len(indices):
        raise ValueError("keys and indices differ in length")
    if not len(keys):
        return indices.copy()
    _, out = _radix16(keys.copy(), indices.copy())
    return out


def float_order(depths, indices=None) -> np.ndarray:
    """Reference front-to-back order by exact float depth (stable comparison sort)."""
    depths = np.asarray(depths, dtype=np.float64)
    perm = np.argsort(depths, kind="stable")
    return perm if indices is None else np.asarray(indices)[perm]
