"""Shared index/weight tables for half-pixel-centers resampling."""

from __future__ import annotations

import numpy as np


def bilinear_axis(in_len: int, out_len: int):
    """Per-output (lo, hi, frac) along one axis, half-pixel convention.

    Source coordinate of output i is (i + 0.5) * in/out - 0.5, clamped to
    the valid range so border samples replicate.
    """
    idx = np.arange(out_len, dtype=np.float64)
    src = (idx + 0.5) * (in_len / out_len) - 0.5
    src = np.clip(src, 0.0, in_len - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_len - 1)
    frac = src - lo
    return lo, hi, frac


def nearest_axis(in_len: int, out_len: int) -> np.ndarray:
    """Nearest-neighbor source index per output position (half-pixel)."""
    idx = np.arange(out_len, dtype=np.float64)
    src = np.floor((idx + 0.5) * (in_len / out_len))
    return np.clip(src, 0, in_len - 1).astype(np.int64)
