"""Spatial Information / Temporal Information content statistics.

SI is the spatial standard deviation of the Sobel gradient magnitude per
frame; TI is the spatial standard deviation of consecutive-frame
differences. Both operate on luma in [0, 255]. Sobel output is taken on
the interior only (1-pixel border excluded, no padding) so independent
pixel-level oracles can match it exactly; standard deviations use the
population (n) convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .manifest import FrameSequence


@dataclass
class SITIResult:
    si_per_frame: np.ndarray
    ti_per_frame: np.ndarray   # length n_frames - 1
    si_mean: float
    si_max: float
    ti_mean: float
    ti_max: float


def sobel_magnitude(frame: np.ndarray) -> np.ndarray:
    """3x3 Sobel gradient magnitude on the (H-2, W-2) interior."""
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 3 or f.shape[1] < 3:
        raise ValidationError(f"frame must be at least 3x3, got {f.shape}")
    gx = (
        (f[:-2, 2:] + 2.0 * f[1:-1, 2:] + f[2:, 2:])
        - (f[:-2, :-2] + 2.0 * f[1:-1, :-2] + f[2:, :-2])
    )
    gy = (
        (f[2:, :-2] + 2.0 * f[2:, 1:-1] + f[2:, 2:])
        - (f[:-2, :-2] + 2.0 * f[:-2, 1:-1] + f[:-2, 2:])
    )
    return np.sqrt(gx * gx + gy * gy)


def spatial_information(seq: FrameSequence) -> np.ndarray:
    """Per-frame SI values."""
    frames = seq.luma_255()
    return np.array([sobel_magnitude(f).std() for f in frames])


def temporal_information(seq: FrameSequence) -> np.ndarray:
    """Per-frame-pair TI values (full frame, no border exclusion)."""
    if seq.n_frames < 2:
        raise ValidationError("temporal information needs at least 2 frames")
    frames = seq.luma_255()
    diffs = np.diff(frames, axis=0)
    return diffs.std(axis=(1, 2))


def summarize_siti(seq: FrameSequence) -> SITIResult:
    si = spatial_information(seq)
    ti = temporal_information(seq)
    return SITIResult(
        si_per_frame=si,
        ti_per_frame=ti,
        si_mean=float(si.mean()),
        si_max=float(si.max()),
        ti_mean=float(ti.mean()),
        ti_max=float(ti.max()),
    )
