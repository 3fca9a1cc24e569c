"""Equirectangular-sphere geometry: latitude bands and their weights.

An ERP frame maps latitude linearly onto pixel rows, so the sphere's
solid-angle density per row is proportional to cos(latitude). Frames are
partitioned into horizontal bands; per-band features are aggregated with
weights softmax(learned_logits + log(cos_prior)) so the physical prior
acts as a bias while gradients flow into the logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class LatitudeBandPartition:
    """Horizontal bands tiling an ERP frame, north to south."""

    num_bands: int
    height: int
    band_row_ranges: list[tuple[int, int]]   # half-open [start, end) pixel rows
    band_latitude_centers: np.ndarray        # radians, in (-pi/2, pi/2)


def row_latitude(row, height: int):
    """Latitude (radians) of a pixel row center: pi/2 - pi*(row+0.5)/H."""
    return math.pi / 2 - math.pi * (np.asarray(row, dtype=np.float64) + 0.5) / height


def partition_erp(height: int, num_bands: int) -> LatitudeBandPartition:
    """Split H pixel rows into M near-equal bands.

    Row counts differ by at most one; the leftover rows from integer
    division go to the northernmost bands.
    """
    if not 1 <= num_bands <= height:
        raise ValidationError(
            f"num_bands must be in [1, {height}], got {num_bands}"
        )
    base, extra = divmod(height, num_bands)
    ranges = []
    start = 0
    for m in range(num_bands):
        rows = base + (1 if m < extra else 0)
        ranges.append((start, start + rows))
        start += rows
    centers = np.array(
        [float(row_latitude((a + b - 1) / 2.0, height)) for a, b in ranges]
    )
    return LatitudeBandPartition(
        num_bands=num_bands,
        height=height,
        band_row_ranges=ranges,
        band_latitude_centers=centers,
    )


def cos_latitude_prior(partition: LatitudeBandPartition) -> np.ndarray:
    """Per-band weights proportional to the summed cos(latitude) of its rows."""
    w = np.empty(partition.num_bands)
    for m, (a, b) in enumerate(partition.band_row_ranges):
        w[m] = np.cos(row_latitude(np.arange(a, b), partition.height)).sum()
    return w / w.sum()


@dataclass
class LatitudeWeights:
    """Prior, learnable logits, and the resulting effective weights."""

    prior_weights: np.ndarray
    learned_logits: np.ndarray
    effective_weights: np.ndarray

    @classmethod
    def from_logits(cls, prior_weights, learned_logits) -> "LatitudeWeights":
        prior = np.asarray(prior_weights, dtype=np.float64)
        logits = np.asarray(learned_logits, dtype=np.float64)
        if prior.shape != logits.shape:
            raise ValidationError("prior and logits must have the same length")
        if np.any(prior <= 0):
            raise ValidationError("prior weights must be strictly positive")
        z = logits + np.log(prior)
        z = z - z.max()
        e = np.exp(z)
        return cls(prior, logits, e / e.sum())


def aggregate_band_features(features, weights: LatitudeWeights) -> np.ndarray:
    """Convex combination of per-band feature tensors.

    ``features`` is a length-M sequence of equally shaped arrays; the
    output is sum_m effective_weights[m] * features[m].
    """
    if len(features) != len(weights.effective_weights):
        raise ValidationError(
            f"{len(features)} feature tensors vs {len(weights.effective_weights)} weights"
        )
    shapes = {np.shape(f) for f in features}
    if len(shapes) != 1:
        raise ValidationError(f"band feature shapes differ: {sorted(shapes)}")
    stacked = np.stack([np.asarray(f, dtype=np.float64) for f in features])
    w = weights.effective_weights.reshape((-1,) + (1,) * (stacked.ndim - 1))
    return (w * stacked).sum(axis=0)
