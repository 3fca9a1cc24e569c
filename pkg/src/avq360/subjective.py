"""Subjective data processing: SSQ exclusion, subject screening, MOS.

The screening step implements the classic kurtosis-gated outlier count:
per sequence, scores beyond mean +/- k*std are tallied (k = 2 for
normal-ish distributions, sqrt(20) otherwise), and a subject is rejected
when their outlier fraction exceeds 5% while being balanced between the
high and low sides. A single pass is applied; re-screening is left to
the caller.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .manifest import RatingRecord

# Minimum number of valid ratings a sequence should retain after
# screening for its MOS to be considered trustworthy.
MIN_VALID_RATINGS = 15


@dataclass(frozen=True)
class ScreeningParams:
    """Thresholds of the outlier-count rejection rule."""

    outlier_fraction: float = 0.05   # reject only if (P+Q)/N exceeds this
    balance_threshold: float = 0.3   # ... and |P-Q|/(P+Q) is below this
    kurtosis_lo: float = 2.0
    kurtosis_hi: float = 4.0
    k_normal: float = 2.0
    k_nonnormal: float = math.sqrt(20.0)


@dataclass
class SequenceScoreStats:
    """Per-sequence statistics used by the screening thresholds."""

    mean: float
    std: float        # sample std (n-1 denominator)
    kurtosis: float   # m4/m2^2 on population moments (normal ~ 3); 0 if std == 0
    n: int


@dataclass
class SubjectScreeningResult:
    subject_id: str
    kurtosis_per_sequence: dict[str, float]
    p_count: int
    q_count: int
    rejected: bool
    n_scores: int = 0


@dataclass
class MOSRecord:
    """Screened per-sequence mean opinion score with 95% CI half-width."""

    sequence_id: str
    mos: float
    std: float
    n_valid: int
    ci95_half_width: float

    def meets_minimum(self) -> bool:
        return self.n_valid >= MIN_VALID_RATINGS


def exclude_ssq(records: list[RatingRecord]) -> list[RatingRecord]:
    """Drop every record whose session was SSQ-flagged, preserving order."""
    kept = [r for r in records if not r.ssq_flag]
    if records and not kept:
        warnings.warn("all rating records are SSQ-flagged; nothing left to score")
    return kept


def sequence_score_stats(records: list[RatingRecord]) -> dict[str, SequenceScoreStats]:
    """Mean, sample std and kurtosis per sequence, in first-appearance order."""
    by_seq: dict[str, list[float]] = {}
    for r in records:
        by_seq.setdefault(r.sequence_id, []).append(r.score)
    stats = {}
    for seq, scores in by_seq.items():
        if len(scores) < 2:
            raise DataError(f"sequence {seq!r} rated by fewer than 2 subjects")
        x = np.asarray(scores, dtype=np.float64)
        mean = float(x.mean())
        std = float(x.std(ddof=1))
        d = x - mean
        m2 = float((d * d).mean())
        kurt = float((d ** 4).mean() / (m2 * m2)) if m2 > 0 else 0.0
        stats[seq] = SequenceScoreStats(mean=mean, std=std, kurtosis=kurt, n=len(x))
    return stats


def rejection_rule(p: int, q: int, n: int, params: ScreeningParams | None = None) -> bool:
    """Reject iff (P+Q)/N > outlier_fraction and |P-Q|/(P+Q) < balance_threshold."""
    params = params or ScreeningParams()
    if p + q == 0:
        return False
    return (
        (p + q) / n > params.outlier_fraction
        and abs(p - q) / (p + q) < params.balance_threshold
    )


def screen_subjects(
    records: list[RatingRecord],
    params: ScreeningParams | None = None,
) -> tuple[list[SubjectScreeningResult], list[RatingRecord]]:
    """Single-pass subject screening over a rating table.

    Per sequence j a score counts toward P when above mean_j + k_j*std_j
    and toward Q when below mean_j - k_j*std_j, where k_j depends on the
    sequence kurtosis. Subject i is rejected iff

        (P+Q)/N > outlier_fraction  and  |P-Q|/(P+Q) < balance_threshold

    with N the number of scores subject i gave. Returns the per-subject
    results plus the table with rejected subjects' records removed.
    """
    params = params or ScreeningParams()
    subjects = list(dict.fromkeys(r.subject_id for r in records))
    sequences = {r.sequence_id for r in records}
    if len(subjects) < 2 or len(sequences) < 2:
        raise ValidationError(
            "screening needs at least 2 subjects and 2 sequences, got "
            f"{len(subjects)} subject(s) / {len(sequences)} sequence(s)"
        )
    stats = sequence_score_stats(records)
    kurtosis_map = {seq: s.kurtosis for seq, s in stats.items()}

    thresholds = {}
    for seq, s in stats.items():
        k = (
            params.k_normal
            if params.kurtosis_lo <= s.kurtosis <= params.kurtosis_hi
            else params.k_nonnormal
        )
        thresholds[seq] = (s.mean + k * s.std, s.mean - k * s.std)

    counts = {sid: [0, 0, 0] for sid in subjects}  # P, Q, N
    for r in records:
        hi, lo = thresholds[r.sequence_id]
        c = counts[r.subject_id]
        if r.score > hi:
            c[0] += 1
        elif r.score < lo:
            c[1] += 1
        c[2] += 1

    results = []
    rejected_ids = set()
    for sid in subjects:
        p, q, n = counts[sid]
        rejected = rejection_rule(p, q, n, params)
        if rejected:
            rejected_ids.add(sid)
        results.append(
            SubjectScreeningResult(
                subject_id=sid,
                kurtosis_per_sequence=kurtosis_map,
                p_count=p,
                q_count=q,
                rejected=rejected,
                n_scores=n,
            )
        )
    filtered = [r for r in records if r.subject_id not in rejected_ids]
    return results, filtered


def compute_mos(records: list[RatingRecord]) -> list[MOSRecord]:
    """Per-sequence MOS, sample std and 1.96*std/sqrt(n) CI half-width.

    Sequences are emitted in first-appearance order. Sequences with
    fewer than MIN_VALID_RATINGS valid scores are kept but flagged with
    a warning, not dropped.
    """
    by_seq: dict[str, list[float]] = {}
    for r in records:
        by_seq.setdefault(r.sequence_id, []).append(r.score)
    if not by_seq:
        raise DataError("no rating records to aggregate")
    out = []
    low = []
    for seq, scores in by_seq.items():
        x = np.asarray(scores, dtype=np.float64)
        n = len(x)
        std = float(x.std(ddof=1)) if n > 1 else 0.0
        rec = MOSRecord(
            sequence_id=seq,
            mos=float(x.mean()),
            std=std,
            n_valid=n,
            ci95_half_width=1.96 * std / math.sqrt(n),
        )
        if not rec.meets_minimum():
            low.append(seq)
        out.append(rec)
    if low:
        warnings.warn(
            f"{len(low)} sequence(s) have fewer than {MIN_VALID_RATINGS} "
            f"valid ratings: {low[:5]}{'...' if len(low) > 5 else ''}"
        )
    return out


_MOS_HEADER = ["sequence_id", "mos", "std", "n_valid", "ci95_half_width"]


def write_mos_csv(records: list[MOSRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(_MOS_HEADER)
        for r in records:
            writer.writerow(
                [r.sequence_id, f"{r.mos:.6f}", f"{r.std:.6f}",
                 r.n_valid, f"{r.ci95_half_width:.6f}"]
            )


def read_mos_csv(path) -> dict[str, MOSRecord]:
    """Read a MOS table back as a sequence_id -> MOSRecord mapping."""
    out: dict[str, MOSRecord] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _MOS_HEADER:
            raise DataError(f"{path}: bad header {header}, expected {_MOS_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rec = MOSRecord(
                    sequence_id=row[0],
                    mos=float(row[1]),
                    std=float(row[2]),
                    n_valid=int(row[3]),
                    ci95_half_width=float(row[4]),
                )
            except (IndexError, ValueError) as e:
                raise DataError(f"{path}: line {lineno}: {e}") from e
            if rec.sequence_id in out:
                raise DataError(f"{path}: duplicate sequence_id {rec.sequence_id!r}")
            out[rec.sequence_id] = rec
    if not out:
        raise DataError(f"{path}: no MOS rows")
    return out
