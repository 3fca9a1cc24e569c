"""Synthetic desk-scale corpus: media, ratings, head movement.

Generates a deterministic miniature dataset that exercises every stage
of the pipeline: 8 ERP video+audio sequences whose distortion level is
monotonically tied to a target MOS, a rating table with 19 consistent
subjects, one planted inconsistent subject (scores 100 minus the
consensus) and one SSQ-flagged subject, plus per-sequence head-movement
traces. Consistent subjects use bounded uniform noise so their scores
stay inside the screening thresholds; the planted subject's mirrored
scores land outside them on sequences designed to sit in the detection
window of the kurtosis-gated rule.

Everything is a pure function of the seed, so fixtures are
byte-reproducible and safe to regenerate inside tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .manifest import (
    SCENES,
    AudioClip,
    FrameSequence,
    RatingRecord,
    SequenceManifestEntry,
    write_manifest,
    write_scores_csv,
    write_wav,
    write_y4m,
)

DEFAULT_SEED = 7

# Media sequences: distortion level rises, designed MOS falls. These
# targets sit outside the screening detection window so their statistics
# stay clean for MOS aggregation.
MEDIA_TARGETS = (88.0, 80.0, 70.0, 63.0, 55.0, 47.0, 37.0, 30.0)

# Rating-only sequences fill the detection window of the outlier rule on
# both sides of the scale midpoint (the planted subject mirrors scores
# around 50), plus off-window fillers for realism.
_WINDOW_LOW = (39.0, 39.7, 40.4, 41.1, 41.8, 42.5)
_WINDOW_HIGH = (57.5, 58.2, 58.9, 59.6, 60.3, 61.0)
_FILLERS = (35.0, 36.0, 37.0, 45.0, 47.5, 50.0, 52.5, 55.0, 63.0, 65.0)
EXTRA_TARGETS = _WINDOW_LOW + _WINDOW_HIGH + _FILLERS

# Consistent-subject noise: uniform with std 6 (halfwidth 6*sqrt(3)).
NOISE_STD = 6.0
NOISE_HALFWIDTH = NOISE_STD * math.sqrt(3.0)

N_CONSISTENT = 19
PLANTED_SUBJECT = "s19"
SSQ_SUBJECT = "s20"

FRAME_W, FRAME_H = 64, 32
N_FRAMES = 8
FPS = 8.0
AUDIO_SR = 16000
DURATION_S = 1.0


@dataclass
class FixtureSequence:
    entry: SequenceManifestEntry
    distortion: float
    target_mos: float


def _box_blur(img: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        p = np.pad(img, 1, mode="edge")
        img = (
            p[:-2, :-2] + p[:-2, 1:-1] + p[:-2, 2:]
            + p[1:-1, :-2] + p[1:-1, 1:-1] + p[1:-1, 2:]
            + p[2:, :-2] + p[2:, 1:-1] + p[2:, 2:]
        ) / 9.0
    return img


def make_frames(
    rng: np.random.Generator,
    distortion: float,
    motion: str,
    n_frames: int = N_FRAMES,
    height: int = FRAME_H,
    width: int = FRAME_W,
) -> np.ndarray:
    """Procedural luma frames (uint8): sinusoid field + blur/noise distortion."""
    yy, xx = np.mgrid[0:height, 0:width]
    fx = rng.uniform(1.0, 4.0)
    fy = rng.uniform(1.0, 4.0)
    ph1, ph2 = rng.uniform(0, 1, size=2)
    drift = 0.08 if motion == "dynamic" else 0.0
    frames = []
    blur_passes = int(round(4 * distortion))
    for t in range(n_frames):
        base = (
            0.5
            + 0.22 * np.sin(2 * np.pi * (fx * xx / width + ph1 + drift * t))
            + 0.22 * np.sin(2 * np.pi * (fy * yy / height + ph2 + 0.5 * drift * t))
        )
        img = _box_blur(base, blur_passes)
        img = img + rng.normal(0.0, 0.12 * distortion, size=img.shape)
        frames.append(np.clip(img, 0.0, 1.0))
    return (np.stack(frames) * 255.0).round().astype(np.uint8)


def make_audio(
    rng: np.random.Generator,
    distortion: float,
    channels: int,
    sample_rate: int = AUDIO_SR,
    duration_s: float = DURATION_S,
) -> AudioClip:
    """Tonal bed per channel with noise amplitude tied to the distortion."""
    n = int(round(sample_rate * duration_s))
    t = np.arange(n) / sample_rate
    tones = (440.0, 554.4, 659.3, 784.0)
    chans = []
    for c in range(channels):
        clean = 0.4 * np.sin(2 * np.pi * tones[c % len(tones)] * t)
        clean += 0.15 * np.sin(2 * np.pi * 2.0 * tones[c % len(tones)] * t)
        noisy = clean + 0.3 * distortion * rng.uniform(-1.0, 1.0, size=n)
        chans.append(np.clip(noisy, -0.98, 0.98))
    return AudioClip(samples=np.stack(chans), sample_rate=sample_rate)


def make_hm_rows(
    rng: np.random.Generator,
    motion: str,
    duration_s: float = DURATION_S,
    rate_hz: float = 120.0,
) -> list[tuple[float, float, float, float]]:
    """(t, yaw, pitch, roll) rows: slow scan for dynamic, jitter for static."""
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz
    if motion == "dynamic":
        yaw = 180.0 - np.mod(180.0 - (-60.0 + 25.0 * t), 360.0)
        pitch = 8.0 * np.sin(2 * np.pi * 0.4 * t)
    else:
        yaw = 5.0 + 1.5 * np.sin(2 * np.pi * 0.3 * t)
        pitch = 2.0 * np.sin(2 * np.pi * 0.2 * t)
    yaw = yaw + rng.normal(0, 0.05, size=n)
    pitch = pitch + rng.normal(0, 0.05, size=n)
    roll = rng.normal(0, 0.3, size=n)
    yaw = np.clip(yaw, -180.0, 180.0)
    pitch = np.clip(pitch, -90.0, 90.0)
    roll = np.clip(roll, -180.0, 180.0)
    return [(float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(t, yaw, pitch, roll)]


def write_hm_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("t,yaw,pitch,roll\n")
        for t, yaw, pitch, roll in rows:
            f.write(f"{t:.6f},{yaw:.4f},{pitch:.4f},{roll:.4f}\n")


def make_rating_table(
    sequence_targets: dict[str, float],
    n_consistent: int = N_CONSISTENT,
    planted_subject: str | None = PLANTED_SUBJECT,
    ssq_subject: str | None = SSQ_SUBJECT,
    noise_halfwidth: float = NOISE_HALFWIDTH,
    seed: int = DEFAULT_SEED,
) -> list[RatingRecord]:
    """Rating table around per-sequence consensus targets.

    Consistent subjects score target + bounded uniform noise; the
    planted subject scores exactly 100 - target; the SSQ subject's
    records are all flagged for exclusion.
    """
    rng = np.random.default_rng(seed)
    records = []
    subjects = [f"s{i:02d}" for i in range(n_consistent)]
    for sid in subjects:
        for seq, q in sequence_targets.items():
            score = float(np.clip(q + rng.uniform(-noise_halfwidth, noise_halfwidth), 0, 100))
            records.append(RatingRecord(sid, seq, f"sess_{sid}", score))
    if planted_subject is not None:
        for seq, q in sequence_targets.items():
            records.append(
                RatingRecord(planted_subject, seq, f"sess_{planted_subject}", 100.0 - q)
            )
    if ssq_subject is not None:
        for seq, q in sequence_targets.items():
            score = float(np.clip(q + rng.uniform(-noise_halfwidth, noise_halfwidth), 0, 100))
            records.append(
                RatingRecord(ssq_subject, seq, f"sess_{ssq_subject}", score, ssq_flag=True)
            )
    return records


def fixture_sequence_targets() -> dict[str, float]:
    """All rated sequence ids -> designed consensus score."""
    targets = {f"seq{i:02d}": q for i, q in enumerate(MEDIA_TARGETS)}
    targets.update({f"xtr{i:02d}": q for i, q in enumerate(EXTRA_TARGETS)})
    return targets


_CONFIG_TEMPLATE = """\
# avq360 run configuration (paths resolve relative to this file)
manifest = manifest.json
media_root = media
scores = scores.csv
hm_root = hm
output_dir = out

split_seed = 7
split_ratio = 0.8

# model
bands = 4
band_channels = 8,16,32
d_model = 64
fusion_blocks = 4
heads = 4
audio_channels = 8,16,32,64
frames_per_clip = 8
ff_mult = 2
fusion_mode = transformer
temporal_pos_enc = true
audio_pos_enc = false
seed = {seed}
lr = 0.001
train_steps = 300
batch_size = 8
"""


def generate_corpus(outdir, seed: int = DEFAULT_SEED) -> list[FixtureSequence]:
    """Write the full synthetic corpus; returns the manifest descriptors.

    Layout: manifest.json, media/<id>.y4m + .wav, hm/<id>.csv,
    scores.csv, config.txt, fixture_meta.json.
    """
    outdir = Path(outdir)
    (outdir / "media").mkdir(parents=True, exist_ok=True)
    (outdir / "hm").mkdir(parents=True, exist_ok=True)

    master = np.random.default_rng(seed)
    sequences = []
    for i, target in enumerate(MEDIA_TARGETS):
        seq_id = f"seq{i:02d}"
        distortion = i / (len(MEDIA_TARGETS) - 1)
        motion = "dynamic" if i % 2 else "static"
        channels = 4 if i % 2 else 2
        entry = SequenceManifestEntry(
            sequence_id=seq_id,
            width=FRAME_W,
            height=FRAME_H,
            fps=FPS,
            duration_s=DURATION_S,
            scene=SCENES[i % len(SCENES)],
            device="Synthetic",
            audio_channels=channels,
            audio_sample_rate=AUDIO_SR,
            motion=motion,
            split="unassigned",
        )
        rng = np.random.default_rng([seed, i])
        frames = make_frames(rng, distortion, motion)
        write_y4m(
            FrameSequence(frames=frames, fps=FPS, fps_rational=(8, 1)),
            outdir / "media" / f"{seq_id}.y4m",
        )
        write_wav(
            make_audio(rng, distortion, channels),
            outdir / "media" / f"{seq_id}.wav",
        )
        write_hm_csv(make_hm_rows(rng, motion), outdir / "hm" / f"{seq_id}.csv")
        sequences.append(
            FixtureSequence(entry=entry, distortion=distortion, target_mos=target)
        )

    write_manifest([s.entry for s in sequences], outdir / "manifest.json")

    targets = fixture_sequence_targets()
    records = make_rating_table(targets, seed=seed)
    write_scores_csv(records, outdir / "scores.csv")
    _verify_screening(records)

    (outdir / "config.txt").write_text(
        _CONFIG_TEMPLATE.format(seed=seed), encoding="utf-8"
    )
    meta = {
        "seed": seed,
        "planted_subject": PLANTED_SUBJECT,
        "ssq_subject": SSQ_SUBJECT,
        "noise_std": NOISE_STD,
        "sequences": [
            {
                "sequence_id": s.entry.sequence_id,
                "distortion": s.distortion,
                "target_mos": s.target_mos,
            }
            for s in sequences
        ],
    }
    (outdir / "fixture_meta.json").write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8"
    )
    return sequences


def _verify_screening(records) -> None:
    """Regenerated fixtures must keep the designed screening outcome:
    the planted subject, and only the planted subject, gets rejected."""
    from .subjective import exclude_ssq, screen_subjects

    results, _ = screen_subjects(exclude_ssq(records))
    rejected = {r.subject_id for r in results if r.rejected}
    if rejected != {PLANTED_SUBJECT}:
        raise DataError(
            f"fixture seed produces rejection set {sorted(rejected)}; "
            f"expected exactly {{{PLANTED_SUBJECT!r}}} - choose another seed"
        )
