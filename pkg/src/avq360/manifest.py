"""Dataset model and raw-media ingestion.

Everything enters the toolkit through this module: sequence manifests
(JSON), uncompressed video (YUV4MPEG2), PCM audio (RIFF/WAVE) and tabular
subjective scores (CSV). Ingestion is deliberately codec-free so that
every byte of every input is deterministic.
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
from dataclasses import dataclass, asdict
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError

# The ten scene categories covered by the dataset design.
SCENES = (
    "hdr",
    "dark",
    "indoor",
    "outdoor",
    "night",
    "garden_architecture",
    "urban_architecture",
    "indoor_competition",
    "outdoor_competition",
    "studio_program",
)

DEVICES = ("Insta360Pro2", "Insta360X3", "Synthetic")
MOTIONS = ("static", "dynamic")
SPLITS = ("train", "test", "unassigned")
VALID_CHANNEL_COUNTS = (1, 2, 4)

# Continuous rating scale with the five adjective anchors used on the
# rating bar. The numeric range is a toolkit convention; anchors sit at
# the center of each fifth of the scale.
SCORE_MIN = 0.0
SCORE_MAX = 100.0
LIKERT_ANCHORS = {
    "bad": 10.0,
    "poor": 30.0,
    "fair": 50.0,
    "good": 70.0,
    "excellent": 90.0,
}


@dataclass
class SequenceManifestEntry:
    """Metadata for one A/V sequence in equirectangular projection."""

    sequence_id: str
    width: int
    height: int
    fps: float
    duration_s: float
    scene: str
    device: str
    audio_channels: int
    audio_sample_rate: int
    motion: str
    split: str = "unassigned"

    def validate(self) -> None:
        ctx = f"sequence {self.sequence_id!r}"
        if not self.sequence_id:
            raise ValidationError("empty sequence_id")
        if self.width != 2 * self.height:
            raise ValidationError(
                f"{ctx}: {self.width}x{self.height} is not 2:1 ERP"
            )
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"{ctx}: non-positive dimensions")
        if self.fps <= 0:
            raise ValidationError(f"{ctx}: fps must be > 0, got {self.fps}")
        if self.duration_s <= 0:
            raise ValidationError(
                f"{ctx}: duration_s must be > 0, got {self.duration_s}"
            )
        if self.scene not in SCENES:
            raise ValidationError(f"{ctx}: unknown scene {self.scene!r}")
        if self.device not in DEVICES:
            raise ValidationError(f"{ctx}: unknown device {self.device!r}")
        if self.audio_channels not in VALID_CHANNEL_COUNTS:
            raise ValidationError(
                f"{ctx}: audio_channels must be one of {VALID_CHANNEL_COUNTS}, "
                f"got {self.audio_channels}"
            )
        if self.audio_sample_rate <= 0:
            raise ValidationError(f"{ctx}: non-positive audio_sample_rate")
        if self.motion not in MOTIONS:
            raise ValidationError(f"{ctx}: unknown motion {self.motion!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"{ctx}: unknown split {self.split!r}")


_MANIFEST_FIELDS = (
    "sequence_id",
    "width",
    "height",
    "fps",
    "duration_s",
    "scene",
    "device",
    "audio_channels",
    "audio_sample_rate",
    "motion",
    "split",
)


def load_manifest(path) -> list[SequenceManifestEntry]:
    """Load and validate a manifest (UTF-8 JSON array of sequence objects).

    Entries are returned in file order. Raises DataError on malformed
    JSON or wrong field sets, ValidationError on invariant violations
    (including duplicate sequence ids).
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise DataError(f"{path}: empty manifest")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: line {e.lineno}, col {e.colno}: {e.msg}") from e
    if not isinstance(raw, list):
        raise DataError(f"{path}: manifest must be a JSON array")
    if not raw:
        raise DataError(f"{path}: empty manifest")

    entries = []
    seen = set()
    for i, obj in enumerate(raw):
        if not isinstance(obj, dict):
            raise DataError(f"{path}: entry {i} is not an object")
        missing = [f for f in _MANIFEST_FIELDS if f != "split" and f not in obj]
        if missing:
            raise DataError(f"{path}: entry {i}: missing fields {missing}")
        unknown = [k for k in obj if k not in _MANIFEST_FIELDS]
        if unknown:
            raise DataError(f"{path}: entry {i}: unknown fields {unknown}")
        try:
            entry = SequenceManifestEntry(
                sequence_id=str(obj["sequence_id"]),
                width=int(obj["width"]),
                height=int(obj["height"]),
                fps=float(obj["fps"]),
                duration_s=float(obj["duration_s"]),
                scene=str(obj["scene"]),
                device=str(obj["device"]),
                audio_channels=int(obj["audio_channels"]),
                audio_sample_rate=int(obj["audio_sample_rate"]),
                motion=str(obj["motion"]),
                split=str(obj.get("split", "unassigned")),
            )
        except (TypeError, ValueError) as e:
            raise DataError(f"{path}: entry {i}: {e}") from e
        try:
            entry.validate()
        except ValidationError as e:
            raise ValidationError(f"{path}: entry {i}: {e}") from e
        if entry.sequence_id in seen:
            raise ValidationError(
                f"{path}: duplicate sequence_id {entry.sequence_id!r}"
            )
        seen.add(entry.sequence_id)
        entries.append(entry)
    return entries


def write_manifest(entries, path) -> None:
    for e in entries:
        e.validate()
    payload = [asdict(e) for e in entries]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Video: YUV4MPEG2
# ---------------------------------------------------------------------------

@dataclass
class FrameSequence:
    """Decoded luma planes of one video sequence.

    ``frames`` has shape (n_frames, height, width). uint8 frames are on
    the [0, 255] scale; float frames are normalized to [0, 1].
    """

    frames: np.ndarray
    fps: float
    fps_rational: tuple[int, int] | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValidationError("frames must be (n>=1, height, width)")
        if self.fps <= 0:
            raise ValidationError("fps must be > 0")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def luma_255(self) -> np.ndarray:
        """Frames as float64 on the [0, 255] scale."""
        if self.frames.dtype == np.uint8:
            return self.frames.astype(np.float64)
        return np.asarray(self.frames, dtype=np.float64) * 255.0

    def luma_01(self) -> np.ndarray:
        """Frames as float64 normalized to [0, 1]."""
        if self.frames.dtype == np.uint8:
            return self.frames.astype(np.float64) / 255.0
        return np.asarray(self.frames, dtype=np.float64)


_Y4M_MAGIC = b"YUV4MPEG2"
_Y4M_420_TAGS = {b"420", b"420jpeg", b"420mpeg2", b"420paldv"}


def load_y4m(path) -> FrameSequence:
    """Parse a YUV4MPEG2 stream, keeping luma only.

    Supports 4:2:0 planar (chroma discarded) and mono. Header must
    declare W, H and F; interlace/aspect/extension tags are ignored.
    """
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0 or not data.startswith(_Y4M_MAGIC + b" "):
        if data[: len(_Y4M_MAGIC)] != _Y4M_MAGIC:
            raise DataError(f"{path}: bad magic, not a YUV4MPEG2 stream")
        raise DataError(f"{path}: malformed YUV4MPEG2 header")
    width = height = 0
    fps_num = fps_den = 0
    chroma = b"420"
    for token in data[len(_Y4M_MAGIC) + 1 : nl].split(b" "):
        if not token:
            continue
        key, val = token[:1], token[1:]
        try:
            if key == b"W":
                width = int(val)
            elif key == b"H":
                height = int(val)
            elif key == b"F":
                num, den = val.split(b":")
                fps_num, fps_den = int(num), int(den)
            elif key == b"C":
                chroma = val
            # I, A, X tags carry no information we use
        except ValueError as e:
            raise DataError(f"{path}: bad header token {token!r}") from e
    if width <= 0 or height <= 0:
        raise DataError(f"{path}: header missing valid W/H")
    if fps_num <= 0 or fps_den <= 0:
        raise DataError(f"{path}: header missing valid frame rate")

    if chroma in _Y4M_420_TAGS:
        if width % 2 or height % 2:
            raise DataError(f"{path}: odd dimensions with 4:2:0 chroma")
        chroma_bytes = 2 * (width // 2) * (height // 2)
    elif chroma == b"mono":
        chroma_bytes = 0
    else:
        raise DataError(f"{path}: unsupported chroma tag C{chroma.decode(errors='replace')}")

    luma_bytes = width * height
    frames = []
    pos = nl + 1
    while pos < len(data):
        fnl = data.find(b"\n", pos)
        if fnl < 0 or data[pos : pos + 5] != b"FRAME":
            raise DataError(f"{path}: frame {len(frames)}: missing FRAME marker")
        pos = fnl + 1
        end = pos + luma_bytes + chroma_bytes
        if end > len(data):
            raise DataError(f"{path}: frame {len(frames)}: truncated payload")
        luma = np.frombuffer(data[pos : pos + luma_bytes], dtype=np.uint8)
        frames.append(luma.reshape(height, width))
        pos = end
    if not frames:
        raise DataError(f"{path}: stream contains no frames")
    return FrameSequence(
        frames=np.stack(frames),
        fps=fps_num / fps_den,
        fps_rational=(fps_num, fps_den),
    )


def write_y4m(seq: FrameSequence, path) -> None:
    """Write luma as a mono YUV4MPEG2 stream (exact byte round-trip)."""
    if seq.frames.dtype == np.uint8:
        frames = seq.frames
    else:
        frames = np.clip(np.rint(seq.luma_255()), 0, 255).astype(np.uint8)
    if seq.fps_rational is not None:
        num, den = seq.fps_rational
    else:
        frac = Fraction(seq.fps).limit_denominator(1_001_000)
        num, den = frac.numerator, frac.denominator
    with open(path, "wb") as f:
        f.write(
            f"YUV4MPEG2 W{seq.width} H{seq.height} F{num}:{den} Ip A1:1 Cmono\n".encode()
        )
        for frame in frames:
            f.write(b"FRAME\n")
            f.write(np.ascontiguousarray(frame).tobytes())


# ---------------------------------------------------------------------------
# Audio: RIFF/WAVE PCM16
# ---------------------------------------------------------------------------

@dataclass
class AudioClip:
    """Per-channel PCM samples scaled to [-1, 1]; shape (channels, n)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be > 0")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


def load_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file (PCM 16-bit, 1/2/4 channels).

    Samples are scaled to [-1, 1] by division with 32768, so the most
    negative 16-bit code maps to -1.0 exactly.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DataError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise DataError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise DataError(f"{path}: malformed fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or payload is None:
        raise DataError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise DataError(f"{path}: non-PCM codec (format tag {audio_format})")
    if bits != 16:
        raise DataError(f"{path}: only PCM 16-bit supported, got {bits}-bit")
    if channels not in VALID_CHANNEL_COUNTS:
        raise DataError(
            f"{path}: channel count {channels} not in {VALID_CHANNEL_COUNTS}"
        )
    if len(payload) % (2 * channels):
        raise DataError(f"{path}: data chunk size not a multiple of frame size")
    pcm = np.frombuffer(payload, dtype="<i2").reshape(-1, channels)
    return AudioClip(samples=pcm.T.astype(np.float64) / 32768.0, sample_rate=sample_rate)


def write_wav(clip: AudioClip, path) -> None:
    """Write an AudioClip as PCM16 WAV (values clipped to the int16 range)."""
    pcm = np.clip(np.rint(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    interleaved = np.ascontiguousarray(pcm.T).tobytes()
    channels = clip.channels
    byte_rate = clip.sample_rate * channels * 2
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 36 + len(interleaved)))
        f.write(b"WAVE")
        f.write(b"fmt ")
        f.write(struct.pack("<IHHIIHH", 16, 1, channels, clip.sample_rate, byte_rate, channels * 2, 16))
        f.write(b"data")
        f.write(struct.pack("<I", len(interleaved)))
        f.write(interleaved)


def downmix_mono(clip: AudioClip) -> AudioClip:
    """Arithmetic mean across channels, sample-wise."""
    if clip.channels == 1:
        return AudioClip(samples=clip.samples.copy(), sample_rate=clip.sample_rate)
    mono = clip.samples.mean(axis=0, keepdims=True)
    return AudioClip(samples=mono, sample_rate=clip.sample_rate)


# ---------------------------------------------------------------------------
# Subjective scores: CSV
# ---------------------------------------------------------------------------

@dataclass
class RatingRecord:
    """One subject's score for one sequence within one session."""

    subject_id: str
    sequence_id: str
    session_id: str
    score: float
    ssq_flag: bool = False

    def __post_init__(self):
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise ValidationError(
                f"score {self.score} outside [{SCORE_MIN}, {SCORE_MAX}] "
                f"(subject {self.subject_id}, sequence {self.sequence_id})"
            )


_SCORES_HEADER = ["subject_id", "sequence_id", "session_id", "score", "ssq_flag"]
_BOOL_TOKENS = {"true": True, "1": True, "false": False, "0": False}


def load_scores_csv(path) -> list[RatingRecord]:
    """Read the rating table CSV (header must match exactly)."""
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty scores file") from None
        if header != _SCORES_HEADER:
            raise DataError(
                f"{path}: bad header {header}, expected {_SCORES_HEADER}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"{path}: line {lineno}: expected 5 fields")
            flag = _BOOL_TOKENS.get(row[4].strip().lower())
            if flag is None:
                raise DataError(f"{path}: line {lineno}: bad ssq_flag {row[4]!r}")
            try:
                score = float(row[3])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: bad score {row[3]!r}") from None
            try:
                records.append(
                    RatingRecord(row[0], row[1], row[2], score, flag)
                )
            except ValidationError as e:
                raise DataError(f"{path}: line {lineno}: {e}") from e
    if not records:
        warnings.warn(f"{path}: scores file contains no records")
    return records


def write_scores_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(_SCORES_HEADER)
        for r in records:
            writer.writerow(
                [r.subject_id, r.sequence_id, r.session_id,
                 f"{r.score:.4f}", "true" if r.ssq_flag else "false"]
            )
