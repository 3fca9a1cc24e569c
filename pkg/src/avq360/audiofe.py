"""Audio DSP front-end: STFT magnitudes, mel filterbank, log-mel patches.

Defaults follow the common audio-embedding convention: 25 ms windows with
10 ms hops at 16 kHz, 64 HTK-scale mel bins spanning 125-7500 Hz, natural
log with a 0.01 offset, and 96-frame patches. Energies are quadratic in
magnitude (power), so doubling the input amplitude quadruples mel
energies before the log. No DCT is applied; the front-end stops at the
log-mel representation the downstream CNN consumes.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .manifest import AudioClip

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_FRAME_LEN_S = 0.025
DEFAULT_HOP_S = 0.010
DEFAULT_NUM_MEL = 64
DEFAULT_FMIN_HZ = 125.0
DEFAULT_FMAX_HZ = 7500.0
DEFAULT_LOG_OFFSET = 0.01
PATCH_FRAMES = 96


@dataclass
class MelSpectrogram:
    """Log-mel energies, shape (num_frames, num_mel)."""

    values: np.ndarray
    frame_len_s: float
    frame_hop_s: float
    num_mel: int
    log_offset: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class AudioPatch:
    """Fixed-size window of log-mel frames; pad_frames > 0 marks a
    zero-padded trailing patch."""

    values: np.ndarray   # (PATCH_FRAMES, num_mel)
    pad_frames: int = 0


def hz_to_mel(f):
    """HTK mel scale: 2595*log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def stft_magnitude(
    clip: AudioClip,
    frame_len_s: float = DEFAULT_FRAME_LEN_S,
    hop_s: float = DEFAULT_HOP_S,
) -> np.ndarray:
    """Magnitude STFT of a mono clip.

    Frames are windowed with a periodic Hann of length
    round(frame_len_s*sr); the FFT size is the next power of two at or
    above the window. Output shape is (n_frames, nfft//2 + 1) with
    n_frames = 1 + floor((len-win)/hop); a clip shorter than one window
    yields zero frames (with a warning), not an error.
    """
    if clip.channels != 1:
        raise ValidationError(f"stft needs a mono clip, got {clip.channels} channels")
    if not 0 < hop_s <= frame_len_s:
        raise ValidationError("need frame_len_s >= hop_s > 0")
    x = clip.samples[0]
    win = int(round(frame_len_s * clip.sample_rate))
    hop = int(round(hop_s * clip.sample_rate))
    if win < 2 or hop < 1:
        raise ValidationError("window/hop too small for this sample rate")
    nfft = next_pow2(win)
    bins = nfft // 2 + 1
    if len(x) < win:
        warnings.warn(
            f"clip of {len(x)} samples is shorter than one {win}-sample window; "
            "no frames produced"
        )
        return np.zeros((0, bins))
    n_frames = 1 + (len(x) - win) // hop
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)  # periodic Hann
    offsets = np.arange(n_frames) * hop
    frames = x[offsets[:, None] + np.arange(win)] * window
    return np.abs(np.fft.rfft(frames, n=nfft, axis=1))


def mel_filterbank(
    num_mel: int = DEFAULT_NUM_MEL,
    fmin_hz: float = DEFAULT_FMIN_HZ,
    fmax_hz: float = DEFAULT_FMAX_HZ,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    fft_bins: int = 257,
) -> np.ndarray:
    """Triangular mel filterbank, shape (num_mel, fft_bins).

    Band edges are spaced uniformly on the HTK mel scale between fmin and
    fmax; each triangle peaks at 1.0 at its center and reaches zero at
    the centers of its neighbours, so adjacent filters cross at half
    height and every filter's support stays inside [fmin, fmax].
    """
    if not 0 <= fmin_hz < fmax_hz <= sample_rate / 2:
        raise ValidationError(
            f"need 0 <= fmin < fmax <= sr/2, got fmin={fmin_hz}, fmax={fmax_hz}, sr={sample_rate}"
        )
    nfft = 2 * (fft_bins - 1)
    bin_hz = np.arange(fft_bins) * sample_rate / nfft
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), num_mel + 2))
    fb = np.zeros((num_mel, fft_bins))
    for m in range(num_mel):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def filter_center_frequencies(
    num_mel: int = DEFAULT_NUM_MEL,
    fmin_hz: float = DEFAULT_FMIN_HZ,
    fmax_hz: float = DEFAULT_FMAX_HZ,
) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), num_mel + 2))
    return edges_hz[1:-1]


def log_mel(
    stft_mag: np.ndarray,
    filterbank: np.ndarray,
    log_offset: float = DEFAULT_LOG_OFFSET,
    frame_len_s: float = DEFAULT_FRAME_LEN_S,
    frame_hop_s: float = DEFAULT_HOP_S,
) -> MelSpectrogram:
    """log(power mel energy + log_offset), natural log."""
    mag = np.asarray(stft_mag, dtype=np.float64)
    fb = np.asarray(filterbank, dtype=np.float64)
    if mag.ndim != 2 or fb.ndim != 2 or mag.shape[1] != fb.shape[1]:
        raise ValidationError(
            f"shape mismatch: stft {mag.shape} vs filterbank {fb.shape}"
        )
    energies = (mag * mag) @ fb.T
    return MelSpectrogram(
        values=np.log(energies + log_offset),
        frame_len_s=frame_len_s,
        frame_hop_s=frame_hop_s,
        num_mel=fb.shape[0],
        log_offset=log_offset,
    )


def frame_patches(
    mel: MelSpectrogram,
    patch_frames: int = PATCH_FRAMES,
    patch_hop: int = PATCH_FRAMES,
) -> list[AudioPatch]:
    """Cut the log-mel sequence into fixed-size windows.

    The trailing partial window is zero-padded and its pad_frames count
    recorded. Zero input frames produce an empty list.
    """
    if patch_frames < 1 or patch_hop < 1:
        raise ValidationError("patch_frames and patch_hop must be >= 1")
    v = mel.values
    patches = []
    for start in range(0, v.shape[0], patch_hop):
        chunk = v[start : start + patch_frames]
        pad = patch_frames - chunk.shape[0]
        if pad:
            chunk = np.vstack([chunk, np.zeros((pad, v.shape[1]))])
        patches.append(AudioPatch(values=chunk, pad_frames=pad))
    return patches


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampler (quality is adequate for features,
    not for listening)."""
    if target_rate <= 0:
        raise ValidationError("target_rate must be > 0")
    if target_rate == clip.sample_rate:
        return clip
    n_out = int(round(clip.n_samples * target_rate / clip.sample_rate))
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(clip.n_samples) / clip.sample_rate
    out = np.stack([np.interp(t_out, t_in, ch) for ch in clip.samples])
    return AudioClip(samples=out, sample_rate=target_rate)


# ---------------------------------------------------------------------------
# Feature dump format: "AVQF", u32 rank, u32 dims[], little-endian f32 payload
# ---------------------------------------------------------------------------

_AVQF_MAGIC = b"AVQF"


def write_features(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_AVQF_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != _AVQF_MAGIC:
        raise DataError(f"{path}: bad magic, not an AVQF feature dump")
    (rank,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(data) - offset != 4 * count:
        raise DataError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(dims).copy()
