"""No-reference audio-visual quality model and its training loop.

Video branch: frames are split into latitude bands, each band is
box-resampled to a fixed input size and encoded by its own small CNN;
band features are aggregated with learnable latitude weights biased by
the cos-latitude prior, then one self-attention block models temporal
structure across the frame tokens. Audio branch: log-mel patches pass
through a four-stage CNN into one token per patch. Fusion: a pre-norm
transformer stack over the video tokens where every second block
(indices 1, 3, 5, ...) inserts cross-attention with video queries and
audio keys/values. The pooled representation maps through a linear head
and a sigmoid to a quality score in (0, 1), rescaled to (0, 100) for
reporting.

All forward/backward passes run one sequence at a time; batches
accumulate gradients in a fixed order, so training is bit-reproducible
for a given seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import audiofe, nn
from .erp import cos_latitude_prior, partition_erp
from .errors import DataError, ValidationError
from .manifest import AudioClip, FrameSequence, downmix_mono

FUSION_MODES = ("transformer", "cat", "add")
_FUSION_MODE_CODES = {m: i for i, m in enumerate(FUSION_MODES)}


@dataclass
class ModelConfig:
    bands: int = 4
    band_channels: tuple = (8, 16, 32)
    band_input_hw: tuple = (16, 32)
    d_model: int = 64
    fusion_blocks: int = 4
    heads: int = 4
    audio_channels: tuple = (8, 16, 32, 64)
    frames_per_clip: int = 8
    patch_frames: int = audiofe.PATCH_FRAMES
    num_mel: int = audiofe.DEFAULT_NUM_MEL
    ff_mult: int = 2
    fusion_mode: str = "transformer"
    temporal_pos_enc: bool = True
    audio_pos_enc: bool = False
    seed: int = 1234
    lr: float = 1e-3
    train_steps: int = 300
    batch_size: int = 8

    def validate(self) -> None:
        if self.bands < 1:
            raise ValidationError("bands must be >= 1")
        if self.d_model % self.heads:
            raise ValidationError(
                f"d_model {self.d_model} not divisible by heads {self.heads}"
            )
        if self.fusion_mode not in FUSION_MODES:
            raise ValidationError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.fusion_mode == "transformer" and (
            self.fusion_blocks < 2 or self.fusion_blocks % 2
        ):
            raise ValidationError(
                "fusion_blocks must be even and >= 2 so the alternate-block "
                f"cross-attention rule is well formed, got {self.fusion_blocks}"
            )
        bh, bw = self.band_input_hw
        div = 2 ** len(self.band_channels)
        if bh % div or bw % div:
            raise ValidationError(
                f"band input {bh}x{bw} must be divisible by {div} "
                f"({len(self.band_channels)} pooling stages)"
            )
        if len(self.audio_channels) != 4:
            raise ValidationError("audio_channels must list exactly 4 conv stages")
        if self.patch_frames % 16 or self.num_mel % 16:
            raise ValidationError(
                "audio patch geometry must be divisible by 16 (4 pooling stages)"
            )
        if self.frames_per_clip < 1:
            raise ValidationError("frames_per_clip must be >= 1")
        if not 0 < self.lr:
            raise ValidationError("lr must be > 0")
        if self.train_steps < 0 or self.batch_size < 1:
            raise ValidationError("train_steps must be >= 0 and batch_size >= 1")


def cross_attention_block_indices(n_blocks: int) -> list[int]:
    """Fusion blocks that carry cross-attention: indices 1, 3, 5, ... (0-based)."""
    return [i for i in range(n_blocks) if i % 2 == 1]


# ---------------------------------------------------------------------------
# Preprocessing: media -> model input tensors
# ---------------------------------------------------------------------------

@dataclass
class SequenceFeatures:
    """Preprocessed inputs for one sequence."""

    video: np.ndarray       # (T, M, band_h, band_w), luma in [0, 1]
    audio: np.ndarray       # (P, patch_frames, num_mel) log-mel patches
    lat_prior: np.ndarray   # (M,) cos-latitude prior of the source partition
    sequence_id: str = ""


def sample_frame_indices(n_frames: int, t: int) -> np.ndarray:
    """t evenly spaced frame indices, first and last included."""
    if t > n_frames:
        raise ValidationError(f"requested {t} frames but only {n_frames} available")
    return np.rint(np.linspace(0, n_frames - 1, t)).astype(int)


@lru_cache(maxsize=64)
def _overlap_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Exact area-average resampling matrix (n_out, n_in); rows sum to 1."""
    scale = n_in / n_out
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), min(int(np.ceil(hi)), n_in)
        for j in range(j0, j1):
            mat[i, j] = max(0.0, min(hi, j + 1) - max(lo, j)) / scale
    return mat


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Deterministic area-average resize (exact box filter, any ratio)."""
    img = np.asarray(img, dtype=np.float64)
    return _overlap_matrix(img.shape[0], out_h) @ img @ _overlap_matrix(img.shape[1], out_w).T


def video_input(seq: FrameSequence, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Banded, resized video tensor (T, M, bh, bw) plus the cos-latitude prior."""
    if seq.width != 2 * seq.height:
        raise DataError(
            f"frame {seq.width}x{seq.height} is not 2:1 ERP"
        )
    part = partition_erp(seq.height, cfg.bands)
    prior = cos_latitude_prior(part)
    frames = seq.luma_01()[sample_frame_indices(seq.n_frames, cfg.frames_per_clip)]
    bh, bw = cfg.band_input_hw
    col_mat = _overlap_matrix(seq.width, bw)
    out = np.empty((cfg.frames_per_clip, cfg.bands, bh, bw))
    for m, (a, b) in enumerate(part.band_row_ranges):
        row_mat = _overlap_matrix(b - a, bh)
        for t, frame in enumerate(frames):
            out[t, m] = row_mat @ frame[a:b] @ col_mat.T
    return out, prior


def audio_input(clip: AudioClip, cfg: ModelConfig) -> np.ndarray:
    """Log-mel patch stack (P, patch_frames, num_mel) from any ingested clip."""
    mono = downmix_mono(clip)
    if mono.sample_rate != audiofe.DEFAULT_SAMPLE_RATE:
        mono = audiofe.resample_linear(mono, audiofe.DEFAULT_SAMPLE_RATE)
    mag = audiofe.stft_magnitude(mono)
    if mag.shape[0] == 0:
        raise DataError("audio too short to produce a single analysis frame")
    fb = audiofe.mel_filterbank(
        num_mel=cfg.num_mel,
        sample_rate=audiofe.DEFAULT_SAMPLE_RATE,
        fft_bins=mag.shape[1],
    )
    mel = audiofe.log_mel(mag, fb)
    patches = audiofe.frame_patches(mel, patch_frames=cfg.patch_frames)
    return np.stack([p.values for p in patches])


def preprocess_sequence(
    seq: FrameSequence, clip: AudioClip, cfg: ModelConfig, sequence_id: str = ""
) -> SequenceFeatures:
    video, prior = video_input(seq, cfg)
    audio = audio_input(clip, cfg)
    return SequenceFeatures(video=video, audio=audio, lat_prior=prior,
                            sequence_id=sequence_id)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Standard sin/cos positional encoding, shape (n, d)."""
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(nn.default_dtype())


# ---------------------------------------------------------------------------
# Submodules
# ---------------------------------------------------------------------------

class _ConvStack:
    """conv(3x3, pad 1) + relu + 2x2 maxpool stages, then global mean pool
    and a linear projection to d_model."""

    def __init__(self, store, name, channels, d_model, rng):
        self.convs = []
        cin = 1
        for i, cout in enumerate(channels):
            self.convs.append(nn.Conv2d(store, f"{name}.conv{i}", cin, cout, rng))
            cin = cout
        self.proj = nn.Linear(store, f"{name}.proj", cin, d_model, rng)
        self._caches = None

    def forward(self, x):
        relu_caches, pool_caches = [], []
        for conv in self.convs:
            x = conv.forward(x)
            x, rc = nn.relu_forward(x)
            relu_caches.append(rc)
            x, pc = nn.maxpool2_forward(x)
            pool_caches.append(pc)
        x, gap_cache = nn.global_mean_pool_forward(x)
        self._caches = (relu_caches, pool_caches, gap_cache)
        return self.proj.forward(x)

    def backward(self, gy):
        relu_caches, pool_caches, gap_cache = self._caches
        g = self.proj.backward(gy)
        g = nn.global_mean_pool_backward(g, gap_cache)
        for conv, rc, pc in zip(
            reversed(self.convs), reversed(relu_caches), reversed(pool_caches)
        ):
            g = nn.maxpool2_backward(g, pc)
            g = nn.relu_backward(g, rc)
            g = conv.backward(g)
        return g


class _FeedForward:
    def __init__(self, store, name, d_model, hidden, rng):
        self.lin1 = nn.Linear(store, f"{name}.lin1", d_model, hidden, rng)
        self.lin2 = nn.Linear(store, f"{name}.lin2", hidden, d_model, rng)
        self._relu_cache = None

    def forward(self, x):
        h = self.lin1.forward(x)
        h, self._relu_cache = nn.relu_forward(h)
        return self.lin2.forward(h)

    def backward(self, gy):
        g = self.lin2.backward(gy)
        g = nn.relu_backward(g, self._relu_cache)
        return self.lin1.backward(g)


class _TransformerBlock:
    """Pre-norm block: self-attention, optional cross-attention, feed-forward,
    each as residual sublayers."""

    def __init__(self, store, name, d_model, heads, rng, cross: bool, ff_mult: int):
        self.cross = cross
        self.ln1 = nn.LayerNorm(store, f"{name}.ln1", d_model)
        self.attn = nn.MultiHeadAttention(store, f"{name}.attn", d_model, heads, rng)
        if cross:
            self.lnx = nn.LayerNorm(store, f"{name}.lnx", d_model)
            self.xattn = nn.MultiHeadAttention(store, f"{name}.xattn", d_model, heads, rng)
        self.ln2 = nn.LayerNorm(store, f"{name}.ln2", d_model)
        self.ff = _FeedForward(store, f"{name}.ff", d_model, ff_mult * d_model, rng)

    def forward(self, v, a=None):
        u = self.ln1.forward(v)
        v = v + self.attn.forward(u, u)
        if self.cross:
            if a is None:
                raise ValidationError("cross-attention block needs audio tokens")
            u = self.lnx.forward(v)
            v = v + self.xattn.forward(u, a)
        u = self.ln2.forward(v)
        return v + self.ff.forward(u)

    def backward(self, gv):
        ga = None
        gu = self.ff.backward(gv)
        gv = gv + self.ln2.backward(gu)
        if self.cross:
            gq, ga = self.xattn.backward(gv)
            gv = gv + self.lnx.backward(gq)
        gq, gkv = self.attn.backward(gv)
        gv = gv + self.ln1.backward(gq + gkv)
        return gv, ga


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------

class AVQAModel:
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.store = nn.ParamStore()
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model

        self.band_encoders = [
            _ConvStack(self.store, f"video.band{m}", cfg.band_channels, d, rng)
            for m in range(cfg.bands)
        ]
        self.lat_logits = self.store.register("video.lat_logits", np.zeros(cfg.bands))
        self.temporal = _TransformerBlock(
            self.store, "video.temporal", d, cfg.heads, rng, cross=False,
            ff_mult=cfg.ff_mult,
        )
        self.audio_enc = _ConvStack(self.store, "audio.cnn", cfg.audio_channels, d, rng)
        self.audio_ln = nn.LayerNorm(self.store, "audio.ln", d)

        self.fusion_blocks: list[_TransformerBlock] = []
        if cfg.fusion_mode == "transformer":
            cross_set = set(cross_attention_block_indices(cfg.fusion_blocks))
            for i in range(cfg.fusion_blocks):
                self.fusion_blocks.append(
                    _TransformerBlock(
                        self.store, f"fusion.block{i}", d, cfg.heads, rng,
                        cross=(i in cross_set), ff_mult=cfg.ff_mult,
                    )
                )
            self.final_ln = nn.LayerNorm(self.store, "fusion.final_ln", d)
            head_in = d
        elif cfg.fusion_mode == "cat":
            head_in = 2 * d
        else:  # add
            head_in = d
        self.head = nn.Linear(self.store, "head", head_in, 1, rng)
        self._cache = None

    # -- forward -----------------------------------------------------------

    def _video_tokens(self, feat: SequenceFeatures):
        cfg = self.cfg
        if feat.video.shape[1] != cfg.bands:
            raise ValidationError(
                f"features carry {feat.video.shape[1]} bands, model expects {cfg.bands}"
            )
        x = feat.video.astype(nn.default_dtype())
        band_feats = [
            enc.forward(x[:, m][:, None]) for m, enc in enumerate(self.band_encoders)
        ]
        stacked = np.stack(band_feats)                       # (M, T, d)
        z = self.lat_logits + np.log(feat.lat_prior)
        eff = nn.softmax(z[None, :])[0]
        tokens = np.einsum("m,mtd->td", eff, stacked)
        self._agg_cache = (stacked, eff)
        if cfg.temporal_pos_enc:
            tokens = tokens + sinusoidal_positions(tokens.shape[0], cfg.d_model)
        return self.temporal.forward(tokens)

    def _video_tokens_backward(self, gv):
        gtok, _ = self.temporal.backward(gv)
        stacked, eff = self._agg_cache
        geff = np.einsum("td,mtd->m", gtok, stacked)
        gz = nn.softmax_backward(geff[None, :], eff[None, :])[0]
        self.store.add_grad("video.lat_logits", gz)
        for m, enc in enumerate(self.band_encoders):
            enc.backward(eff[m] * gtok)

    def _audio_tokens(self, feat: SequenceFeatures):
        a = feat.audio.astype(nn.default_dtype())[:, None]   # (P, 1, F, B)
        tokens = self.audio_enc.forward(a)
        tokens = self.audio_ln.forward(tokens)
        if self.cfg.audio_pos_enc:
            tokens = tokens + sinusoidal_positions(tokens.shape[0], self.cfg.d_model)
        return tokens

    def _audio_tokens_backward(self, ga):
        g = self.audio_ln.backward(ga)
        self.audio_enc.backward(g)

    def forward(self, feat: SequenceFeatures) -> float:
        """Score in (0, 1) for one preprocessed sequence."""
        cfg = self.cfg
        v = self._video_tokens(feat)
        a = self._audio_tokens(feat)
        t, p = v.shape[0], a.shape[0]
        if cfg.fusion_mode == "transformer":
            for blk in self.fusion_blocks:
                v = blk.forward(v, a)
            v = self.final_ln.forward(v)
            pooled = v.mean(axis=0)
        elif cfg.fusion_mode == "cat":
            pooled = np.concatenate([v.mean(axis=0), a.mean(axis=0)])
        else:
            pooled = v.mean(axis=0) + a.mean(axis=0)
        y = self.head.forward(pooled)
        s = float(nn.sigmoid(y)[0])
        self._cache = (t, p, s)
        return s

    def backward(self, gscore: float) -> None:
        """Accumulate parameter gradients of gscore * d(score01)/d(params)."""
        cfg = self.cfg
        t, p, s = self._cache
        d = cfg.d_model
        gy = np.array([gscore * s * (1.0 - s)], dtype=nn.default_dtype())
        gpooled = self.head.backward(gy)
        if cfg.fusion_mode == "transformer":
            gv = np.broadcast_to(gpooled / t, (t, d)).copy()
            gv = self.final_ln.backward(gv)
            ga_total = np.zeros((p, d), dtype=nn.default_dtype())
            for blk in reversed(self.fusion_blocks):
                gv, ga = blk.backward(gv)
                if ga is not None:
                    ga_total += ga
        elif cfg.fusion_mode == "cat":
            gv = np.broadcast_to(gpooled[:d] / t, (t, d)).copy()
            ga_total = np.broadcast_to(gpooled[d:] / p, (p, d)).copy()
        else:
            gv = np.broadcast_to(gpooled / t, (t, d)).copy()
            ga_total = np.broadcast_to(gpooled / p, (p, d)).copy()
        self._audio_tokens_backward(ga_total)
        self._video_tokens_backward(gv)

    def predict(self, feat: SequenceFeatures) -> float:
        """Quality score in (0, 100)."""
        return 100.0 * self.forward(feat)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        tensors = dict(self.store.params)
        tensors.update(_config_to_meta(self.cfg))
        nn.write_checkpoint(path, tensors)

    @classmethod
    def load(cls, path) -> "AVQAModel":
        tensors = nn.read_checkpoint(path)
        meta = {k: v for k, v in tensors.items() if k.startswith("meta/")}
        params = {k: v.astype(nn.default_dtype())
                  for k, v in tensors.items() if not k.startswith("meta/")}
        cfg = _config_from_meta(meta, path)
        model = cls(cfg)
        try:
            model.store.load_state(params)
        except DataError as e:
            raise DataError(f"{path}: checkpoint/config mismatch: {e}") from e
        return model


def _config_to_meta(cfg: ModelConfig) -> dict[str, np.ndarray]:
    return {
        "meta/bands": np.float32(cfg.bands),
        "meta/band_channels": np.asarray(cfg.band_channels, dtype=np.float32),
        "meta/band_input_hw": np.asarray(cfg.band_input_hw, dtype=np.float32),
        "meta/d_model": np.float32(cfg.d_model),
        "meta/fusion_blocks": np.float32(cfg.fusion_blocks),
        "meta/heads": np.float32(cfg.heads),
        "meta/audio_channels": np.asarray(cfg.audio_channels, dtype=np.float32),
        "meta/frames_per_clip": np.float32(cfg.frames_per_clip),
        "meta/patch_frames": np.float32(cfg.patch_frames),
        "meta/num_mel": np.float32(cfg.num_mel),
        "meta/ff_mult": np.float32(cfg.ff_mult),
        "meta/fusion_mode": np.float32(_FUSION_MODE_CODES[cfg.fusion_mode]),
        "meta/temporal_pos_enc": np.float32(int(cfg.temporal_pos_enc)),
        "meta/audio_pos_enc": np.float32(int(cfg.audio_pos_enc)),
        "meta/cross_attention_blocks": np.asarray(
            cross_attention_block_indices(cfg.fusion_blocks)
            if cfg.fusion_mode == "transformer" else [],
            dtype=np.float32,
        ),
    }


def _config_from_meta(meta: dict, path) -> ModelConfig:
    def scalar(key):
        if key not in meta:
            raise DataError(f"{path}: checkpoint missing {key}")
        return meta[key].reshape(-1)[0] if meta[key].ndim else float(meta[key])

    def vector(key):
        if key not in meta:
            raise DataError(f"{path}: checkpoint missing {key}")
        return tuple(int(x) for x in np.atleast_1d(meta[key]))

    mode_code = int(scalar("meta/fusion_mode"))
    if mode_code not in range(len(FUSION_MODES)):
        raise DataError(f"{path}: unknown fusion mode code {mode_code}")
    cfg = ModelConfig(
        bands=int(scalar("meta/bands")),
        band_channels=vector("meta/band_channels"),
        band_input_hw=vector("meta/band_input_hw"),
        d_model=int(scalar("meta/d_model")),
        fusion_blocks=int(scalar("meta/fusion_blocks")),
        heads=int(scalar("meta/heads")),
        audio_channels=vector("meta/audio_channels"),
        frames_per_clip=int(scalar("meta/frames_per_clip")),
        patch_frames=int(scalar("meta/patch_frames")),
        num_mel=int(scalar("meta/num_mel")),
        ff_mult=int(scalar("meta/ff_mult")),
        fusion_mode=FUSION_MODES[mode_code],
        temporal_pos_enc=bool(int(scalar("meta/temporal_pos_enc"))),
        audio_pos_enc=bool(int(scalar("meta/audio_pos_enc"))),
    )
    recorded = vector("meta/cross_attention_blocks")
    expected = tuple(
        cross_attention_block_indices(cfg.fusion_blocks)
        if cfg.fusion_mode == "transformer" else []
    )
    if recorded != expected:
        raise DataError(
            f"{path}: recorded cross-attention schedule {recorded} does not "
            f"match configuration {expected}"
        )
    return cfg


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1][1] if self.history else float("nan")


def train_model(
    model: AVQAModel,
    samples: list[SequenceFeatures],
    targets01: np.ndarray,
    steps: int | None = None,
    batch_size: int | None = None,
    seed: int | None = None,
    lr: float | None = None,
) -> TrainResult:
    """MSE training of sigmoid output against MOS normalized to [0, 1].

    One step is one Adam update over a shuffled mini-batch; the shuffle
    order comes from a dedicated seeded generator, so identical calls
    produce bit-identical parameters.
    """
    cfg = model.cfg
    steps = cfg.train_steps if steps is None else steps
    batch_size = cfg.batch_size if batch_size is None else batch_size
    seed = cfg.seed if seed is None else seed
    lr = cfg.lr if lr is None else lr
    targets01 = np.asarray(targets01, dtype=np.float64)
    if len(samples) == 0:
        raise ValidationError("empty training set")
    if len(samples) != len(targets01):
        raise ValidationError(
            f"{len(samples)} samples vs {len(targets01)} targets"
        )
    if np.any((targets01 < 0) | (targets01 > 1)):
        raise ValidationError("targets must be normalized to [0, 1]")

    rng = np.random.default_rng(seed)
    state = nn.adam_init(model.store, lr=lr)
    order: list[int] = []
    result = TrainResult()
    for step in range(1, steps + 1):
        while len(order) < batch_size:
            order = order + list(rng.permutation(len(samples)))
        batch, order = order[:batch_size], order[batch_size:]
        model.store.zero_grads()
        loss = 0.0
        for i in batch:
            s = model.forward(samples[i])
            err = s - targets01[i]
            loss += err * err
            model.backward(2.0 * err / len(batch))
        loss /= len(batch)
        nn.adam_step(model.store, state)
        result.history.append((step, loss))
    return result


def write_train_log(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        for step, loss in history:
            writer.writerow([step, f"{loss:.10f}"])
