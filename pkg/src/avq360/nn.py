"""Minimal deterministic neural-net core.

A fixed op set (conv, pooling, linear, relu, layer norm, softmax,
multi-head attention) with forward passes and hand-derived analytic
backward passes, plus bias-corrected Adam and a binary checkpoint
format. There is no taped autodiff: every gradient is written out
explicitly so it can be verified op-by-op against central finite
differences, which the test suite does at float64.

Conventions: tensors are plain numpy arrays; conv inputs are (N, C, H, W);
token matrices are (T, d). A module-level finite-check mode (on by
default) raises NumericError whenever an op produces NaN/Inf.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, NumericError, ValidationError

_FINITE_CHECKS = True
_DEFAULT_DTYPE = np.float64


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf assertions after each op; returns previous setting."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


def set_default_dtype(dtype) -> None:
    """float64 (default, used by all tests) or float32 for runtime."""
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValidationError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


def _check_finite(name: str, *arrays) -> None:
    if not _FINITE_CHECKS:
        return
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name}: non-finite values detected")


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """U(-b, b) with b = sqrt(6/fan_in) (relu gain)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(_DEFAULT_DTYPE)


# ---------------------------------------------------------------------------
# Functional ops: each forward returns (y, cache); backward consumes cache.
# ---------------------------------------------------------------------------

def conv2d_forward(x, w, b=None, stride: int = 1, pad: int = 0):
    """Cross-correlation of x (N,C,H,W) with kernels w (O,C,kh,kw).

    Zero padding; output spatial size floor((H+2p-kh)/s)+1.
    """
    x = np.asarray(x)
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ValidationError(f"conv2d: {c} input channels vs kernel expecting {c2}")
    if stride < 1 or pad < 0:
        raise ValidationError("conv2d: stride must be >= 1 and pad >= 0")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValidationError(
            f"conv2d: no output positions for input {h}x{wd}, kernel {kh}x{kw}, pad {pad}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, Ho, Wo, kh, kw) -> rows of the im2col matrix
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    wm = w.reshape(o, -1)
    y = cols @ wm.T
    if b is not None:
        y = y + b
    y = y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    _check_finite("conv2d", y)
    cache = (cols, w, b is not None, xp.shape, stride, pad, (n, ho, wo))
    return np.ascontiguousarray(y), cache


def conv2d_backward(gy, cache):
    """Returns (gx, gw, gb); gb is None when forward had no bias."""
    cols, w, has_bias, xp_shape, stride, pad, (n, ho, wo) = cache
    o, c, kh, kw = w.shape
    gym = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
    gw = (gym.T @ cols).reshape(w.shape)
    gb = gym.sum(axis=0) if has_bias else None
    gcols = gym @ w.reshape(o, -1)
    g6 = gcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    gxp = np.zeros(xp_shape, dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += g6[
                :, :, i, j
            ]
    gx = gxp[:, :, pad : xp_shape[2] - pad, pad : xp_shape[3] - pad] if pad else gxp
    _check_finite("conv2d.backward", gx, gw)
    return gx, gw, gb


def maxpool2_forward(x):
    """2x2 stride-2 max pooling; H and W must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValidationError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = np.ascontiguousarray(windows).reshape(n, c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)  # first max on ties (raster order in window)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    _check_finite("maxpool2", y)
    return y, (idx, x.shape)


def maxpool2_backward(gy, cache):
    idx, (n, c, h, w) = cache
    g4 = np.zeros((n, c, h // 2, w // 2, 4), dtype=gy.dtype)
    np.put_along_axis(g4, idx[..., None], gy[..., None], axis=-1)
    gx = g4.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(gx).reshape(n, c, h, w)


def linear_forward(x, w, b=None):
    """y = x @ w + b for x (..., d_in), w (d_in, d_out)."""
    if x.shape[-1] != w.shape[0]:
        raise ValidationError(f"linear: input dim {x.shape[-1]} vs weight {w.shape[0]}")
    y = x @ w
    if b is not None:
        y = y + b
    _check_finite("linear", y)
    return y, (x, w, b is not None)


def linear_backward(gy, cache):
    x, w, has_bias = cache
    xf = x.reshape(-1, x.shape[-1])
    gyf = gy.reshape(-1, gy.shape[-1])
    gw = xf.T @ gyf
    gb = gyf.sum(axis=0) if has_bias else None
    gx = (gyf @ w.T).reshape(x.shape)
    return gx, gw, gb


def relu_forward(x):
    return np.maximum(x, 0.0), (x > 0.0)


def relu_backward(gy, cache):
    return gy * cache


def layer_norm_forward(x, gamma, beta, eps: float = 1e-5):
    """Normalize over the last dimension, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma + beta
    _check_finite("layer_norm", y)
    return y, (xhat, inv, gamma)


def layer_norm_backward(gy, cache):
    xhat, inv, gamma = cache
    gxhat = gy * gamma
    axes = tuple(range(gy.ndim - 1))
    ggamma = (gy * xhat).sum(axis=axes)
    gbeta = gy.sum(axis=axes)
    gx = inv * (
        gxhat
        - gxhat.mean(axis=-1, keepdims=True)
        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return gx, ggamma, gbeta


def softmax(x, axis: int = -1):
    """Shift-invariant softmax (row max subtracted before exp)."""
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    _check_finite("softmax", y)
    return y


def softmax_backward(gy, y, axis: int = -1):
    return y * (gy - (gy * y).sum(axis=axis, keepdims=True))


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float64))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(gy, y):
    return gy * y * (1.0 - y)


def global_mean_pool_forward(x):
    """(N, C, H, W) -> (N, C) spatial mean."""
    n, c, h, w = x.shape
    return x.mean(axis=(2, 3)), (n, c, h, w)


def global_mean_pool_backward(gy, cache):
    n, c, h, w = cache
    return np.broadcast_to(gy[:, :, None, None], (n, c, h, w)) / (h * w)


_MHA_PARAM_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def mha_forward(q_in, kv_in, params: dict, heads: int):
    """Multi-head scaled dot-product attention, no masking.

    q_in is (Tq, d), kv_in is (Tk, d); self-attention passes the same
    array for both. Per head: softmax(Q K^T / sqrt(d_head)) V, heads
    concatenated, then the output projection.
    """
    d = q_in.shape[-1]
    if d % heads:
        raise ValidationError(f"model dim {d} not divisible by {heads} heads")
    if kv_in.shape[-1] != d:
        raise ValidationError(
            f"mha: query dim {d} vs key/value dim {kv_in.shape[-1]}"
        )
    hd = d // heads
    tq, tk = q_in.shape[0], kv_in.shape[0]
    q = q_in @ params["wq"] + params["bq"]
    k = kv_in @ params["wk"] + params["bk"]
    v = kv_in @ params["wv"] + params["bv"]
    qh = q.reshape(tq, heads, hd).transpose(1, 0, 2)
    kh = k.reshape(tk, heads, hd).transpose(1, 0, 2)
    vh = v.reshape(tk, heads, hd).transpose(1, 0, 2)
    scale = 1.0 / np.sqrt(hd)
    scores = (qh @ kh.transpose(0, 2, 1)) * scale
    attn = softmax(scores, axis=-1)
    oh = attn @ vh
    o = oh.transpose(1, 0, 2).reshape(tq, d)
    y = o @ params["wo"] + params["bo"]
    _check_finite("mha", y)
    cache = (q_in, kv_in, qh, kh, vh, attn, o, params, heads, scale)
    return y, cache


def mha_backward(gy, cache):
    """Returns (gq_in, gkv_in, param_grads dict)."""
    q_in, kv_in, qh, kh, vh, attn, o, params, heads, scale = cache
    tq, d = q_in.shape
    tk = kv_in.shape[0]
    hd = d // heads
    grads = {}
    grads["wo"] = o.T @ gy
    grads["bo"] = gy.sum(axis=0)
    go = gy @ params["wo"].T
    goh = go.reshape(tq, heads, hd).transpose(1, 0, 2)
    gattn = goh @ vh.transpose(0, 2, 1)
    gvh = attn.transpose(0, 2, 1) @ goh
    gscores = softmax_backward(gattn, attn) * scale
    gqh = gscores @ kh
    gkh = gscores.transpose(0, 2, 1) @ qh
    gq = gqh.transpose(1, 0, 2).reshape(tq, d)
    gk = gkh.transpose(1, 0, 2).reshape(tk, d)
    gv = gvh.transpose(1, 0, 2).reshape(tk, d)
    grads["wq"] = q_in.T @ gq
    grads["bq"] = gq.sum(axis=0)
    grads["wk"] = kv_in.T @ gk
    grads["bk"] = gk.sum(axis=0)
    grads["wv"] = kv_in.T @ gv
    grads["bv"] = gv.sum(axis=0)
    gq_in = gq @ params["wq"].T
    gkv_in = gk @ params["wk"].T + gv @ params["wv"].T
    _check_finite("mha.backward", gq_in, gkv_in)
    return gq_in, gkv_in, grads


# Forward-only conveniences (tests and demos).

def conv2d(x, w, b=None, stride: int = 1, pad: int = 0):
    return conv2d_forward(x, w, b, stride, pad)[0]


def maxpool2(x):
    return maxpool2_forward(x)[0]


def linear(x, w, b=None):
    return linear_forward(x, w, b)[0]


def relu(x):
    return relu_forward(x)[0]


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    return layer_norm_forward(x, gamma, beta, eps)[0]


def multi_head_attention(q_in, kv_in, params: dict, heads: int):
    return mha_forward(q_in, kv_in, params, heads)[0]


# ---------------------------------------------------------------------------
# Parameter store, Adam, checkpoints
# ---------------------------------------------------------------------------

class ParamStore:
    """Named parameters plus same-shaped gradient accumulators.

    Parameter arrays are owned by the store and shared by reference with
    the layers that registered them; the optimizer updates them in place
    so those references stay valid.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def register(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=_DEFAULT_DTYPE)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def add_grad(self, name: str, g) -> None:
        self.grads[name] += g

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise DataError(
                f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in self.params.items():
            src = np.asarray(state[name])
            if src.shape != p.shape:
                raise DataError(
                    f"shape mismatch for {name}: checkpoint {src.shape} vs model {p.shape}"
                )
            p[...] = src


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(store: ParamStore, lr: float = 1e-3) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in store.params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(store: ParamStore, state: AdamState) -> None:
    """Standard bias-corrected Adam update, in place, fixed name order."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name in store.param_names():
        if name not in store.grads:
            raise NumericError(f"missing gradient for parameter {name!r}")
        g = store.grads[name]
        _check_finite(f"adam_step[{name}]", g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        store.params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


CHECKPOINT_MAGIC = b"AVQC"
CHECKPOINT_VERSION = 1


def write_checkpoint(path, tensors: dict) -> None:
    """Binary checkpoint: magic "AVQC", u32 version, u32 tensor count,
    then per tensor (u32 name length, name bytes, u32 rank, u32 dims[],
    little-endian f32 payload, row-major). Names are written sorted."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name in sorted(tensors):
            # ascontiguousarray would promote rank-0 tensors to rank 1
            arr = np.asarray(tensors[name], dtype="<f4")
            if arr.ndim:
                arr = np.ascontiguousarray(arr)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad magic, not an AVQC checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            out[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError) as e:
        raise DataError(f"{path}: truncated or corrupt checkpoint") from e
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes after last tensor")
    return out


# ---------------------------------------------------------------------------
# Gradient checking (central finite differences; forward passes only)
# ---------------------------------------------------------------------------

def numerical_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f(x) w.r.t. every entry of x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        old = flat_x[i]
        flat_x[i] = old + h
        fp = f(x)
        flat_x[i] = old - h
        fm = f(x)
        flat_x[i] = old
        flat_g[i] = (fp - fm) / (2.0 * h)
    return g


def finite_difference_store_grads(
    loss_fn,
    store: ParamStore,
    h: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    seed: int = 0,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Central differences of loss_fn() w.r.t. store parameters (in place).

    Returns {name: (flat_indices, numeric_grads)}. When a tensor has
    more entries than max_coords_per_tensor, a seeded subset is checked.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name in store.param_names():
        flat = store.params[name].reshape(-1)
        if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
            idx = np.sort(rng.choice(flat.size, size=max_coords_per_tensor, replace=False))
        else:
            idx = np.arange(flat.size)
        vals = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = loss_fn()
            flat[i] = old - h
            fm = loss_fn()
            flat[i] = old
            vals[j] = (fp - fm) / (2.0 * h)
        out[name] = (idx, vals)
    return out


def gradient_rel_err(analytic, numeric, zero_tol: float = 1e-7) -> float:
    """Worst-case relative disagreement between two gradient estimates.

    Entries where both magnitudes are below zero_tol are compared
    absolutely (their ratio would be dominated by finite-difference
    noise rather than by the formulas under test).
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(denom < zero_tol, err, err / denom)
    return float(rel.max()) if rel.size else 0.0


# ---------------------------------------------------------------------------
# Stateful layers (thin wrappers that own parameters via a ParamStore)
# ---------------------------------------------------------------------------

class Conv2d:
    def __init__(self, store, name, in_channels, out_channels, rng,
                 ksize: int = 3, stride: int = 1, pad: int = 1):
        self.stride, self.pad = stride, pad
        self._store, self._name = store, name
        fan_in = in_channels * ksize * ksize
        self.w = store.register(f"{name}.w", kaiming_uniform(rng, (out_channels, in_channels, ksize, ksize), fan_in))
        self.b = store.register(f"{name}.b", np.zeros(out_channels))
        self._cache = None

    def forward(self, x):
        y, self._cache = conv2d_forward(x, self.w, self.b, self.stride, self.pad)
        return y

    def backward(self, gy):
        gx, gw, gb = conv2d_backward(gy, self._cache)
        self._store.add_grad(f"{self._name}.w", gw)
        self._store.add_grad(f"{self._name}.b", gb)
        return gx


class Linear:
    def __init__(self, store, name, d_in, d_out, rng):
        self._store, self._name = store, name
        self.w = store.register(f"{name}.w", kaiming_uniform(rng, (d_in, d_out), d_in))
        self.b = store.register(f"{name}.b", np.zeros(d_out))
        self._cache = None

    def forward(self, x):
        y, self._cache = linear_forward(x, self.w, self.b)
        return y

    def backward(self, gy):
        gx, gw, gb = linear_backward(gy, self._cache)
        self._store.add_grad(f"{self._name}.w", gw)
        self._store.add_grad(f"{self._name}.b", gb)
        return gx


class LayerNorm:
    def __init__(self, store, name, dim, eps: float = 1e-5):
        self._store, self._name = store, name
        self.eps = eps
        self.gamma = store.register(f"{name}.gamma", np.ones(dim))
        self.beta = store.register(f"{name}.beta", np.zeros(dim))
        self._cache = None

    def forward(self, x):
        y, self._cache = layer_norm_forward(x, self.gamma, self.beta, self.eps)
        return y

    def backward(self, gy):
        gx, ggamma, gbeta = layer_norm_backward(gy, self._cache)
        self._store.add_grad(f"{self._name}.gamma", ggamma)
        self._store.add_grad(f"{self._name}.beta", gbeta)
        return gx


class MultiHeadAttention:
    def __init__(self, store, name, d_model, heads, rng):
        if d_model % heads:
            raise ValidationError(f"d_model {d_model} not divisible by heads {heads}")
        self.heads = heads
        self._store, self._name = store, name
        self.params = {}
        for key in ("wq", "wk", "wv", "wo"):
            self.params[key] = store.register(f"{name}.{key}", kaiming_uniform(rng, (d_model, d_model), d_model))
        for key in ("bq", "bk", "bv", "bo"):
            self.params[key] = store.register(f"{name}.{key}", np.zeros(d_model))
        self._cache = None

    def forward(self, q_in, kv_in):
        y, self._cache = mha_forward(q_in, kv_in, self.params, self.heads)
        return y

    def backward(self, gy):
        gq_in, gkv_in, grads = mha_backward(gy, self._cache)
        for key, g in grads.items():
            self._store.add_grad(f"{self._name}.{key}", g)
        return gq_in, gkv_in
