"""Transformer vector-field estimator with hand-written reverse mode.

The network maps ``(x_t, X_h, t)`` to a field of the same shape as ``x_t``:

    h = [x_t, X_h] W_in + b_in + PE(frames)
    for each layer:
        h += time_proj_l(sinusoid(t))          # broadcast over frames
        h += MHA(LN1(h))
        h += FF(LN2(h))                        # GELU
    v = LN_f(h) W_out + b_out

Parameters live in a flat ``dict[str, ndarray]``; their dtype sets the
compute precision (float64 for gradient checks, float32 for training).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .cfm import PathKind
from .errors import ConfigMismatchError, DomainError, FormatError, TrainingError

LN_EPS = 1e-5
TIME_SCALE = 1000.0
CKPT_MAGIC = b"FHCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class EstimatorConfig:
    layers: int = 2
    heads: int = 2
    model_dim: int = 64
    ff_dim: int = 256
    mel_bins: int = 80
    max_frames: int = 4096
    positional: bool = True

    def __post_init__(self):
        for name in ("layers", "heads", "model_dim", "ff_dim", "mel_bins", "max_frames"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if self.model_dim % self.heads:
            raise DomainError("model_dim must be divisible by heads")
        if self.model_dim % 2:
            raise DomainError("model_dim must be even for sinusoidal embeddings")


def sinusoid(positions, dim: int) -> np.ndarray:
    """``[sin(p w_i), cos(p w_i)]`` with geometric frequencies ``w_i``."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = np.asarray(positions, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def param_shapes(cfg: EstimatorConfig) -> dict:
    d, f, ff = cfg.model_dim, cfg.mel_bins, cfg.ff_dim
    shapes = {"in_w": (2 * f, d), "in_b": (d,)}
    for i in range(cfg.layers):
        pre = f"l{i}."
        shapes.update({pre + "time_w": (d, d), pre + "time_b": (d,),
                       pre + "ln1_g": (d,), pre + "ln1_b": (d,)})
        for m in "qkvo":
            shapes[pre + m + "_w"] = (d, d)
            shapes[pre + m + "_b"] = (d,)
        shapes.update({pre + "ln2_g": (d,), pre + "ln2_b": (d,),
                       pre + "ff1_w": (d, ff), pre + "ff1_b": (ff,),
                       pre + "ff2_w": (ff, d), pre + "ff2_b": (d,)})
    shapes.update({"lnf_g": (d,), "lnf_b": (d,), "out_w": (d, f), "out_b": (f,)})
    return shapes


def init_params(cfg: EstimatorConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Normal(0, 0.02) matrices, zero biases, unit layer-norm gains."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_g"):
            params[name] = np.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = (0.02 * rng.standard_normal(shape)).astype(dtype)
    return params


# --------------------------------------------------------------------------
# primitives (forward returns a cache, backward consumes it)

def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _ln_bwd(dy, cache):
    xhat, rstd, g = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(red)
    db = dy.sum(red)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _normal_cdf(x):
    return 0.5 * (1.0 + erf(x * (1.0 / math.sqrt(2.0))))


def _gelu_grad(x, cdf):
    return cdf + x * np.exp(-0.5 * x * x) * (1.0 / math.sqrt(2.0 * math.pi))


def _wgrad(x, dy):
    """Weight gradient of ``x @ W`` summed over all leading axes."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _split(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


@dataclass
class ForwardCache:
    x_in: np.ndarray
    temb: np.ndarray
    layers: list = field(default_factory=list)
    lnf: tuple = None
    hf: np.ndarray = None
    max_abs: float = 0.0


class VectorFieldEstimator:
    """Estimator network; ``n_forward`` counts forward evaluations."""

    def __init__(self, cfg: EstimatorConfig, params: dict | None = None, seed: int = 0,
                 dtype=np.float32):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed), dtype)
        self.n_forward = 0
        self._check_params()

    def _check_params(self):
        ref = param_shapes(self.cfg)
        if set(ref) != set(self.params):
            missing = sorted(set(ref) ^ set(self.params))
            raise ConfigMismatchError(f"parameter names do not match the configuration: {missing[:4]}")
        for k, shape in ref.items():
            if self.params[k].shape != shape:
                raise ConfigMismatchError(f"{k}: shape {self.params[k].shape}, config expects {shape}")

    @property
    def dtype(self):
        return self.params["in_w"].dtype

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # ------------------------------------------------------------------
    def _inputs(self, x_t, x_h, t):
        x_t = np.asarray(x_t)
        x_h = np.asarray(x_h)
        if x_t.shape != x_h.shape:
            raise DomainError(f"x_t {x_t.shape} and X_h {x_h.shape} differ in shape")
        single = x_t.ndim == 2
        if single:
            x_t, x_h = x_t[None], x_h[None]
        if x_t.ndim != 3 or x_t.shape[-1] != self.cfg.mel_bins:
            raise DomainError(f"expected (N, {self.cfg.mel_bins}) grids, got {x_t.shape}")
        if x_t.shape[1] > self.cfg.max_frames:
            raise DomainError(f"{x_t.shape[1]} frames exceed max_frames={self.cfg.max_frames}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x_t.shape[0],))
        if np.any((t < 0) | (t > 1)):
            raise DomainError("flow step t must lie in [0, 1]")
        return x_t, x_h, t, single

    def _forward(self, x_t, x_h, t):
        p, cfg = self.params, self.cfg
        dt = self.dtype
        x_in = np.concatenate([x_t, x_h], axis=-1).astype(dt)
        temb = sinusoid(TIME_SCALE * t, cfg.model_dim).astype(dt)
        cache = ForwardCache(x_in, temb)
        h = x_in @ p["in_w"] + p["in_b"]
        if cfg.positional:
            h = h + sinusoid(np.arange(h.shape[1]), cfg.model_dim).astype(dt)
        peak = float(np.abs(h).max())
        scale = 1.0 / math.sqrt(cfg.model_dim // cfg.heads)
        for i in range(cfg.layers):
            pre = f"l{i}."
            h = h + (temb @ p[pre + "time_w"] + p[pre + "time_b"])[:, None, :]
            a, ln1 = _ln_fwd(h, p[pre + "ln1_g"], p[pre + "ln1_b"])
            q = _split(a @ p[pre + "q_w"] + p[pre + "q_b"], cfg.heads)
            k = _split(a @ p[pre + "k_w"] + p[pre + "k_b"], cfg.heads)
            v = _split(a @ p[pre + "v_w"] + p[pre + "v_b"], cfg.heads)
            s = (q @ k.transpose(0, 1, 3, 2)) * scale
            s = s - s.max(-1, keepdims=True)
            e = np.exp(s)
            att = e / e.sum(-1, keepdims=True)
            ctx = _merge(att @ v)
            h = h + ctx @ p[pre + "o_w"] + p[pre + "o_b"]
            a2, ln2 = _ln_fwd(h, p[pre + "ln2_g"], p[pre + "ln2_b"])
            z = a2 @ p[pre + "ff1_w"] + p[pre + "ff1_b"]
            cdf = _normal_cdf(z)
            g = z * cdf
            h = h + g @ p[pre + "ff2_w"] + p[pre + "ff2_b"]
            cache.layers.append((a, ln1, q, k, v, att, ctx, a2, ln2, z, cdf, g))
            peak = max(peak, float(np.abs(h).max()), float(np.abs(z).max()), float(np.abs(s).max()))
        hf, cache.lnf = _ln_fwd(h, p["lnf_g"], p["lnf_b"])
        cache.hf = hf
        out = hf @ p["out_w"] + p["out_b"]
        cache.max_abs = max(peak, float(np.abs(out).max()))
        return out, cache

    def forward(self, x_t, x_h, t, return_cache=False):
        """Predict the vector field for one grid ``(N, F)`` or a batch ``(B, N, F)``."""
        x_t, x_h, t, single = self._inputs(x_t, x_h, t)
        self.n_forward += 1
        out, cache = self._forward(x_t, x_h, t)
        if single:
            out = out[0]
        return (out, cache) if return_cache else out

    def __call__(self, x_t, x_h, t):
        return self.forward(x_t, x_h, t)

    # ------------------------------------------------------------------
    def _backward(self, dout, cache: ForwardCache) -> dict:
        p, cfg = self.params, self.cfg
        grads = {}
        grads["out_w"] = _wgrad(cache.hf, dout)
        grads["out_b"] = dout.sum((0, 1))
        dh, grads["lnf_g"], grads["lnf_b"] = _ln_bwd(dout @ p["out_w"].T, cache.lnf)
        scale = 1.0 / math.sqrt(cfg.model_dim // cfg.heads)
        for i in reversed(range(cfg.layers)):
            pre = f"l{i}."
            a, ln1, q, k, v, att, ctx, a2, ln2, z, cdf, g = cache.layers[i]
            # feed-forward branch
            grads[pre + "ff2_w"] = _wgrad(g, dh)
            grads[pre + "ff2_b"] = dh.sum((0, 1))
            dz = (dh @ p[pre + "ff2_w"].T) * _gelu_grad(z, cdf)
            grads[pre + "ff1_w"] = _wgrad(a2, dz)
            grads[pre + "ff1_b"] = dz.sum((0, 1))
            da2 = dz @ p[pre + "ff1_w"].T
            dx, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _ln_bwd(da2, ln2)
            dh = dh + dx
            # attention branch
            grads[pre + "o_w"] = _wgrad(ctx, dh)
            grads[pre + "o_b"] = dh.sum((0, 1))
            dctx = _split(dh @ p[pre + "o_w"].T, cfg.heads)
            datt = dctx @ v.transpose(0, 1, 3, 2)
            dv = att.transpose(0, 1, 3, 2) @ dctx
            ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
            dq = ds @ k
            dk = ds.transpose(0, 1, 3, 2) @ q
            da = np.zeros_like(a)
            for m, dm in (("q", dq), ("k", dk), ("v", dv)):
                dm = _merge(dm)
                grads[pre + m + "_w"] = _wgrad(a, dm)
                grads[pre + m + "_b"] = dm.sum((0, 1))
                da += dm @ p[pre + m + "_w"].T
            dx, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _ln_bwd(da, ln1)
            dh = dh + dx
            # flow-step conditioning
            dc = dh.sum(1)
            grads[pre + "time_w"] = cache.temb.T @ dc
            grads[pre + "time_b"] = dc.sum(0)
        grads["in_w"] = _wgrad(cache.x_in, dh)
        grads["in_b"] = dh.sum((0, 1))
        return grads

    def loss_and_grad(self, x_t, x_h, t, u_target, diagnostics=None):
        """Mean-squared CFM loss and its exact gradient for every parameter."""
        x_t, x_h, t, _ = self._inputs(x_t, x_h, t)
        u = np.asarray(u_target)
        if u.ndim == 2:
            u = u[None]
        if u.shape != x_t.shape:
            raise DomainError(f"target {u.shape} does not match input {x_t.shape}")
        self.n_forward += 1
        # overflow surfaces as a non-finite loss below
        with np.errstate(over="ignore", invalid="ignore"):
            out, cache = self._forward(x_t, x_h, t)
            resid = out - u.astype(out.dtype)
            loss = float(np.mean(resid.astype(np.float64) ** 2))
        if not math.isfinite(loss):
            info = {"t": t.tolist(), "max_activation": cache.max_abs}
            info.update(diagnostics or {})
            raise TrainingError("non-finite training loss", info)
        grads = self._backward(resid * (2.0 / resid.size), cache)
        return loss, grads


# --------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        w = params[name]
        g = g.astype(w.dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        w -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(w.dtype, copy=False)
    return params, state


# --------------------------------------------------------------------------
# checkpoint codec

def _pack_tensors(tensors: dict) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensors(self) -> dict:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (klen,) = self.unpack("<H")
            name = self.take(klen).decode("utf-8")
            (rank,) = self.unpack("<B")
            shape = self.unpack(f"<{rank}I") if rank else ()
            n = int(np.prod(shape)) if rank else 1
            out[name] = np.frombuffer(self.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        return out


def save_checkpoint(path, est: VectorFieldEstimator, kind: PathKind, sigma_min: float,
                    state: AdamState | None = None, meta: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON config block, path kind, tensors, Adam section."""
    block = json.dumps({"estimator": asdict(est.cfg), "sigma_min": sigma_min,
                        "meta": meta or {}}, sort_keys=True).encode("utf-8")
    tag = PathKind(kind).value.encode("ascii")
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION),
             struct.pack("<I", len(block)), block,
             struct.pack("<B", len(tag)), tag,
             _pack_tensors(est.params)]
    if state is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<Q", state.step))
        parts.append(struct.pack("<ddd", state.beta1, state.beta2, state.eps))
        moments = {f"m/{k}": v for k, v in state.m.items()}
        moments.update({f"v/{k}": v for k, v in state.v.items()})
        parts.append(_pack_tensors(moments))
    Path(path).write_bytes(b"".join(parts))


@dataclass
class Checkpoint:
    estimator: VectorFieldEstimator
    kind: PathKind
    sigma_min: float
    state: AdamState | None
    meta: dict


def load_checkpoint(path, expected: EstimatorConfig | None = None) -> Checkpoint:
    """Inverse of :func:`save_checkpoint`.

    Raises :class:`FormatError` on bad magic, version or truncation and
    :class:`ConfigMismatchError` when ``expected`` differs from the stored
    configuration.
    """
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, this build reads {CKPT_VERSION}")
    (blen,) = r.unpack("<I")
    try:
        block = json.loads(r.take(blen).decode("utf-8"))
        cfg = EstimatorConfig(**block["estimator"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt config block ({exc})") from None
    if expected is not None:
        diff = {k: (getattr(cfg, k), getattr(expected, k))
                for k in asdict(cfg) if getattr(cfg, k) != getattr(expected, k)}
        if diff:
            raise ConfigMismatchError(f"{path}: checkpoint config differs: {diff}")
    (tlen,) = r.unpack("<B")
    kind = PathKind.parse(r.take(tlen).decode("ascii"))
    params = r.tensors()
    (has_state,) = r.unpack("<B")
    state = None
    if has_state:
        (step,) = r.unpack("<Q")
        b1, b2, eps = r.unpack("<ddd")
        moments = r.tensors()
        state = AdamState(step=step, beta1=b1, beta2=b2, eps=eps)
        for k, arr in moments.items():
            (state.m if k.startswith("m/") else state.v)[k[2:]] = arr
    if r.pos != len(r.data):
        raise FormatError(f"{path}: trailing bytes after checkpoint")
    est = VectorFieldEstimator(cfg, params)
    return Checkpoint(est, kind, float(block["sigma_min"]), state, block.get("meta", {}))
