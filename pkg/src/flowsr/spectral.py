"""STFT/ISTFT, mel analysis, band-bin arithmetic and a deterministic
mel-to-waveform synthesizer (mel inversion followed by Griffin-Lim)."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioSignal
from .errors import DomainError, FormatError

MEL_FLOOR = 1e-5
SPEC_MAGIC = b"FHSP"
SPEC_VERSION = 1


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 1024
    hop: int = 256
    n_fft: int = 1024

    def __post_init__(self):
        if min(self.window_size, self.hop, self.n_fft) <= 0:
            raise DomainError("STFT sizes must be positive")
        if self.window_size > self.n_fft:
            raise DomainError("window_size must not exceed n_fft")
        if self.hop >= self.window_size:
            raise DomainError("hop must be smaller than window_size")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def window(self) -> np.ndarray:
        """Periodic Hann window centred in an ``n_fft`` frame."""
        n = np.arange(self.window_size)
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_size)
        lead = (self.n_fft - self.window_size) // 2
        return np.pad(w, (lead, self.n_fft - self.window_size - lead))

    def n_frames(self, n_samples: int) -> int:
        return -(-n_samples // self.hop)


@dataclass
class MelFilterbank:
    """Triangular filters, shape ``(F, n_fft // 2 + 1)``."""

    matrix: np.ndarray
    fmin: float
    fmax: float
    sample_rate: int

    @property
    def n_mels(self) -> int:
        return self.matrix.shape[0]


def _samples(x) -> np.ndarray:
    if isinstance(x, AudioSignal):
        return x.samples
    return np.asarray(x, dtype=np.float64).reshape(-1)


def stft(x, cfg: StftConfig) -> np.ndarray:
    """Centred, reflect-padded STFT with ``ceil(len / hop)`` frames.

    Frame ``i`` is centred on sample ``i * hop``. Returns a complex array
    of shape ``(N, n_fft // 2 + 1)``.
    """
    x = _samples(x)
    if x.size == 0:
        raise DomainError("cannot analyse an empty signal")
    pad = cfg.n_fft // 2
    mode = "reflect" if x.size > 1 else "edge"
    padded = np.pad(x, (pad, pad), mode=mode)
    n = cfg.n_frames(x.size)
    frames = sliding_window_view(padded, cfg.n_fft)[:: cfg.hop][:n]
    return np.fft.rfft(frames * cfg.window(), axis=-1)


def istft(spec: np.ndarray, cfg: StftConfig, out_len: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Samples whose summed squared window falls below 1e-8 are set to 0.
    """
    spec = np.asarray(spec)
    n = spec.shape[0]
    if out_len is None:
        out_len = n * cfg.hop
    win = cfg.window()
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=-1) * win
    total = (n - 1) * cfg.hop + cfg.n_fft
    buf = np.zeros(total)
    wsum = np.zeros(total)
    w2 = win * win
    for i in range(n):
        s = i * cfg.hop
        buf[s:s + cfg.n_fft] += frames[i]
        wsum[s:s + cfg.n_fft] += w2
    ok = wsum > 1e-8
    buf[ok] /= wsum[ok]
    buf[~ok] = 0.0
    pad = cfg.n_fft // 2
    y = buf[pad:pad + out_len]
    if y.shape[0] < out_len:
        y = np.pad(y, (0, out_len - y.shape[0]))
    return y


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, cfg: StftConfig, sample_rate, fmin=0.0, fmax=None) -> MelFilterbank:
    """HTK-scale triangular filterbank.

    Centres are uniform in mel between ``fmin`` and ``fmax``. A triangle is
    never narrower than one FFT bin on either side, so every filter touches
    at least one bin even when the mel spacing is finer than the bin grid.
    """
    if fmax is None:
        fmax = sample_rate / 2
    if n_mels < 2:
        raise DomainError("need at least two mel filters")
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise DomainError(f"need 0 <= fmin < fmax <= {sample_rate / 2}, got {fmin}, {fmax}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(cfg.n_bins) * sample_rate / cfg.n_fft
    df = sample_rate / cfg.n_fft
    fb = np.zeros((n_mels, cfg.n_bins))
    for m in range(n_mels):
        c = edges[m + 1]
        lo = min(edges[m], c - df)
        hi = max(edges[m + 2], c + df)
        rise = (freqs - lo) / (c - lo)
        fall = (hi - freqs) / (hi - c)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    return MelFilterbank(fb, float(fmin), float(fmax), int(sample_rate))


def to_mel(spec: np.ndarray, fb: MelFilterbank, floor: float = MEL_FLOOR) -> np.ndarray:
    """Natural-log mel magnitudes ``log(max(|spec| @ fb.T, floor))``, shape (N, F)."""
    mag = np.abs(spec)
    if mag.shape[-1] != fb.matrix.shape[1]:
        raise DomainError(f"spectrogram has {mag.shape[-1]} bins, filterbank expects {fb.matrix.shape[1]}")
    return np.log(np.maximum(mag @ fb.matrix.T, floor))


def mel_of(x, cfg: StftConfig, fb: MelFilterbank, floor: float = MEL_FLOOR) -> np.ndarray:
    return to_mel(stft(x, cfg), fb, floor)


def invert_mel_magnitudes(mel_mag: np.ndarray, fb: MelFilterbank, iters: int = 50) -> np.ndarray:
    """Nonnegative least-squares estimate of linear magnitudes from mel magnitudes.

    Multiplicative updates keep every iterate nonnegative; the start point
    is the filter-weighted average of the mel bands covering each bin. Bins
    no filter covers copy their nearest covered neighbour.
    """
    a = fb.matrix
    colsum = a.sum(axis=0)
    covered = colsum > 0
    s = (mel_mag @ a) / np.where(covered, colsum, 1.0)
    gram = a.T @ a
    target = mel_mag @ a
    tiny = 1e-30
    for _ in range(iters):
        s *= target / (s @ gram + tiny)
    if not covered.all():
        idx = np.flatnonzero(covered)
        nearest = idx[np.abs(np.arange(a.shape[1])[:, None] - idx[None, :]).argmin(axis=1)]
        s = s[:, nearest]
    return s


def griffin_lim(mag: np.ndarray, cfg: StftConfig, iters: int = 32, out_len=None,
                momentum: float = 0.99) -> np.ndarray:
    """Fast Griffin-Lim phase recovery from zero initial phase.

    Deterministic: no random phase initialisation.
    """
    if out_len is None:
        out_len = mag.shape[0] * cfg.hop
    phase = np.ones_like(mag, dtype=np.complex128)
    prev = np.zeros_like(phase)
    for _ in range(iters):
        rebuilt = stft(istft(mag * phase, cfg, out_len), cfg)
        accel = rebuilt + momentum * (rebuilt - prev) if momentum else rebuilt
        prev = rebuilt
        norm = np.abs(accel)
        phase = np.where(norm > 1e-16, accel / np.maximum(norm, 1e-16), 1.0)
    return istft(mag * phase, cfg, out_len)


def mel_to_waveform(mel: np.ndarray, fb: MelFilterbank, cfg: StftConfig, gl_iters: int = 32,
                    out_len: int | None = None) -> AudioSignal:
    """Reference synthesizer: exp, NNLS mel inversion, Griffin-Lim, ISTFT."""
    mag = invert_mel_magnitudes(np.exp(np.asarray(mel, dtype=np.float64)), fb)
    y = griffin_lim(mag, cfg, gl_iters, out_len)
    return AudioSignal(y, fb.sample_rate)


def cutoff_bin(cutoff_hz, cfg: StftConfig, sample_rate) -> int:
    """Index of the last FFT bin at or below ``cutoff_hz``."""
    if not 0 < cutoff_hz <= sample_rate / 2:
        raise DomainError(f"cutoff {cutoff_hz} Hz outside (0, {sample_rate / 2}]")
    return int(math.floor(cutoff_hz * cfg.n_fft / sample_rate))


# --------------------------------------------------------------------------
# Spectrogram dump: "FHSP", version u32, N u32, bins u32, then f32 LE rows.

def write_spectrogram(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise DomainError("spectrogram dump expects a 2-D grid")
    header = SPEC_MAGIC + struct.pack("<III", SPEC_VERSION, grid.shape[0], grid.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(grid, dtype="<f4").tobytes())


def read_spectrogram(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != SPEC_MAGIC:
        raise FormatError(f"{path}: not a spectrogram dump")
    version, n, bins = struct.unpack("<III", data[4:16])
    if version != SPEC_VERSION:
        raise FormatError(f"{path}: unsupported spectrogram version {version}")
    body = data[16:]
    if len(body) != 4 * n * bins:
        raise FormatError(f"{path}: expected {n}x{bins} floats, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(n, bins).astype(np.float32)
