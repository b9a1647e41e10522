"""Log-spectral distance (full band and band-restricted) and real-time factor.

Convention: per frame, ``sqrt(mean_k (log10 |Y_est|^2 - log10 |Y_ref|^2)^2)``
with magnitudes floored at 1e-8, then averaged over frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioSignal
from .errors import DomainError
from .spectral import StftConfig, cutoff_bin, stft

MAG_FLOOR = 1e-8


@dataclass(frozen=True)
class LsdReport:
    lsd: float
    lsd_lf: float
    lsd_hf: float
    cutoff_hz: float


def _log_power_pair(ref: AudioSignal, est: AudioSignal, cfg: StftConfig):
    if ref.sample_rate != est.sample_rate:
        raise DomainError(f"sample rates differ: {ref.sample_rate} vs {est.sample_rate}")
    n = min(len(ref), len(est))
    if n == 0:
        raise DomainError("empty signal")
    lr = np.log10(np.maximum(np.abs(stft(ref.samples[:n], cfg)), MAG_FLOOR) ** 2)
    le = np.log10(np.maximum(np.abs(stft(est.samples[:n], cfg)), MAG_FLOOR) ** 2)
    return lr, le


def lsd_frames(ref: AudioSignal, est: AudioSignal, cfg: StftConfig, bins=None) -> np.ndarray:
    """Per-frame LSD over the selected FFT bins (all bins by default)."""
    lr, le = _log_power_pair(ref, est, cfg)
    d = le - lr
    if bins is not None:
        d = d[:, bins]
        if d.shape[1] == 0:
            raise DomainError("empty frequency band")
    return np.sqrt(np.mean(d * d, axis=1))


def lsd(ref: AudioSignal, est: AudioSignal, cfg: StftConfig) -> float:
    return float(np.mean(lsd_frames(ref, est, cfg)))


def band_bins(f_lo, f_hi, cfg: StftConfig, sample_rate) -> np.ndarray:
    """Indices of FFT bins whose centre frequency lies in ``[f_lo, f_hi]``."""
    if not 0 <= f_lo < f_hi <= sample_rate / 2:
        raise DomainError(f"need 0 <= f_lo < f_hi <= Nyquist, got [{f_lo}, {f_hi}]")
    freqs = np.arange(cfg.n_bins) * sample_rate / cfg.n_fft
    idx = np.flatnonzero((freqs >= f_lo) & (freqs <= f_hi))
    if idx.size == 0:
        raise DomainError(f"no FFT bins in [{f_lo}, {f_hi}] Hz")
    return idx


def lsd_band(ref: AudioSignal, est: AudioSignal, f_lo, f_hi, cfg: StftConfig) -> float:
    return float(np.mean(lsd_frames(ref, est, cfg, band_bins(f_lo, f_hi, cfg, ref.sample_rate))))


def lsd_report(ref: AudioSignal, est: AudioSignal, cutoff_hz, cfg: StftConfig) -> LsdReport:
    """Full-band, low-band ``[0, cutoff]`` and high-band ``(cutoff, Nyquist]`` LSD.

    The split uses :func:`cutoff_bin`, so it matches the post-processing splice.
    """
    k = cutoff_bin(cutoff_hz, cfg, ref.sample_rate)
    if k + 1 >= cfg.n_bins:
        raise DomainError("cutoff leaves no high band")
    lr, le = _log_power_pair(ref, est, cfg)
    d2 = (le - lr) ** 2
    full = np.sqrt(d2.mean(axis=1)).mean()
    lf = np.sqrt(d2[:, : k + 1].mean(axis=1)).mean()
    hf = np.sqrt(d2[:, k + 1:].mean(axis=1)).mean()
    return LsdReport(float(full), float(lf), float(hf), float(cutoff_hz))


def rtf(audio_seconds, wall_seconds) -> float:
    """Real-time factor: processing time over audio duration."""
    if not audio_seconds > 0:
        raise DomainError("audio duration must be positive")
    return wall_seconds / audio_seconds
