"""Low-band replacement: keep the generated high band, restore the input's low band."""

from __future__ import annotations

import numpy as np

from .audio_io import AudioSignal, resample
from .errors import DomainError
from .spectral import StftConfig, cutoff_bin, istft, stft


def splice_weights(n_bins: int, k_cut: int, crossfade_bins: int = 0) -> np.ndarray:
    """Per-bin weight of the input spectrum: 1 up to ``k_cut``, then a linear
    ramp to 0 over ``crossfade_bins`` bins."""
    w = np.zeros(n_bins)
    w[: k_cut + 1] = 1.0
    if crossfade_bins > 0:
        ramp = 1.0 - np.arange(1, crossfade_bins + 1) / (crossfade_bins + 1)
        end = min(n_bins, k_cut + 1 + crossfade_bins)
        w[k_cut + 1:end] = ramp[: end - k_cut - 1]
    return w


def replace_lowband(y_bar: AudioSignal, x_l: AudioSignal, cutoff_hz, cfg: StftConfig,
                    crossfade_bins: int = 0) -> AudioSignal:
    """Take STFT bins ``k <= cutoff_bin(cutoff_hz)`` from the upsampled input
    and the rest from ``y_bar``."""
    h = y_bar.sample_rate
    if not 0 < cutoff_hz < h / 2:
        raise DomainError(f"cutoff {cutoff_hz} Hz outside (0, {h / 2})")
    x_h = resample(x_l, h).samples
    n = len(y_bar)
    if abs(x_h.shape[0] - n) > cfg.hop:
        raise DomainError(f"input ({x_h.shape[0]} samples at {h} Hz) and output ({n}) do not align")
    x_h = np.pad(x_h[:n], (0, max(0, n - x_h.shape[0])))
    gen = stft(y_bar, cfg)
    ref = stft(x_h, cfg)
    w = splice_weights(cfg.n_bins, cutoff_bin(cutoff_hz, cfg, h), crossfade_bins)
    return AudioSignal(istft(w * ref + (1.0 - w) * gen, cfg, n), h)
