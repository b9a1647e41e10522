"""Seeded synthetic speech-like corpus.

Each utterance is a handful of harmonics of a slowly vibrating f0 with a
syllable-rate amplitude envelope over white noise at -40 dBFS. At least
one partial is placed above the highest configured input Nyquist so that
super-resolution has something to recover.
"""

from __future__ import annotations

import numpy as np

from ..audio_io import AudioSignal
from ..errors import DataError

NOISE_FLOOR_DB = -40.0
MIN_HIGH_BAND_RATIO = 0.01


def high_band_ratio(x: np.ndarray, sample_rate: int, cutoff_hz: float) -> float:
    """Fraction of signal energy strictly above ``cutoff_hz``."""
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, 1.0 / sample_rate)
    return float(power[freqs > cutoff_hz].sum() / max(power.sum(), 1e-300))


def _draw(rng: np.random.Generator, sample_rate: int, n: int, hf_cutoff: float) -> np.ndarray:
    t = np.arange(n) / sample_rate
    nyq = sample_rate / 2
    f0 = rng.uniform(80.0, 300.0)
    fm_depth = rng.uniform(0.01, 0.05)
    fm_rate = rng.uniform(2.0, 6.0)
    f0_t = f0 * (1.0 + fm_depth * np.sin(2 * np.pi * fm_rate * t + rng.uniform(0, 2 * np.pi)))
    cycles = np.cumsum(f0_t) / sample_rate

    n_harm = int(rng.integers(3, 9))
    k_max = int(0.92 * nyq / (f0 * (1 + fm_depth)))
    k_hf = int(np.ceil(1.05 * hf_cutoff / (f0 * (1 - fm_depth))))
    n_high = max(1, n_harm // 3)
    high = rng.choice(np.arange(k_hf, k_max + 1), size=n_high, replace=False)
    low = rng.choice(np.arange(2, k_hf), size=n_harm - n_high - 1, replace=False)
    ks = np.sort(np.concatenate([[1], low, high]))

    decay = rng.uniform(0.5, 2.0)
    y = np.zeros(n)
    for k in ks:
        amp = np.exp(-decay * k * f0 / nyq) * rng.uniform(0.5, 1.0)
        y += amp * np.sin(2 * np.pi * k * cycles + rng.uniform(0, 2 * np.pi))

    am_rate = rng.uniform(3.0, 8.0)
    am_depth = rng.uniform(0.3, 0.8)
    env = 1.0 + am_depth * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    ramp = min(n // 2, int(0.02 * sample_rate))
    fade = np.ones(n)
    fade[:ramp] = np.linspace(0.0, 1.0, ramp)
    fade[n - ramp:] = np.linspace(1.0, 0.0, ramp)
    y *= env * fade
    y *= 0.5 / np.max(np.abs(y))

    y += rng.standard_normal(n) * 10.0 ** (NOISE_FLOOR_DB / 20.0)
    return y


def synth_utterance(seed: int, sample_rate: int, seconds: float, low_rates) -> AudioSignal:
    """One utterance, reproducible from ``seed``.

    Draws are repeated (same stream) until the energy above every
    ``l / 2`` for ``l`` in ``low_rates`` exceeds 1% of the total.
    """
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    hf_cutoff = max(low_rates) / 2
    for _ in range(100):
        y = _draw(rng, sample_rate, n, hf_cutoff)
        if high_band_ratio(y, sample_rate, hf_cutoff) > MIN_HIGH_BAND_RATIO:
            return AudioSignal(y, sample_rate)
    raise DataError("could not draw an utterance with enough high-band energy")
