import numpy as np
import pytest

from flowsr.audio_io import AudioSignal, ChebyshevSpec, resample, simulate_lr
from flowsr.errors import DomainError
from flowsr.metrics import lsd_report
from flowsr.postproc import replace_lowband, splice_weights
from flowsr.spectral import StftConfig, cutoff_bin, stft

CFG = StftConfig(512, 128, 512)
SR = 16000


def _sines(freqs, amps, n=SR, rate=SR):
    t = np.arange(n) / rate
    x = sum(a * np.sin(2 * np.pi * f * t + f) for f, a in zip(freqs, amps))
    # smooth envelope keeps the signal band-limited at the edges
    return x * np.hanning(n)


class TestWeights:
    def test_hard_split(self):
        w = splice_weights(1025, 341)
        assert np.all(w[:342] == 1) and np.all(w[342:] == 0)

    def test_paper_scale_boundary(self):
        k = cutoff_bin(8000, StftConfig(2048, 512, 2048), 48000)
        w = splice_weights(1025, k)
        assert (k, w[341], w[342]) == (341, 1.0, 0.0)

    def test_crossfade(self):
        w = splice_weights(20, 5, crossfade_bins=3)
        np.testing.assert_allclose(w[:9], [1, 1, 1, 1, 1, 1, 0.75, 0.5, 0.25])
        assert not np.any(w[9:])

    def test_crossfade_clipped_at_top(self):
        w = splice_weights(8, 6, crossfade_bins=5)
        np.testing.assert_allclose(w, [1, 1, 1, 1, 1, 1, 1, 5 / 6])


class TestReplaceLowband:
    def test_idempotent_when_input_is_low_band(self):
        low = _sines([300, 700, 1200], [0.3, 0.2, 0.1])
        high = _sines([5000, 6500], [0.05, 0.03])
        y_bar = AudioSignal(low + high, SR)
        x_l = resample(AudioSignal(low, SR), 8000)
        y_hat = replace_lowband(y_bar, x_l, 4000, CFG)
        assert np.max(np.abs(y_hat.samples - y_bar.samples)) < 1e-5

    def test_low_bins_follow_input(self):
        # generated content kept clear of the cutoff by more than the window's leakage reach
        x_l = resample(AudioSignal(_sines([220, 900, 1800, 3100], [0.3, 0.2, 0.1, 0.05]), SR), 8000)
        y_bar = AudioSignal(_sines([400, 1500, 5200, 7000], [0.4, 0.3, 0.1, 0.05]), SR)
        y_hat = replace_lowband(y_bar, x_l, 4000, CFG)
        k = cutoff_bin(4000, CFG, SR)
        a = stft(y_hat, CFG)[:, :k + 1]
        b = stft(resample(x_l, SR), CFG)[:, :k + 1]
        assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-3
        hi_a = stft(y_hat, CFG)[:, k + 10:]
        hi_b = stft(y_bar, CFG)[:, k + 10:]
        assert np.linalg.norm(hi_a - hi_b) / np.linalg.norm(hi_b) < 1e-3

    def test_low_band_never_worse(self):
        rng = np.random.default_rng(0)
        y = AudioSignal(_sines([150, 450, 900, 1700, 2600, 4400, 6100], [0.3, 0.2, 0.2, 0.1, 0.1, 0.05, 0.03]), SR)
        for l in (4000, 8000):
            x_l, _ = simulate_lr(y, l, ChebyshevSpec(8, 0.05, l / 2))
            y_bar = AudioSignal(y.samples + 0.05 * rng.standard_normal(len(y)), SR)
            with_post = lsd_report(y, replace_lowband(y_bar, x_l, l / 2, CFG), l / 2, CFG)
            without = lsd_report(y, y_bar, l / 2, CFG)
            assert with_post.lsd_lf <= without.lsd_lf

    def test_length_and_rate(self):
        y_bar = AudioSignal(np.zeros(SR), SR)
        x_l = AudioSignal(np.zeros(8000 - 10), 8000)
        out = replace_lowband(y_bar, x_l, 4000, CFG)
        assert (len(out), out.sample_rate) == (SR, SR)

    def test_misaligned(self):
        with pytest.raises(DomainError):
            replace_lowband(AudioSignal(np.zeros(SR), SR), AudioSignal(np.zeros(4000), 8000), 4000, CFG)

    def test_bad_cutoff(self):
        with pytest.raises(DomainError):
            replace_lowband(AudioSignal(np.zeros(SR), SR), AudioSignal(np.zeros(8000), 8000), 9000, CFG)
