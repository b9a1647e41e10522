"""Waveform I/O, Chebyshev Type I low-pass design, resampling and
low-resolution input simulation."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import DomainError, FormatError, UnsupportedFormatError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# Kaiser-windowed sinc resampler: 64 taps per polyphase branch.
RESAMPLE_HALF_TAPS = 32
RESAMPLE_BETA = 8.6


@dataclass
class AudioSignal:
    """Mono time-domain samples with their sampling rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise DomainError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("audio samples must be finite")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class ChebyshevSpec:
    order: int
    ripple_db: float
    cutoff_hz: float

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise DomainError(f"filter order must be a positive integer, got {self.order}")
        if not self.ripple_db > 0:
            raise DomainError(f"ripple must be positive, got {self.ripple_db} dB")
        if not self.cutoff_hz > 0:
            raise DomainError(f"cutoff must be positive, got {self.cutoff_hz} Hz")


@dataclass
class IirSections:
    """Cascade of biquads, one row ``[b0, b1, b2, 1, a1, a2]`` per section."""

    sos: np.ndarray

    def __post_init__(self):
        self.sos = np.atleast_2d(np.asarray(self.sos, dtype=np.float64))
        if self.sos.shape[1] != 6:
            raise DomainError("second-order sections need 6 coefficients each")

    def __len__(self):
        return self.sos.shape[0]

    def poles(self) -> list[np.ndarray]:
        """Roots of each section's denominator (first-order sections give one root)."""
        out = []
        for a in self.sos[:, 3:]:
            coeffs = np.trim_zeros(a, "b")
            out.append(np.roots(coeffs) if coeffs.size > 1 else np.zeros(0))
        return out

    def is_stable(self) -> bool:
        return all(np.all(np.abs(p) < 1.0) for p in self.poles())

    def response(self, freqs_hz, sample_rate) -> np.ndarray:
        """Complex frequency response of the cascade at ``freqs_hz``."""
        w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / sample_rate
        zinv = np.exp(-1j * w)
        h = np.ones_like(zinv)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h *= (b0 + b1 * zinv + b2 * zinv**2) / (a0 + a1 * zinv + a2 * zinv**2)
        return h


# --------------------------------------------------------------------------
# WAV codec

def _parse_fmt(chunk: bytes):
    if len(chunk) < 16:
        raise FormatError("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(chunk) < 40:
            raise FormatError("extensible fmt chunk too short")
        tag = struct.unpack("<H", chunk[24:26])[0]
    return tag, channels, rate, block_align, bits


def read_wav(path) -> AudioSignal:
    """Read a RIFF/WAVE file and return its first channel scaled to [-1, 1].

    Supports PCM16, PCM24 and IEEE float32. Any other encoding raises
    :class:`UnsupportedFormatError`; structural problems raise
    :class:`FormatError`.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a little-endian RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            if len(body) < size:
                raise FormatError(f"{path}: truncated data chunk")
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise FormatError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise FormatError(f"{path}: invalid channel count or sample rate")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2", count=len(payload) // 2)
        x = raw.astype(np.float64) / 32768.0
    elif tag == WAVE_FORMAT_PCM and bits == 24:
        n = len(payload) // 3
        b = np.frombuffer(payload, dtype=np.uint8, count=3 * n).reshape(n, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(payload, dtype="<f4", count=len(payload) // 4).astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported encoding (format tag {tag}, {bits} bit)")

    frames = x.shape[0] // channels
    x = x[: frames * channels].reshape(frames, channels)[:, 0]
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{path}: non-finite samples")
    return AudioSignal(x.copy(), rate)


def write_wav(sig: AudioSignal, path, bit_depth="16") -> None:
    """Write a mono WAV; samples are clipped to [-1, 1] first.

    ``bit_depth`` is one of ``16``, ``24`` or ``"32f"``.
    """
    if len(sig) == 0:
        raise DomainError("cannot write an empty signal")
    x = np.clip(sig.samples, -1.0, 1.0)
    depth = str(bit_depth)
    if depth == "16":
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        tag, bits, payload = WAVE_FORMAT_PCM, 16, q.tobytes()
    elif depth == "24":
        q = np.clip(np.round(x * float(1 << 23)), -(1 << 23), (1 << 23) - 1).astype(np.int32)
        b = q.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3]
        tag, bits, payload = WAVE_FORMAT_PCM, 24, b.tobytes()
    elif depth in ("32f", "32"):
        tag, bits, payload = WAVE_FORMAT_IEEE_FLOAT, 32, x.astype("<f4").tobytes()
    else:
        raise DomainError(f"unsupported bit depth {bit_depth!r}")

    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, sig.sample_rate, sig.sample_rate * block, block, bits)
    pad = b"\x00" if len(payload) & 1 else b""
    riff_size = 4 + (8 + len(fmt)) + (8 + len(payload) + len(pad))
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", riff_size) + b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt)) + fmt)
        fh.write(b"data" + struct.pack("<I", len(payload)) + payload + pad)


# --------------------------------------------------------------------------
# Chebyshev Type I design

def cheby1_analog_poles(order: int, ripple_db: float) -> np.ndarray:
    """Poles of the normalized (1 rad/s) analog Chebyshev I prototype."""
    eps = math.sqrt(10.0 ** (ripple_db / 10.0) - 1.0)
    mu = math.asinh(1.0 / eps) / order
    k = np.arange(1, order + 1)
    theta = np.pi * (2 * k - 1) / (2 * order)
    return -np.sinh(mu) * np.sin(theta) + 1j * np.cosh(mu) * np.cos(theta)


def design_cheby1(spec: ChebyshevSpec, sample_rate) -> IirSections:
    """Digital Chebyshev Type I low-pass as second-order sections.

    The analog prototype is scaled to the pre-warped cutoff and mapped with
    the bilinear transform; all zeros land on z = -1. Each section is
    normalized to unit DC gain and the overall DC gain (1 for odd orders,
    ``1/sqrt(1+eps^2)`` for even) is applied to the first section.
    """
    if not spec.cutoff_hz < sample_rate / 2:
        raise DomainError(f"cutoff {spec.cutoff_hz} Hz must lie below Nyquist {sample_rate / 2} Hz")
    if not 1 <= spec.order <= 12:
        raise DomainError(f"filter order must be in [1, 12], got {spec.order}")

    fs2 = 2.0 * sample_rate
    wc = fs2 * math.tan(math.pi * spec.cutoff_hz / sample_rate)
    poles = cheby1_analog_poles(spec.order, spec.ripple_db) * wc
    zpoles = (fs2 + poles) / (fs2 - poles)

    sections = []
    # Poles k and order-1-k are conjugates; the first half sit in the upper plane.
    for p in zpoles[: spec.order // 2]:
        a = np.array([1.0, -2.0 * p.real, abs(p) ** 2])
        b = np.array([1.0, 2.0, 1.0]) * a.sum() / 4.0
        sections.append(np.concatenate([b, a]))
    if spec.order % 2:
        p = zpoles[spec.order // 2].real
        a = np.array([1.0, -p, 0.0])
        b = np.array([1.0, 1.0, 0.0]) * (1.0 - p) / 2.0
        sections.append(np.concatenate([b, a]))

    sos = np.array(sections)
    if spec.order % 2 == 0:
        eps2 = 10.0 ** (spec.ripple_db / 10.0) - 1.0
        sos[0, :3] /= math.sqrt(1.0 + eps2)
    return IirSections(sos)


def lowpass_filter(sig: AudioSignal, sections: IirSections) -> AudioSignal:
    """Causal cascade filtering with zero initial state."""
    y = sps.sosfilt(sections.sos, sig.samples)
    return AudioSignal(y, sig.sample_rate)


# --------------------------------------------------------------------------
# Resampling

def _resample_kernel(up: int, down: int) -> tuple[np.ndarray, int]:
    m = max(up, down)
    half = RESAMPLE_HALF_TAPS * m
    n = np.arange(-half, half + 1)
    h = (up / m) * np.sinc(n / m) * np.kaiser(2 * half + 1, RESAMPLE_BETA)
    # Shift the group delay onto the output grid.
    lead = (-half) % down
    return np.concatenate([np.zeros(lead), h]), (half + lead) // down


def resample(sig: AudioSignal, target_rate) -> AudioSignal:
    """Rational polyphase resampling with a Kaiser-windowed sinc kernel.

    Output length is ``round(len * target / source)`` with halves rounded up; the kernel is
    zero-phase, so sample ``k`` of the output sits at time ``k / target``.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise DomainError(f"target rate must be positive, got {target_rate}")
    src = sig.sample_rate
    if target_rate == src:
        return AudioSignal(sig.samples.copy(), src)
    g = math.gcd(src, target_rate)
    up, down = target_rate // g, src // g
    n_in = len(sig)
    n_out = (2 * n_in * up + down) // (2 * down)
    if n_in == 0:
        return AudioSignal(np.zeros(0), target_rate)
    h, offset = _resample_kernel(up, down)
    y = sps.upfirdn(h, sig.samples, up, down)[offset:offset + n_out]
    if y.shape[0] < n_out:
        y = np.pad(y, (0, n_out - y.shape[0]))
    return AudioSignal(y, target_rate)


def simulate_lr(y_h: AudioSignal, l, spec: ChebyshevSpec) -> tuple[AudioSignal, AudioSignal]:
    """Degrade ``y_h`` to rate ``l`` and bring it back to the original rate.

    Returns ``(x_l, x_h)``: the low-rate signal and its upsampled copy.
    """
    l = int(l)
    h = y_h.sample_rate
    if l >= h:
        raise DomainError(f"low rate {l} must be below the signal rate {h}")
    if not math.isclose(spec.cutoff_hz, l / 2, rel_tol=1e-9):
        raise DomainError(f"filter cutoff {spec.cutoff_hz} Hz must equal l/2 = {l / 2} Hz")
    # Cutoff at exactly Nyquist of the low rate is below Nyquist of y_h since l < h.
    filtered = lowpass_filter(y_h, design_cheby1(spec, h))
    x_l = resample(filtered, l)
    x_h = resample(x_l, h)
    return x_l, x_h
