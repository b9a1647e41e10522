"""Fixed-step ODE solvers and the super-resolution inference chain."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioSignal, resample
from .cfm import PathKind, PathParams
from .errors import DomainError, IntegrationError
from .spectral import MelFilterbank, StftConfig, mel_of, mel_to_waveform


class Method(str, enum.Enum):
    EULER = "euler"
    MIDPOINT = "midpoint"


@dataclass(frozen=True)
class SolverConfig:
    """``steps`` solver steps; Euler spends one evaluation per step, midpoint two."""

    method: Method = Method.EULER
    steps: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.steps < 1:
            raise DomainError("solver needs at least one step")

    @property
    def nfe(self) -> int:
        return self.steps * (2 if self.method is Method.MIDPOINT else 1)


class CountingField:
    """Wrap ``v_fn(x, t)`` and count evaluations."""

    def __init__(self, v_fn):
        self.v_fn = v_fn
        self.calls = 0

    def __call__(self, x, t):
        self.calls += 1
        return self.v_fn(x, t)


def prior_draw(kind: PathKind, x_h: np.ndarray, p: PathParams, rng: np.random.Generator,
               noise: np.ndarray | None = None) -> np.ndarray:
    """Draw the ODE start point from the path's prior.

    ``noise`` replaces the standard-normal draw (diagnostics only).
    """
    x_h = np.asarray(x_h, dtype=np.float64)
    e = rng.standard_normal(x_h.shape) if noise is None else np.asarray(noise, dtype=np.float64)
    if kind is PathKind.STANDARD:
        return e
    if kind is PathKind.CONSTANT_SIGMA:
        return x_h + p.sigma_min * e
    return x_h + e


def _check(x, t):
    if not np.all(np.isfinite(x)):
        raise IntegrationError(f"non-finite ODE state at t={t:.6g}")


def euler_integrate(v_fn, x_start, nfe: int):
    """Forward Euler on ``[0, 1]`` with ``nfe`` left-endpoint steps."""
    if nfe < 1:
        raise DomainError("Euler integration needs nfe >= 1")
    tau = 1.0 / nfe
    x = np.asarray(x_start, dtype=np.float64)
    for i in range(nfe):
        t = i * tau
        x = x + tau * np.asarray(v_fn(x, t), dtype=np.float64)
        _check(x, t + tau)
    return x


def midpoint_integrate(v_fn, x_start, steps: int):
    """Explicit midpoint rule on ``[0, 1]``; two evaluations per step."""
    if steps < 1:
        raise DomainError("midpoint integration needs steps >= 1")
    tau = 1.0 / steps
    x = np.asarray(x_start, dtype=np.float64)
    for i in range(steps):
        t = i * tau
        half = x + 0.5 * tau * np.asarray(v_fn(x, t), dtype=np.float64)
        _check(half, t + 0.5 * tau)
        x = x + tau * np.asarray(v_fn(half, t + 0.5 * tau), dtype=np.float64)
        _check(x, t + tau)
    return x


def integrate(v_fn, x_start, solver: SolverConfig):
    if solver.method is Method.EULER:
        return euler_integrate(v_fn, x_start, solver.steps)
    return midpoint_integrate(v_fn, x_start, solver.steps)


@dataclass
class Resolved:
    mel: np.ndarray
    audio: AudioSignal
    x_h: AudioSignal
    nfe: int


def super_resolve(estimator, x_l: AudioSignal, target_rate: int, solver: SolverConfig,
                  kind: PathKind, p: PathParams, cfg: StftConfig, fb: MelFilterbank,
                  gl_iters: int = 32, rng: np.random.Generator | None = None) -> Resolved:
    """Upsample, analyse, integrate the learned field from the prior, synthesize.

    ``estimator`` is called as ``estimator(x_t, X_h, t)`` on single grids.
    """
    if x_l.sample_rate >= target_rate:
        raise DomainError(f"input rate {x_l.sample_rate} must be below target {target_rate}")
    if fb.sample_rate != target_rate:
        raise DomainError("filterbank was built for a different sample rate")
    x_h = resample(x_l, target_rate)
    cond = mel_of(x_h, cfg, fb)
    if rng is None:
        rng = np.random.default_rng(solver.seed)
    x_start = prior_draw(kind, cond, p, rng)
    field = CountingField(lambda x, t: estimator(x, cond, t))
    mel = integrate(field, x_start, solver)
    audio = mel_to_waveform(mel, fb, cfg, gl_iters, out_len=len(x_h))
    return Resolved(mel, audio, x_h, field.calls)
