"""Conditional Gaussian probability paths and their target vector fields.

Three paths are supported, all Gaussian ``N(mu_t(z), sigma_t^2 I)``:

==================  =============================  ===================  ==============
kind                mean ``mu_t``                  std ``sigma_t``      prior ``p_0``
==================  =============================  ===================  ==============
``standard``        ``t * x1``                     ``1 - (1 - s) t``    ``N(0, I)``
``constant-sigma``  ``t * x1 + (1 - t) * x0``      ``s``                ``N(x0, s^2 I)``
``data-prior``      ``t * x1 + (1 - t) * x0``      ``1 - (1 - s) t``    ``N(x0, I)``
==================  =============================  ===================  ==============

``s`` is :attr:`PathParams.sigma_min`; ``x0`` is the mel spectrogram of the
upsampled low-resolution input and ``x1`` that of the high-resolution target.
Functions broadcast over a leading batch axis when ``t`` is an array.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError


class PathKind(str, enum.Enum):
    STANDARD = "standard"
    CONSTANT_SIGMA = "constant-sigma"
    DATA_PRIOR = "data-prior"

    @classmethod
    def parse(cls, value) -> "PathKind":
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"unknown path kind {value!r}; expected one of "
                              f"{', '.join(k.value for k in cls)}") from None


@dataclass(frozen=True)
class PathParams:
    sigma_min: float = 1e-4

    def __post_init__(self):
        if not 0 < self.sigma_min < 1:
            raise DomainError(f"sigma_min must lie in (0, 1), got {self.sigma_min}")


@dataclass
class ConditionPair:
    x0: np.ndarray
    x1: np.ndarray

    def __post_init__(self):
        self.x0 = np.asarray(self.x0)
        self.x1 = np.asarray(self.x1)
        if self.x0.shape != self.x1.shape:
            raise DomainError(f"x0 {self.x0.shape} and x1 {self.x1.shape} differ in shape")


@dataclass
class FlowPoint:
    x_t: np.ndarray
    t: float | np.ndarray


def _bt(t, like):
    """Reshape a per-item ``t`` so it broadcasts over the trailing grid axes."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (np.ndim(like) - t.ndim))


def mean_mu(kind: PathKind, t, z: ConditionPair):
    tt = _bt(t, z.x1)
    if kind is PathKind.STANDARD:
        return tt * z.x1
    return tt * z.x1 + (1.0 - tt) * z.x0


def std_sigma(kind: PathKind, t, p: PathParams):
    if kind is PathKind.CONSTANT_SIGMA:
        return np.full_like(np.asarray(t, dtype=np.float64), p.sigma_min)[()]
    return 1.0 - (1.0 - p.sigma_min) * np.asarray(t, dtype=np.float64)


def _mu_prime(kind: PathKind, z: ConditionPair):
    return z.x1 if kind is PathKind.STANDARD else z.x1 - z.x0


def _sigma_prime(kind: PathKind, p: PathParams) -> float:
    return 0.0 if kind is PathKind.CONSTANT_SIGMA else -(1.0 - p.sigma_min)


def sample_flow(kind: PathKind, t, z: ConditionPair, eps, p: PathParams) -> FlowPoint:
    """``x_t = mu_t(z) + sigma_t * eps``."""
    eps = np.asarray(eps)
    if eps.shape != z.x1.shape:
        raise DomainError(f"noise shape {eps.shape} does not match grid {z.x1.shape}")
    sig = _bt(std_sigma(kind, t, p), z.x1)
    return FlowPoint(mean_mu(kind, t, z) + sig * eps, t)


def target_vf_general(kind: PathKind, t, x_t, z: ConditionPair, p: PathParams):
    """Target field of a Gaussian path: ``(sigma'/sigma)(x - mu) + mu'``."""
    sig = np.asarray(std_sigma(kind, t, p))
    if np.any(sig == 0):
        raise NumericError("sigma_t vanished; the target field is singular")
    ratio = _bt(_sigma_prime(kind, p) / sig, z.x1)
    return ratio * (x_t - mean_mu(kind, t, z)) + _mu_prime(kind, z)


def target_vf_flh(t, x_t, z: ConditionPair, p: PathParams):
    """Closed form of the data-prior target field.

    ``((x1 - x0) - (1 - s)(x - x0)) / (1 - (1 - s) t)``
    """
    s = p.sigma_min
    return ((z.x1 - z.x0) - (1.0 - s) * (x_t - z.x0)) / _bt(1.0 - (1.0 - s) * np.asarray(t), z.x1)


def target_vf(kind: PathKind, t, x_t, z: ConditionPair, p: PathParams):
    """Training target for ``kind``; the data-prior path uses its closed form."""
    if kind is PathKind.DATA_PRIOR:
        return target_vf_flh(t, x_t, z, p)
    return target_vf_general(kind, t, x_t, z, p)


def cfm_loss(v_pred, u_target) -> float:
    """Mean squared error over every element (and batch item)."""
    v_pred = np.asarray(v_pred)
    u_target = np.asarray(u_target)
    if v_pred.shape != u_target.shape:
        raise DomainError(f"prediction {v_pred.shape} and target {u_target.shape} differ in shape")
    d = v_pred - u_target
    return float(np.mean(d * d))


def draw_training_point(kind: PathKind, z: ConditionPair, rng: np.random.Generator,
                        p: PathParams = PathParams()):
    """Draw ``t ~ U[0, 1]`` then unit-normal noise, and return ``(t, point, u)``."""
    t = float(rng.uniform(0.0, 1.0))
    eps = rng.standard_normal(z.x1.shape)
    point = sample_flow(kind, t, z, eps, p)
    return t, point, target_vf(kind, t, point.x_t, z, p)
