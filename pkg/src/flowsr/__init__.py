"""Audio super-resolution with single-step conditional flow matching on mel spectrograms."""

from .audio_io import AudioSignal, ChebyshevSpec, read_wav, resample, simulate_lr, write_wav
from .cfm import ConditionPair, PathKind, PathParams
from .estimator import EstimatorConfig, VectorFieldEstimator
from .metrics import LsdReport, lsd, lsd_report
from .sampler import Method, SolverConfig, super_resolve
from .spectral import StftConfig, mel_filterbank

__version__ = "0.1.0"

__all__ = [
    "AudioSignal", "ChebyshevSpec", "ConditionPair", "EstimatorConfig", "LsdReport", "Method",
    "PathKind", "PathParams", "SolverConfig", "StftConfig", "VectorFieldEstimator", "lsd",
    "lsd_report", "mel_filterbank", "read_wav", "resample", "simulate_lr", "super_resolve",
    "write_wav",
]
