"""Run configuration: a flat ``key = value`` text file.

Lists are comma separated, ``#`` starts a comment, unknown keys are an
error. ``serialize`` writes every key, so ``parse(serialize(c)) == c``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..cfm import PathKind, PathParams
from ..errors import ConfigError, DomainError
from ..estimator import EstimatorConfig
from ..sampler import Method, SolverConfig
from ..spectral import StftConfig, mel_filterbank

MIN_LOW_RATE = 4000
MAX_LOW_RATE = 32000


@dataclass(frozen=True)
class RunConfig:
    # rates
    high_rate: int = 16000
    low_rates: tuple = (4000, 8000)
    # analysis
    window_size: int = 512
    hop: int = 128
    n_fft: int = 512
    mel_bins: int = 80
    fmin: float = 0.0
    fmax: float = 0.0  # 0 means high_rate / 2
    mel_floor: float = 1e-5
    gl_iters: int = 32
    # probability path
    path: str = "data-prior"
    sigma_min: float = 1e-4
    # estimator
    layers: int = 2
    heads: int = 2
    model_dim: int = 64
    ff_dim: int = 256
    max_frames: int = 4096
    # optimisation
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    batch_size: int = 16
    steps: int = 2000
    crop_frames: int = 64
    checkpoint_every: int = 500
    seed: int = 0
    # sampling
    method: str = "euler"
    solver_steps: int = 1
    solver_seed: int = 0
    crossfade_bins: int = 0
    # corpus
    utterances: int = 200
    seconds: float = 2.0
    eval_fraction: float = 0.2
    # degradation
    order_min: int = 2
    order_max: int = 10
    ripple_min: float = 0.01
    ripple_max: float = 1.0
    eval_order: int = 8
    eval_ripple: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "low_rates", tuple(int(r) for r in self.low_rates))
        try:
            self.validate()
        except (DomainError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def validate(self):
        if not self.low_rates:
            raise ConfigError("low_rates must not be empty")
        for l in self.low_rates:
            if not MIN_LOW_RATE <= l <= MAX_LOW_RATE:
                raise ConfigError(f"low rate {l} outside [{MIN_LOW_RATE}, {MAX_LOW_RATE}]")
            if l >= self.high_rate:
                raise ConfigError(f"low rate {l} must be below high_rate {self.high_rate}")
        if self.fmax and self.fmax > self.high_rate / 2:
            raise ConfigError("fmax exceeds Nyquist")
        if self.crop_frames > self.max_frames:
            raise ConfigError("crop_frames exceeds max_frames")
        if not 1 <= self.order_min <= self.order_max <= 12:
            raise ConfigError("need 1 <= order_min <= order_max <= 12")
        if not 0 < self.ripple_min <= self.ripple_max:
            raise ConfigError("need 0 < ripple_min <= ripple_max")
        if not 0 < self.eval_fraction < 1:
            raise ConfigError("eval_fraction must lie in (0, 1)")
        for name in ("batch_size", "steps", "crop_frames", "checkpoint_every", "utterances", "gl_iters"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        PathKind.parse(self.path)
        Method(self.method)
        self.stft, self.estimator, self.solver, self.path_params

    # derived views -------------------------------------------------------
    @property
    def kind(self) -> PathKind:
        return PathKind.parse(self.path)

    @property
    def path_params(self) -> PathParams:
        return PathParams(self.sigma_min)

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_size, self.hop, self.n_fft)

    @property
    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(self.layers, self.heads, self.model_dim, self.ff_dim,
                               self.mel_bins, self.max_frames)

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(Method(self.method), self.solver_steps, self.solver_seed)

    def filterbank(self):
        return mel_filterbank(self.mel_bins, self.stft, self.high_rate, self.fmin,
                              self.fmax or self.high_rate / 2)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _convert(field, raw: str):
    kind = field.type
    try:
        if kind == "tuple":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{field.name}: cannot parse {raw!r} as {kind}") from None


def parse(text: str) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(known[key], raw)
    return RunConfig(**values)


def serialize(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse(text)
