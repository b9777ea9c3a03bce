"""Noise schedules, the DDPM forward process and timestep indexing."""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.errors import ConfigError, ShapeError
from src.models import SPLITS, ScheduleConfig
from src.registry import fingerprint


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    alpha_bar: tuple[float, ...]
    beta_min: float
    beta_max: float

    @property
    def T(self) -> int:
        return len(self.alpha_bar)

    def alpha_bar_at(self, t: int) -> float:
        """ᾱ_t for t in [0, T]; index 0 is the clean signal (ᾱ_0 = 1)."""
        if t == 0:
            return 1.0
        check_timestep(self, t)
        return self.alpha_bar[t - 1]

    def fingerprint(self) -> str:
        return fingerprint({
            "kind": self.kind, "T": self.T,
            "beta_min": self.beta_min, "beta_max": self.beta_max,
        })


@dataclass(frozen=True)
class TimestepSpec:
    t: Optional[int] = None
    t_ratio: Optional[float] = None

    def resolve(self, schedule: NoiseSchedule) -> int:
        if self.t is not None:
            check_timestep(schedule, self.t)
            return self.t
        if self.t_ratio is None:
            raise ConfigError("timestep spec needs t or t_ratio")
        return ratio_to_timestep(schedule, self.t_ratio)

    def to_dict(self) -> dict:
        return {"t": self.t, "t_ratio": self.t_ratio}


@dataclass(frozen=True)
class Clip:
    id: str
    samples: np.ndarray
    sample_rate: int
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigError(f"clip {self.id}: unknown split {self.split!r}")
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"clip {self.id}: samples must be 1-D, got {samples.shape}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.shape[0]


def build_schedule(kind: str = "linear", T: int = 1000, beta_min: float = 1e-4,
                   beta_max: float = 0.02) -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    if not 0 < beta_min <= beta_max < 1:
        raise ConfigError(f"schedule needs 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], beta_min, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    alpha_bar = np.cumprod(1.0 - betas)
    if not np.all(np.diff(alpha_bar) < 0):
        raise ConfigError("schedule is not strictly decreasing")
    return NoiseSchedule(kind=kind, alpha_bar=tuple(float(a) for a in alpha_bar),
                         beta_min=beta_min, beta_max=beta_max)


def schedule_from_config(config: ScheduleConfig) -> NoiseSchedule:
    return build_schedule(config.kind, config.T, config.beta_min, config.beta_max)


def check_timestep(schedule: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= schedule.T:
        raise ConfigError(f"timestep {t} outside [1, {schedule.T}]")


def sigma_t(schedule: NoiseSchedule, t: int) -> float:
    """σ_t = √(1−ᾱ_t)."""
    check_timestep(schedule, t)
    return math.sqrt(1.0 - schedule.alpha_bar_at(t))


def ratio_to_timestep(schedule: NoiseSchedule, t_ratio: float) -> int:
    if not 0 < t_ratio <= 1:
        raise ConfigError(f"t_ratio must lie in (0, 1], got {t_ratio}")
    return int(math.floor(t_ratio * (schedule.T - 1))) + 1


def forward_noise(schedule: NoiseSchedule, x0: Union[Clip, np.ndarray], t: int,
                  epsilon: np.ndarray) -> np.ndarray:
    """x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε."""
    samples = x0.samples if isinstance(x0, Clip) else np.asarray(x0, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if samples.shape != epsilon.shape:
        raise ShapeError(f"forward_noise: x0 {samples.shape} vs epsilon {epsilon.shape}")
    a = schedule.alpha_bar_at(t)
    return math.sqrt(a) * samples + math.sqrt(1.0 - a) * epsilon
