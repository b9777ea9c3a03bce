from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from src.errors import ConfigError

METRIC_KINDS = ("waveform-mse", "log-mel-mse", "mr-stft")
SPLITS = ("member", "dev-nonmember", "eval-nonmember")
SCORED_SPLITS = ("member", "eval-nonmember")
SCORE_SCHEMA_VERSION = 1


def _build(cls, data: Optional[dict], section: str):
    """Construct ``cls`` from a mapping, rejecting keys the dataclass does not declare."""
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
    return cls(**data)


@dataclass
class RunConfig:
    run_dir: str = "runs/default"
    seed: int = 0
    workers: int = 1
    mode: str = "waveform"  # waveform | latent
    latent_stride: int = 4  # codec dimension m = n / latent_stride


@dataclass
class CorpusConfig:
    members: int = 64
    dev: int = 64
    eval: int = 64
    clip_length: int = 2048
    sample_rate: int = 8000
    min_components: int = 1
    max_components: int = 4
    freq_range: list[float] = field(default_factory=lambda: [60.0, 1200.0])
    decay_range: list[float] = field(default_factory=lambda: [0.5, 6.0])
    amplitude_range: list[float] = field(default_factory=lambda: [0.2, 1.0])
    noise_floor: float = 0.01
    eval_shift_hz: float = 0.0

    def problems(self) -> list[str]:
        problems = []
        nyquist = self.sample_rate / 2.0
        if min(self.members, self.dev, self.eval) < 0:
            problems.append("corpus clip counts must be >= 0")
        if self.clip_length < 1 or self.sample_rate < 1:
            problems.append("corpus.clip_length and corpus.sample_rate must be >= 1")
        if not 0 <= self.min_components <= self.max_components:
            problems.append("corpus needs 0 <= min_components <= max_components")
        for name in ("freq_range", "decay_range", "amplitude_range"):
            low, high = getattr(self, name)
            if not 0 <= low <= high:
                problems.append(f"corpus.{name} must satisfy 0 <= low <= high")
        if self.freq_range[1] + max(self.eval_shift_hz, 0.0) >= nyquist:
            problems.append(f"corpus.freq_range plus eval shift must stay below Nyquist ({nyquist:g} Hz)")
        if self.freq_range[0] + min(self.eval_shift_hz, 0.0) <= 0:
            problems.append("corpus.eval_shift_hz pushes frequencies to or below 0 Hz")
        if self.noise_floor < 0:
            problems.append("corpus.noise_floor must be >= 0")
        return problems


@dataclass
class ScheduleConfig:
    kind: str = "linear"  # linear | cosine
    T: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02


@dataclass
class DenoiserConfig:
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    activation: str = "silu"  # silu | tanh
    embedding_dim: int = 16


@dataclass
class TrainConfig:
    steps: int = 4000
    batch_size: int = 16
    lr: float = 0.005
    momentum: float = 0.9
    seed: int = 0
    grad_clip: float = 5.0  # global-norm clip; 0 disables
    log_every: int = 250


@dataclass
class ReverseConfig:
    stride: Optional[int] = None
    max_calls: int = 25
    checkpointing: bool = False


@dataclass
class DistanceConfig:
    fft_sizes: list[int] = field(default_factory=lambda: [64, 128, 256])
    hop_divisor: int = 4
    window: str = "hann"  # hann | rectangular
    mel_bands: int = 16
    mel_fft: int = 256
    mel_fmin: float = 0.0
    mel_fmax: Optional[float] = None
    mel_floor: float = 1e-5


@dataclass
class AttackConfig:
    norm: str = "2"  # "2" | "inf"
    eta_max: float = 0.8
    steps: int = 12
    restarts: int = 2
    beta: float = 0.25
    momentum: float = 0.9
    bisection_steps: int = 10
    early_stop: bool = True
    early_stop_rel: float = 0.01
    early_stop_patience: int = 3
    grad_floor: float = 1e-6
    repetitions: int = 1
    precheck: bool = True
    t: Optional[int] = None
    t_ratio: Optional[float] = 0.6
    metric: str = "mr-stft"
    tau: Optional[float] = None

    def __post_init__(self):
        self.norm = str(self.norm)

    def problems(self) -> list[str]:
        problems = []
        if self.norm not in ("2", "inf"):
            problems.append(f"attack.norm must be '2' or 'inf', got {self.norm!r}")
        if self.eta_max <= 0:
            problems.append("attack.eta_max must be > 0")
        if self.steps < 1:
            problems.append("attack.steps must be >= 1")
        if self.restarts < 1:
            problems.append("attack.restarts must be >= 1")
        if self.bisection_steps < 1:
            problems.append("attack.bisection_steps must be >= 1")
        if not 0 < self.beta <= 1:
            problems.append("attack.beta must lie in (0, 1]")
        if self.repetitions < 1:
            problems.append("attack.repetitions must be >= 1")
        if self.tau is not None and self.tau <= 0:
            problems.append("attack.tau must be > 0")
        if self.metric not in METRIC_KINDS:
            problems.append(f"attack.metric must be one of {', '.join(METRIC_KINDS)}")
        if self.t is None and self.t_ratio is None:
            problems.append("attack needs either t or t_ratio")
        return problems


@dataclass
class CalibrationConfig:
    eta_ref: float = 0.05
    directions: int = 8
    percentile: float = 95.0

    def problems(self) -> list[str]:
        problems = []
        if self.eta_ref < 0:
            problems.append("calibration.eta_ref must be >= 0")
        if self.directions < 1:
            problems.append("calibration.directions must be >= 1")
        if not 0 < self.percentile < 100:
            problems.append("calibration.percentile must lie in (0, 100)")
        return problems


@dataclass
class BaselineConfig:
    kinds: list[str] = field(default_factory=lambda: ["loss", "endpoint", "trajectory"])
    timesteps: Optional[list[int]] = None
    trajectory_offset: Optional[int] = None
    trajectory_norm: str = "2"
    repetitions: Optional[int] = None  # None = match the attack's compute
    parity_tolerance: float = 0.05

    def __post_init__(self):
        self.trajectory_norm = str(self.trajectory_norm)


@dataclass
class EvaluationConfig:
    fpr_targets: list[float] = field(default_factory=lambda: [0.01, 0.001])
    bootstrap_resamples: int = 10000
    level: float = 0.95
    alpha: float = 0.05
    seed: int = 0


@dataclass
class SweepConfig:
    t_ratios: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    eta_maxes: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4, 0.6, 0.8])
    metrics: list[str] = field(default_factory=lambda: list(METRIC_KINDS))


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    reverse: ReverseConfig = field(default_factory=ReverseConfig)
    distances: DistanceConfig = field(default_factory=DistanceConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ExperimentConfig":
        data = dict(data or {})
        sections = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(sections))
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
        kwargs = {}
        for name, f in sections.items():
            kwargs[name] = _build(f.default_factory, data.get(name), name)
        config = cls(**kwargs)
        config.validate()
        return config

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        problems = self.corpus.problems() + self.attack.problems() + self.calibration.problems()
        if self.run.mode not in ("waveform", "latent"):
            problems.append("run.mode must be 'waveform' or 'latent'")
        if self.reverse.stride is None and self.reverse.max_calls < 2:
            problems.append("reverse.max_calls must be >= 2")
        if self.run.workers < 1:
            problems.append("run.workers must be >= 1")
        if self.schedule.kind not in ("linear", "cosine"):
            problems.append("schedule.kind must be 'linear' or 'cosine'")
        if self.corpus.clip_length % self.run.latent_stride:
            problems.append("corpus.clip_length must be divisible by run.latent_stride")
        if self.train.steps < 0 or self.train.lr <= 0:
            problems.append("train.steps must be >= 0 and train.lr > 0")
        for kind in self.baselines.kinds:
            if kind not in ("loss", "endpoint", "trajectory"):
                problems.append(f"unknown baseline kind {kind!r}")
        for metric in self.sweep.metrics:
            if metric not in METRIC_KINDS:
                problems.append(f"unknown sweep metric {metric!r}")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class ComputeLedger:
    reverse_passes: int = 0
    network_calls: int = 0
    decoder_calls: int = 0
    metric_evaluations: int = 0
    precheck_reverse_passes: int = 0
    precheck_metric_evaluations: int = 0
    wall_clock: float = 0.0

    def __add__(self, other: "ComputeLedger") -> "ComputeLedger":
        return ComputeLedger(**{
            f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)
        })

    def charge(self, other: "ComputeLedger") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def to_dict(self, include_wall_clock: bool = False) -> dict:
        data = asdict(self)
        if not include_wall_clock:
            data.pop("wall_clock")
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ComputeLedger":
        return _build(cls, data, "ledger")


@dataclass
class ScoreRecord:
    sample_id: str
    split: str
    attack: str
    score: float
    repetitions: int = 1
    ledger: ComputeLedger = field(default_factory=ComputeLedger)
    secondary: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def is_member(self) -> bool:
        return self.split == "member"

    def to_dict(self) -> dict:
        return {
            "schema": SCORE_SCHEMA_VERSION,
            "sample_id": self.sample_id,
            "split": self.split,
            "attack": self.attack,
            "score": self.score,
            "repetitions": self.repetitions,
            "ledger": self.ledger.to_dict(),
            "secondary": dict(sorted(self.secondary.items())),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScoreRecord":
        return cls(
            sample_id=data["sample_id"],
            split=data["split"],
            attack=data["attack"],
            score=float(data["score"]),
            repetitions=data.get("repetitions", 1),
            ledger=ComputeLedger.from_dict(data.get("ledger", {})),
            secondary=data.get("secondary", {}),
            flags=data.get("flags", []),
        )
