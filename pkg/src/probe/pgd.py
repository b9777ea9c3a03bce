"""Fixed-budget maximal degradation by projected gradient ascent."""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src import autodiff as ad
from src.denoiser import Denoiser
from src.diffusion import NoiseSchedule, forward_noise
from src.distances import Metric
from src.errors import ConfigError, NumericalError
from src.models import AttackConfig, ComputeLedger, ReverseConfig
from src.probe.perturbation import inject, project
from src.sampler import LatentCodec, reverse_array, reverse_from, reverse_latent, timestep_path
from src.seeds import SeedPolicy

logger = logging.getLogger(__name__)

MAX_STEPS = "max-steps"
EARLY_STOP = "early-stop-improvement"
GRADIENT_FLOOR = "gradient-floor"
ABORTED = "aborted-non-finite"


class DegradationObjective(ABC):
    """δ̃ ↦ D(x̂₀, x̂₀^δ̃) with its gradient; charges its own passes to ``ledger``."""

    dim: int
    ledger: ComputeLedger

    @abstractmethod
    def value_and_grad(self, delta: np.ndarray) -> tuple[float, np.ndarray]:
        ...

    @abstractmethod
    def value(self, delta: np.ndarray) -> float:
        ...

    def reference_cost(self) -> ComputeLedger:
        """Cost of one clean reference pass; zero for analytic objectives."""
        return ComputeLedger()


class ReverseDegradation(DegradationObjective):
    """Degradation of the reverse operator's output under a time-normalised perturbation.

    The clean reconstruction is computed once and reused for every evaluation.
    With a codec the perturbation lives in latent space and outputs are decoded.
    """

    def __init__(self, x0: np.ndarray, t: int, epsilon: np.ndarray, denoiser: Denoiser,
                 schedule: NoiseSchedule, metric: Metric, reverse: ReverseConfig,
                 codec: Optional[LatentCodec] = None):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.t = t
        self.epsilon = np.asarray(epsilon, dtype=np.float64)
        self.denoiser = denoiser
        self.schedule = schedule
        self.metric = metric
        self.reverse = reverse
        self.codec = codec
        self.ledger = ComputeLedger()
        if codec is None:
            self.dim = self.x0.shape[0]
            self.x_t = forward_noise(schedule, self.x0, t, self.epsilon)
            self.clean = reverse_array(self.x_t, t, denoiser, schedule, reverse)
        else:
            self.dim = codec.m
            self.clean = ad.evaluate(reverse_latent(self.x0, t, denoiser, codec, schedule,
                                                    self.epsilon, None, reverse))

    def reference_cost(self) -> ComputeLedger:
        return ComputeLedger(reverse_passes=1, network_calls=len(timestep_path(self.t, self.reverse)),
                             decoder_calls=0 if self.codec is None else 1)

    def perturbed(self, delta: ad.Node) -> ad.Node:
        if self.codec is None:
            return reverse_from(inject(ad.const(self.x_t), delta, self.t, self.schedule), self.t,
                                self.denoiser, self.schedule, self.reverse, self.ledger)
        return reverse_latent(self.x0, self.t, self.denoiser, self.codec, self.schedule,
                              self.epsilon, delta, self.reverse, self.ledger)

    def _graph(self, delta: np.ndarray) -> tuple[ad.Node, ad.Node]:
        leaf = ad.leaf(delta, name="delta")
        root = self.metric(ad.const(self.clean), self.perturbed(leaf))
        self.ledger.metric_evaluations += 1
        return leaf, root

    def value_and_grad(self, delta: np.ndarray) -> tuple[float, np.ndarray]:
        leaf, root = self._graph(delta)
        return ad.value_and_grad(root, leaf)

    def value(self, delta: np.ndarray) -> float:
        _, root = self._graph(delta)
        return float(ad.evaluate(root))


@dataclass
class RestartSummary:
    trace: list[float]
    reason: str
    best_value: float


@dataclass
class PGDResult:
    best_value: float
    best_delta: np.ndarray
    trace: list[float]
    reason: str
    restarts: list[RestartSummary] = field(default_factory=list)

    @property
    def aborted(self) -> int:
        return sum(1 for r in self.restarts if r.reason == ABORTED)


def step_size(eta: float, config: AttackConfig) -> float:
    """α = β·η / K."""
    return config.beta * eta / config.steps


def _relative_gain(value: float, previous: float) -> float:
    if previous != 0:
        return (value - previous) / abs(previous)
    return math.inf if value > previous else 0.0


def _ascent_direction(momentum: np.ndarray, p: str) -> np.ndarray:
    if p == "inf":
        return np.sign(momentum)
    return momentum / max(float(np.linalg.norm(momentum)), 1e-12)


def _run_restart(objective: DegradationObjective, eta: float, config: AttackConfig,
                 delta: np.ndarray) -> tuple[RestartSummary, np.ndarray]:
    alpha = step_size(eta, config)
    momentum = np.zeros_like(delta)
    trace: list[float] = []
    best_value, best_delta = -math.inf, delta
    stall, previous = 0, None
    reason = MAX_STEPS

    def record(value: float, at: np.ndarray) -> None:
        nonlocal best_value, best_delta
        trace.append(value)
        if value > best_value:
            best_value, best_delta = value, at

    for _ in range(config.steps):
        value, grad = objective.value_and_grad(delta)
        record(value, delta)
        if config.early_stop and previous is not None:
            stall = stall + 1 if _relative_gain(value, previous) < config.early_stop_rel else 0
            if stall >= config.early_stop_patience:
                reason = EARLY_STOP
                break
        if float(np.linalg.norm(grad)) < config.grad_floor:
            reason = GRADIENT_FLOOR
            break
        momentum = config.momentum * momentum + grad / max(float(np.mean(np.abs(grad))), 1e-12)
        delta = project(delta + alpha * _ascent_direction(momentum, config.norm), config.norm, eta)
        previous = value
    else:
        record(objective.value(delta), delta)

    if reason != MAX_STEPS:
        logger.debug("pgd restart stopped after %d evaluations: %s", len(trace), reason)
    return RestartSummary(trace=trace, reason=reason, best_value=best_value), best_delta


def pgd_max_degradation(objective: DegradationObjective, eta: float, config: AttackConfig,
                        seeds: SeedPolicy, sample_id: str, t: int, tag: str = "pgd") -> PGDResult:
    """max over ‖δ̃‖_p ≤ η of the objective, best over ``config.restarts`` restarts.

    Restart j starts from a Gaussian draw keyed by (sample_id, t, f"{tag}/restart{j}")
    projected onto the ball; the momentum buffer starts at zero for every restart.
    """
    if eta <= 0:
        raise ConfigError(f"PGD budget must be > 0, got {eta}")
    best: Optional[PGDResult] = None
    summaries: list[RestartSummary] = []
    for j in range(config.restarts):
        start = project(seeds.gaussian(sample_id, t, f"{tag}/restart{j}", (objective.dim,)),
                        config.norm, eta)
        try:
            summary, best_delta = _run_restart(objective, eta, config, start)
        except NumericalError as e:
            logger.warning("pgd restart %d for %s aborted: %s", j, sample_id, e)
            summaries.append(RestartSummary(trace=[], reason=ABORTED, best_value=-math.inf))
            continue
        summaries.append(summary)
        if best is None or summary.best_value > best.best_value:
            best = PGDResult(best_value=summary.best_value, best_delta=best_delta,
                             trace=summary.trace, reason=summary.reason)
    if best is None:
        raise NumericalError(f"every PGD restart for {sample_id} hit a non-finite value")
    best.restarts = summaries
    return best
