"""Per-sample membership scoring with the adversarial-cost probe."""

import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src import autodiff as ad
from src.denoiser import Denoiser
from src.diffusion import Clip, NoiseSchedule
from src.distances import Metric, build_metric, secondary_degradations
from src.models import (
    AttackConfig, ComputeLedger, DistanceConfig, ExperimentConfig, ReverseConfig, ScoreRecord,
)
from src.probe.cost import adversarial_cost, fixed_budget_degradation
from src.probe.pgd import ReverseDegradation
from src.sampler import LatentCodec
from src.seeds import SeedPolicy

logger = logging.getLogger(__name__)

ATTACK_NAME = "lsa-probe"


def forward_tag(repetition: int) -> str:
    return f"forward/{repetition}"


@dataclass
class ProbeContext:
    """Everything a worker needs to score a clip; immutable after construction."""

    denoiser: Denoiser
    schedule: NoiseSchedule
    t: int
    attack: AttackConfig
    reverse: ReverseConfig
    distances: DistanceConfig
    metric_kind: str
    sample_rate: int
    seeds: SeedPolicy
    tau: Optional[float] = None
    codec: Optional[LatentCodec] = None

    @classmethod
    def from_config(cls, config: ExperimentConfig, denoiser: Denoiser, schedule: NoiseSchedule,
                    t: int, tau: Optional[float] = None, codec: Optional[LatentCodec] = None,
                    metric_kind: Optional[str] = None) -> "ProbeContext":
        return cls(
            denoiser=denoiser, schedule=schedule, t=t, attack=config.attack,
            reverse=config.reverse, distances=config.distances,
            metric_kind=metric_kind or config.attack.metric,
            sample_rate=config.corpus.sample_rate, seeds=SeedPolicy(config.run.seed),
            tau=tau if tau is not None else config.attack.tau, codec=codec,
        )

    @property
    def metric(self) -> Metric:
        return build_metric(self.metric_kind, self.distances, self.sample_rate)

    def objective(self, clip: Clip, repetition: int = 0) -> ReverseDegradation:
        dim = self.codec.m if self.codec is not None else clip.n
        epsilon = self.seeds.gaussian(clip.id, self.t, forward_tag(repetition), (dim,))
        return ReverseDegradation(clip.samples, self.t, epsilon, self.denoiser, self.schedule,
                                  self.metric, self.reverse, self.codec)


def _perturbed_output(objective: ReverseDegradation, delta: np.ndarray) -> np.ndarray:
    return ad.evaluate(objective.perturbed(ad.const(delta)))


def score_sample(clip: Clip, ctx: ProbeContext) -> ScoreRecord:
    """Mean C_adv over ``attack.repetitions`` forward-noise seeds.

    Secondary degradations are measured at the returned budget and are not
    charged to the ledger.
    """
    started = time.perf_counter()
    ledger = ComputeLedger()
    costs: list[float] = []
    flags: set[str] = set()
    secondary: dict[str, list[float]] = {}

    for s in range(ctx.attack.repetitions):
        objective = ctx.objective(clip, s)
        result = adversarial_cost(objective, ctx.tau, ctx.attack, ctx.seeds, clip.id, ctx.t, tag=f"rep{s}")
        costs.append(result.c_adv)
        flags.update(result.flags)
        ledger.charge(result.ledger)
        if result.delta_at_upper is not None:
            pert = _perturbed_output(objective, result.delta_at_upper)
            for kind, value in secondary_degradations(objective.clean, pert, ctx.distances,
                                                      ctx.sample_rate).items():
                secondary.setdefault(kind, []).append(value)

    ledger.wall_clock = time.perf_counter() - started
    logger.debug("scored %s: C_adv=%.6f flags=%s", clip.id, float(np.mean(costs)), sorted(flags))
    return ScoreRecord(
        sample_id=clip.id, split=clip.split, attack=ATTACK_NAME,
        score=float(np.mean(costs)), repetitions=ctx.attack.repetitions, ledger=ledger,
        secondary={kind: float(np.mean(v)) for kind, v in secondary.items()},
        flags=sorted(flags),
    )


def score_fixed_budget(clip: Clip, ctx: ProbeContext, eta: float) -> ScoreRecord:
    """max_{‖δ̃‖ ≤ η} D as the score, averaged over repetitions."""
    started = time.perf_counter()
    ledger = ComputeLedger()
    values = []
    for s in range(ctx.attack.repetitions):
        objective = ctx.objective(clip, s)
        result = fixed_budget_degradation(objective, eta, ctx.attack, ctx.seeds, clip.id, ctx.t,
                                          tag=f"rep{s}/fixed")
        values.append(result.best_value)
        ledger.charge(objective.ledger)
    ledger.wall_clock = time.perf_counter() - started
    # higher degradation means less stable, so negate to keep "higher ⇒ member"
    return ScoreRecord(sample_id=clip.id, split=clip.split, attack=f"fixed-budget@{eta:g}",
                       score=-float(np.mean(values)), repetitions=ctx.attack.repetitions,
                       ledger=ledger)
