"""Adversarial cost: the smallest budget whose maximal degradation reaches τ."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from src.errors import ConfigError
from src.models import AttackConfig, ComputeLedger
from src.probe.pgd import DegradationObjective, PGDResult, pgd_max_degradation
from src.seeds import SeedPolicy

logger = logging.getLogger(__name__)

SATURATED_LOW = "saturated-low"


@dataclass
class LevelSummary:
    eta: float
    best_value: float
    crossed: bool
    reason: str
    evaluations: int


@dataclass
class BisectionTrace:
    lower: float
    upper: float
    levels: list[LevelSummary] = field(default_factory=list)


def bisect_budget(max_degradation: Callable[[float], float], tau: float, eta_max: float,
                  steps: int) -> BisectionTrace:
    """Bisect [0, η_max] on D*(η) ≥ τ; returns the final bracket."""
    lower, upper = 0.0, eta_max
    trace = BisectionTrace(lower, upper)
    for _ in range(steps):
        eta = 0.5 * (lower + upper)
        value = max_degradation(eta)
        crossed = value >= tau
        if crossed:
            upper = eta
        else:
            lower = eta
        trace.levels.append(LevelSummary(eta=eta, best_value=value, crossed=crossed, reason="", evaluations=0))
    trace.lower, trace.upper = lower, upper
    return trace


@dataclass
class AdvCostResult:
    c_adv: float
    lower: float
    upper: float
    levels: list[LevelSummary]
    ledger: ComputeLedger
    flags: list[str] = field(default_factory=list)
    delta_at_upper: Optional[np.ndarray] = None

    @property
    def saturated(self) -> bool:
        return SATURATED_LOW in self.flags


def _check_tau(tau: Optional[float]) -> float:
    if tau is None:
        raise ConfigError("τ is not calibrated; run the calibrate stage or set attack.tau")
    if tau <= 0:
        raise ConfigError(f"τ must be > 0, got {tau}")
    return tau


def _run_level(objective: DegradationObjective, eta: float, config: AttackConfig,
               seeds: SeedPolicy, sample_id: str, t: int, tag: str) -> PGDResult:
    objective.ledger.charge(objective.reference_cost())
    return pgd_max_degradation(objective, eta, config, seeds, sample_id, t, tag)


def adversarial_cost(objective: DegradationObjective, tau: Optional[float], config: AttackConfig,
                     seeds: SeedPolicy, sample_id: str, t: int, tag: str = "rep0") -> AdvCostResult:
    """C_adv = inf{η : max_{‖δ̃‖≤η} D ≥ τ}, approximated by the upper end of the bracket.

    Each bisection level charges one clean reference pass plus its PGD passes. The
    optional η_max pre-check is tallied under the ``precheck_*`` counters.
    """
    tau = _check_tau(tau)
    main = objective.ledger
    flags: list[str] = []
    delta_at_upper = None

    if config.precheck:
        objective.ledger = ComputeLedger()
        top = _run_level(objective, config.eta_max, config, seeds, sample_id, t, f"{tag}/precheck")
        pre = objective.ledger
        main.precheck_reverse_passes += pre.reverse_passes
        main.precheck_metric_evaluations += pre.metric_evaluations
        main.network_calls += pre.network_calls
        main.decoder_calls += pre.decoder_calls
        objective.ledger = main
        delta_at_upper = top.best_delta
        if top.best_value < tau:
            logger.debug("%s: D*(η_max)=%.4g < τ=%.4g, saturated-low", sample_id, top.best_value, tau)
            level = LevelSummary(eta=config.eta_max, best_value=top.best_value, crossed=False,
                                 reason=top.reason, evaluations=len(top.trace))
            return AdvCostResult(c_adv=config.eta_max, lower=config.eta_max, upper=config.eta_max,
                                 levels=[level], ledger=objective.ledger, flags=[SATURATED_LOW],
                                 delta_at_upper=delta_at_upper)

    results: list[PGDResult] = []

    def max_degradation(eta: float) -> float:
        result = _run_level(objective, eta, config, seeds, sample_id, t, f"{tag}/level{len(results)}")
        results.append(result)
        return result.best_value

    trace = bisect_budget(max_degradation, tau, config.eta_max, config.bisection_steps)
    for level, result in zip(trace.levels, results):
        level.reason = result.reason
        level.evaluations = sum(len(r.trace) for r in result.restarts)
        if level.crossed:
            delta_at_upper = result.best_delta
    if not any(level.crossed for level in trace.levels):
        # without a pre-check the bracket never left η_max
        if not config.precheck:
            flags.append(SATURATED_LOW)
        if delta_at_upper is None:
            delta_at_upper = results[-1].best_delta

    return AdvCostResult(c_adv=trace.upper, lower=trace.lower, upper=trace.upper, levels=trace.levels,
                         ledger=objective.ledger, flags=flags, delta_at_upper=delta_at_upper)


def fixed_budget_degradation(objective: DegradationObjective, eta: float, config: AttackConfig,
                             seeds: SeedPolicy, sample_id: str, t: int,
                             tag: str = "fixed") -> PGDResult:
    """max_{‖δ̃‖_p ≤ η} D as a standalone score (higher ⇒ less stable)."""
    return _run_level(objective, eta, config, seeds, sample_id, t, tag)
