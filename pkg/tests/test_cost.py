import numpy as np
import pytest

from src.denoiser import AnalyticPrior, AnalyticPriorDenoiser
from src.distances import waveform_mse
from src.errors import ConfigError
from src.models import AttackConfig, ComputeLedger, ReverseConfig
from src.probe.cost import SATURATED_LOW, adversarial_cost, bisect_budget, fixed_budget_degradation
from src.probe.pgd import DegradationObjective, ReverseDegradation
from src.sampler import timestep_path
from src.seeds import SeedPolicy

SEEDS = SeedPolicy(3)


class NormObjective(DegradationObjective):
    """D(δ̃) = ‖δ̃‖₂, so the maximal degradation at budget η is exactly η."""

    def __init__(self, dim=8):
        self.dim = dim
        self.ledger = ComputeLedger()

    def value_and_grad(self, delta):
        self.ledger.metric_evaluations += 1
        length = float(np.linalg.norm(delta))
        return length, delta / length

    def value(self, delta):
        self.ledger.metric_evaluations += 1
        return float(np.linalg.norm(delta))


def attack(**kwargs):
    base = dict(eta_max=0.8, steps=12, restarts=1, bisection_steps=10, early_stop=False)
    base.update(kwargs)
    return AttackConfig(**base)


def test_bisection_brackets_threshold():
    trace = bisect_budget(lambda eta: eta ** 2, 0.25, 1.0, 20)
    assert trace.lower < 0.5 <= trace.upper
    assert trace.upper - trace.lower == pytest.approx(2 ** -20)


def test_identity_oracle_recovers_tau():
    result = adversarial_cost(NormObjective(), 0.3, attack(), SEEDS, "mem-0000", 40)
    assert 0.3 - 1e-12 <= result.c_adv <= 0.3 + 0.8 / 1024 + 1e-12
    assert result.upper - result.lower == pytest.approx(0.8 / 1024)
    assert len(result.levels) == 10
    assert result.flags == []


def test_cost_is_monotone_in_tau():
    low = adversarial_cost(NormObjective(), 0.2, attack(), SEEDS, "mem-0000", 40).c_adv
    high = adversarial_cost(NormObjective(), 0.5, attack(), SEEDS, "mem-0000", 40).c_adv
    assert low < high


@pytest.mark.parametrize("tau", [None, 0.0, -1.0])
def test_tau_must_be_positive(tau):
    with pytest.raises(ConfigError):
        adversarial_cost(NormObjective(), tau, attack(), SEEDS, "mem-0000", 40)


def test_saturated_low_with_precheck():
    objective = NormObjective()
    result = adversarial_cost(objective, 5.0, attack(precheck=True), SEEDS, "mem-0000", 40)
    assert result.c_adv == 0.8
    assert result.flags == [SATURATED_LOW]
    assert result.saturated
    assert objective.ledger.precheck_metric_evaluations == 13
    assert objective.ledger.metric_evaluations == 0


def test_saturated_low_without_precheck():
    result = adversarial_cost(NormObjective(), 5.0, attack(precheck=False), SEEDS, "mem-0000", 40)
    assert result.c_adv == pytest.approx(0.8)
    assert SATURATED_LOW in result.flags
    assert result.delta_at_upper is not None


def test_precheck_is_tallied_separately():
    objective = NormObjective()
    adversarial_cost(objective, 0.3, attack(precheck=True), SEEDS, "mem-0000", 40)
    assert objective.ledger.precheck_metric_evaluations == 13
    assert objective.ledger.metric_evaluations == 130


def test_compute_accounting_through_reverse(schedule, rng):
    reverse = ReverseConfig(max_calls=5)
    denoiser = AnalyticPriorDenoiser(AnalyticPrior(mu=np.zeros(16), tau2=0.5), schedule)
    objective = ReverseDegradation(rng.normal(size=16), 30, rng.normal(size=16), denoiser, schedule,
                                   waveform_mse, reverse)
    config = attack(precheck=False, grad_floor=0.0)
    result = adversarial_cost(objective, 1e-9, config, SEEDS, "mem-0000", 30)
    # per level: one reference pass, K gradient passes, one final evaluation
    assert result.ledger.reverse_passes == 140
    assert result.ledger.metric_evaluations == 130
    assert result.ledger.network_calls == 140 * len(timestep_path(30, reverse))
    assert result.ledger.precheck_reverse_passes == 0


def test_levels_record_reasons_and_evaluations():
    result = adversarial_cost(NormObjective(), 0.3, attack(precheck=False), SEEDS, "mem-0000", 40)
    assert all(level.reason == "max-steps" for level in result.levels)
    assert all(level.evaluations == 13 for level in result.levels)
    assert [level.crossed for level in result.levels][:2] == [True, False]


def test_fixed_budget_degradation():
    result = fixed_budget_degradation(NormObjective(), 0.4, attack(), SEEDS, "mem-0000", 40)
    assert result.best_value == pytest.approx(0.4)
