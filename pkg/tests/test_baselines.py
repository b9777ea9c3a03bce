import numpy as np
import pytest

from src.baselines import (
    baseline_unit_cost, endpoint_score, loss_score, match_compute, run_baseline, trajectory_path,
    trajectory_score,
)
from src.denoiser import AnalyticPrior, AnalyticPriorDenoiser, ExactNoiseOracle
from src.errors import ConfigError, ParityError
from src.models import AttackConfig, DistanceConfig, ReverseConfig
from src.probe.scoring import ProbeContext, forward_tag
from src.seeds import SeedPolicy

T = 40


def make_ctx(schedule, denoiser, reverse=None):
    return ProbeContext(denoiser=denoiser, schedule=schedule, t=T, attack=AttackConfig(),
                        reverse=reverse or ReverseConfig(stride=1), distances=DistanceConfig(),
                        metric_kind="waveform-mse", sample_rate=8000, seeds=SeedPolicy(9))


@pytest.fixture
def clip(make_clip, rng):
    return make_clip(rng.normal(size=32))


@pytest.fixture
def oracle_ctx(schedule, clip):
    seeds = SeedPolicy(9)
    return make_ctx(schedule, ExactNoiseOracle(seeds.gaussian(clip.id, T, forward_tag(0), (32,))))


@pytest.mark.parametrize("target,unit,expected", [(140, 2, 70), (140, 3, 47), (140, 140, 1)])
def test_match_compute(target, unit, expected):
    assert match_compute(target, unit) == expected


def test_match_compute_unit_too_expensive():
    with pytest.raises(ParityError):
        match_compute(140, 200)


def test_match_compute_rejects_nonpositive():
    with pytest.raises(ConfigError):
        match_compute(0, 1)


def test_oracle_scores_zero(clip, oracle_ctx):
    assert loss_score(clip, oracle_ctx).score == 0.0
    assert endpoint_score(clip, oracle_ctx).score == pytest.approx(0.0, abs=1e-15)
    assert trajectory_score(clip, oracle_ctx).score == pytest.approx(0.0, abs=1e-9)


def test_scores_are_nonpositive(clip, schedule):
    ctx = make_ctx(schedule, AnalyticPriorDenoiser(AnalyticPrior(mu=np.zeros(32), tau2=0.5), schedule))
    for kind in ("loss", "endpoint", "trajectory"):
        record = run_baseline(kind, clip, ctx, repetitions=2)
        assert record.score < 0
        assert record.attack == kind
        assert record.repetitions == 2


def test_ledger_matches_unit_cost(clip, schedule):
    ctx = make_ctx(schedule, AnalyticPriorDenoiser(AnalyticPrior(mu=np.zeros(32), tau2=0.5), schedule),
                   ReverseConfig(max_calls=6))
    for kind in ("loss", "endpoint", "trajectory"):
        record = run_baseline(kind, clip, ctx, repetitions=3)
        assert record.ledger.network_calls == 3 * baseline_unit_cost(kind, ctx)


def test_trajectory_offset_bounds(clip, oracle_ctx):
    with pytest.raises(ConfigError):
        trajectory_score(clip, oracle_ctx, offset=0)
    with pytest.raises(ConfigError):
        trajectory_score(clip, oracle_ctx, offset=T)


def test_trajectory_path_lands_before_target(oracle_ctx):
    path = trajectory_path(T, 10, oracle_ctx)
    assert path[0] == T
    assert min(path) > T - 10


def test_unknown_kind(oracle_ctx, clip):
    with pytest.raises(ConfigError):
        baseline_unit_cost("secmi", oracle_ctx)
    with pytest.raises(ConfigError):
        run_baseline("secmi", clip, oracle_ctx, 1)
