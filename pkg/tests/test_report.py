import numpy as np
import pytest

from src.errors import InsufficientDataError
from src.evaluation.report import (
    NOT_IMPLEMENTED, AttackEndpoints, build_report, delta_vs_best, evaluate_attack, mean_ledger,
)
from src.evaluation.stats import IntervalEstimate, RocCurve
from src.models import ComputeLedger, EvaluationConfig, ScoreRecord


def endpoints(attack, auc, tpr):
    return AttackEndpoints(
        attack=attack, n_members=10, n_nonmembers=10,
        auc=IntervalEstimate(auc, auc, auc, "delong"),
        auc_bootstrap=IntervalEstimate(auc, auc, auc, "bootstrap-percentile"),
        tpr={0.01: IntervalEstimate(tpr, tpr, tpr, "bootstrap-percentile")},
        p_value=0.5, mean_ledger={}, saturation_rate=None, roc=RocCurve([], [], []),
    )


def records(attack, shift, n=12, calls=100, flags=()):
    rng = np.random.default_rng(len(attack))
    out = []
    for i in range(n):
        split = "member" if i % 2 == 0 else "eval-nonmember"
        score = float(rng.normal(shift if split == "member" else 0.0, 1.0))
        out.append(ScoreRecord(f"c-{i:04d}", split, attack, score,
                               ledger=ComputeLedger(network_calls=calls, reverse_passes=calls // 4),
                               flags=list(flags) if i == 0 else []))
    return out


@pytest.fixture
def evaluation():
    return EvaluationConfig(fpr_targets=[0.1], bootstrap_resamples=50)


def test_delta_against_best_baseline():
    ours = endpoints("lsa-probe", 0.67, 0.20)
    delta = delta_vs_best(ours, [endpoints("loss", 0.60, 0.12), endpoints("endpoint", 0.62, 0.05)])
    assert delta["tpr@0.01"] == pytest.approx(0.08)
    assert delta["auc"] == pytest.approx(0.05)


def test_delta_without_baselines():
    assert delta_vs_best(endpoints("lsa-probe", 0.6, 0.1), []) == {}


def test_evaluate_attack(evaluation):
    result = evaluate_attack(records("lsa-probe", 2.0, flags=["saturated-low"]), evaluation, "lsa-probe")
    assert (result.n_members, result.n_nonmembers) == (6, 6)
    assert result.saturation_rate == pytest.approx(1 / 12)
    assert result.mean_ledger["network_calls"] == 100
    assert 0 <= result.auc.lower <= result.auc.point <= result.auc.upper <= 1
    assert set(result.to_dict()["tpr_at_fpr"]) == {"0.1"}


def test_baselines_have_no_saturation_rate(evaluation):
    assert evaluate_attack(records("loss", 1.0), evaluation).saturation_rate is None


def test_evaluate_attack_without_records(evaluation):
    with pytest.raises(InsufficientDataError):
        evaluate_attack(records("loss", 1.0), evaluation, "lsa-probe")


def test_mean_ledger_excludes_wall_clock():
    assert "wall_clock" not in mean_ledger(records("loss", 0.0))


def test_build_and_render(evaluation):
    report = build_report(
        {"lsa-probe": records("lsa-probe", 2.0), "loss": records("loss", 0.5)},
        evaluation, fingerprints={"config": "abc123"},
    )
    assert [e.attack for e in report.endpoints] == ["loss", "lsa-probe"]
    assert set(report.delta) == {"auc", "tpr@0.1"}
    data = report.to_dict()
    assert data["not_implemented"] == NOT_IMPLEMENTED
    text = report.render_text()
    assert "lsa-probe" in text and "TPR@10%FPR" in text
    assert "Δ (ours − best baseline)" in text
    assert "secmi" in text and "not implemented" in text
    assert "fingerprint config: abc123" in text
