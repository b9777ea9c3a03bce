import itertools

import numpy as np
import pytest
from scipy.stats import norm

from src.errors import ConfigError, InsufficientDataError
from src.evaluation.stats import (
    ScoreSet, auc, bonferroni, bootstrap_ci, delong_ci, delong_p_value, delong_variance, holm_bonferroni,
    roc_curve, tpr_at_fpr,
)
from src.models import ScoreRecord


def scores(members, nonmembers):
    return ScoreSet(np.array(members, dtype=float), np.array(nonmembers, dtype=float))


def pair_count_auc(s):
    wins = sum(1.0 if m > n else 0.5 if m == n else 0.0
               for m, n in itertools.product(s.members, s.nonmembers))
    return wins / (len(s.members) * len(s.nonmembers))


def scan_tpr(s, target):
    best = 0.0
    for theta in [np.inf] + sorted(set(s.members) | set(s.nonmembers)):
        for th in (theta, np.nextafter(theta, -np.inf)):
            fpr = np.mean(s.nonmembers > th)
            if fpr <= target:
                best = max(best, float(np.mean(s.members > th)))
    return best


def holm_by_hand(p, alpha):
    order = sorted(range(len(p)), key=lambda i: p[i])
    reject = [False] * len(p)
    for rank, i in enumerate(order, 1):
        if p[i] > alpha / (len(p) - rank + 1):
            break
        reject[i] = True
    return reject


@pytest.mark.parametrize("members,nonmembers,expected", [
    ([0.9, 0.8], [0.1, 0.2], 1.0),
    ([0.9, 0.2], [0.8, 0.1], 0.75),
    ([0.5, 0.5], [0.5, 0.5, 0.5], 0.5),
])
def test_auc_examples(members, nonmembers, expected):
    assert auc(scores(members, nonmembers)) == pytest.approx(expected)


def test_auc_matches_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m, n = rng.integers(1, 51, size=2)
        # rounding forces ties
        s = scores(np.round(rng.normal(0.3, 1, m), 1), np.round(rng.normal(0, 1, n), 1))
        assert auc(s) == pytest.approx(pair_count_auc(s), abs=1e-12)


def test_auc_properties():
    rng = np.random.default_rng(1)
    s = scores(rng.normal(0.5, 1, 30), rng.normal(0, 1, 40))
    assert auc(scores(np.exp(s.members), np.exp(s.nonmembers))) == pytest.approx(auc(s))
    assert auc(s) + auc(s.swapped()) == pytest.approx(1.0)


def test_single_class_is_rejected():
    with pytest.raises(InsufficientDataError):
        auc(scores([0.1, 0.2], []))


def test_non_finite_scores_rejected():
    with pytest.raises(ValueError):
        scores([np.nan], [0.1])


def test_score_set_from_records_is_order_independent():
    records = [ScoreRecord("a", "member", "x", 0.3), ScoreRecord("b", "eval-nonmember", "x", 0.1),
               ScoreRecord("c", "member", "x", 0.2), ScoreRecord("d", "eval-nonmember", "y", 9.0)]
    forward = ScoreSet.from_records(records, attack="x")
    backward = ScoreSet.from_records(records[::-1], attack="x")
    assert forward.members.tolist() == backward.members.tolist() == [0.2, 0.3]
    assert forward.nonmembers.tolist() == [0.1]


def test_roc_curve_shape():
    curve = roc_curve(scores([0.9, 0.7, 0.4], [0.8, 0.3, 0.2, 0.1]))
    assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
    assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
    assert curve.fpr == sorted(curve.fpr) and curve.tpr == sorted(curve.tpr)


def test_roc_ties_flip_together():
    curve = roc_curve(scores([0.5, 0.5], [0.5, 0.1]))
    assert list(zip(curve.fpr, curve.tpr)) == [(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]


def test_tpr_at_fpr_scan():
    s = scores([0.9, 0.7, 0.4], [0.8, 0.3, 0.2, 0.1])
    # θ just below 0.4 still only admits the 0.8 non-member
    assert tpr_at_fpr(s, 0.25) == 1.0
    assert tpr_at_fpr(s, 0.1) == pytest.approx(1 / 3)


def test_tpr_at_fpr_perfect_separation():
    s = scores([0.9, 0.8], [0.1, 0.2])
    for target in (0.0, 0.001, 0.01, 0.5):
        assert tpr_at_fpr(s, target) == 1.0


def test_tpr_at_fpr_matches_scan_and_is_monotone():
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = scores(np.round(rng.normal(0.5, 1, 20), 1), np.round(rng.normal(0, 1, 25), 1))
        values = [tpr_at_fpr(s, f) for f in (0.0, 0.04, 0.2, 0.5, 1.0)]
        assert values == sorted(values)
        for f in (0.0, 0.04, 0.2):
            assert tpr_at_fpr(s, f) == pytest.approx(scan_tpr(s, f))


def test_tpr_target_range():
    with pytest.raises(ConfigError):
        tpr_at_fpr(scores([1.0], [0.0]), 1.5)


def test_delong_degenerate_flag():
    est = delong_ci(scores([0.9, 0.8], [0.1, 0.2]))
    assert est.flags == ["degenerate"]
    assert est.lower == est.point == est.upper == 1.0
    assert delong_p_value(scores([0.9, 0.8], [0.1, 0.2])) == 0.0


def test_delong_variance_by_hand():
    # V10 = (1, 1/2), V01 = (1/2, 1): each sample variance 1/8, halved per class
    assert delong_variance(scores([0.9, 0.2], [0.8, 0.1])) == pytest.approx(0.125)


def test_delong_ci_is_clipped_and_centred():
    s = scores([0.9, 0.2], [0.8, 0.1])
    est = delong_ci(s)
    half = norm.ppf(0.975) * np.sqrt(0.125)
    assert est.point == pytest.approx(0.75)
    assert est.lower == pytest.approx(0.75 - half)
    assert est.upper == 1.0


def test_delong_needs_two_per_class():
    with pytest.raises(InsufficientDataError):
        delong_ci(scores([0.9], [0.1, 0.2]))


@pytest.mark.slow
def test_delong_coverage():
    rng = np.random.default_rng(3)
    shift = np.sqrt(2) * norm.ppf(0.75)
    covered = 0
    for _ in range(1000):
        est = delong_ci(scores(rng.normal(shift, 1, 200), rng.normal(0, 1, 200)))
        covered += est.lower <= 0.75 <= est.upper
    assert 930 <= covered <= 970


def test_bootstrap_identical_scores():
    est = bootstrap_ci(scores([0.5] * 4, [0.5] * 4), auc, resamples=50)
    assert est.lower == est.point == est.upper == 0.5


def test_bootstrap_is_deterministic():
    s = scores([0.9, 0.4, 0.6], [0.5, 0.1, 0.3])
    a = bootstrap_ci(s, auc, resamples=200, seed=4)
    b = bootstrap_ci(s, auc, resamples=200, seed=4)
    assert a == b
    assert a.method == "bootstrap-percentile"


def test_bootstrap_brackets_point():
    rng = np.random.default_rng(5)
    for _ in range(50):
        s = scores(rng.normal(0.3, 1, 15), rng.normal(0, 1, 15))
        est = bootstrap_ci(s, lambda x: tpr_at_fpr(x, 0.1), resamples=100, seed=1)
        assert est.lower <= est.point <= est.upper


def test_bootstrap_needs_resamples():
    with pytest.raises(ConfigError):
        bootstrap_ci(scores([1.0], [0.0]), auc, resamples=0)


@pytest.mark.parametrize("p,expected", [
    ([0.01, 0.04, 0.03], [True, False, False]),
    ([1.0, 1.0, 1.0], [False, False, False]),
    ([0.04], [True]),
])
def test_holm_examples(p, expected):
    assert holm_bonferroni(p, 0.05) == expected


def test_holm_matches_hand_oracle_and_dominates_bonferroni():
    rng = np.random.default_rng(6)
    for _ in range(100):
        p = (rng.uniform(size=rng.integers(1, 12)) ** 3).tolist()
        holm = holm_bonferroni(p, 0.05)
        assert holm == holm_by_hand(p, 0.05)
        assert all(h or not b for h, b in zip(holm, bonferroni(p, 0.05)))


def test_p_values_out_of_range():
    with pytest.raises(ConfigError):
        holm_bonferroni([0.5, 1.2])
