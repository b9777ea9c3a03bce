"""ROC, AUC with DeLong and bootstrap intervals, TPR at fixed FPR, and multiplicity control.

Every statistic sees scores only through ``ScoreSet``, which stores each class
sorted so results do not depend on record order.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.stats import norm, rankdata

from src.errors import ConfigError, InsufficientDataError
from src.models import ScoreRecord
from src.seeds import make_generator


@dataclass(frozen=True)
class ScoreSet:
    members: np.ndarray
    nonmembers: np.ndarray

    def __post_init__(self):
        for name in ("members", "nonmembers"):
            values = np.sort(np.asarray(getattr(self, name), dtype=np.float64))
            if not np.all(np.isfinite(values)):
                raise ValueError(f"non-finite {name} score")
            object.__setattr__(self, name, values)

    @classmethod
    def from_records(cls, records: Iterable[ScoreRecord], attack: Optional[str] = None) -> "ScoreSet":
        members, nonmembers = [], []
        for r in records:
            if attack is not None and r.attack != attack:
                continue
            (members if r.is_member else nonmembers).append(r.score)
        return cls(np.array(members), np.array(nonmembers))

    def require(self, per_class: int = 1) -> "ScoreSet":
        if len(self.members) < per_class or len(self.nonmembers) < per_class:
            raise InsufficientDataError(
                f"need >= {per_class} member and non-member score(s), got "
                f"{len(self.members)} and {len(self.nonmembers)}"
            )
        return self

    def swapped(self) -> "ScoreSet":
        return ScoreSet(self.nonmembers, self.members)


@dataclass
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    method: str
    level: float = 0.95
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"point": self.point, "lower": self.lower, "upper": self.upper,
                "method": self.method, "level": self.level, "flags": list(self.flags)}


@dataclass
class RocCurve:
    thresholds: list[float]
    fpr: list[float]
    tpr: list[float]

    def to_dict(self) -> dict:
        # the (0, 0) point sits above every score; JSON has no infinity, so it is written as null
        thresholds = [t if math.isfinite(t) else None for t in self.thresholds]
        return {"thresholds": thresholds, "fpr": self.fpr, "tpr": self.tpr}


def auc(scores: ScoreSet) -> float:
    """P(member score > non-member score) with ties counted ½."""
    scores.require()
    m, n = len(scores.members), len(scores.nonmembers)
    ranks = rankdata(np.concatenate([scores.members, scores.nonmembers]))
    return float((ranks[:m].sum() - m * (m + 1) / 2.0) / (m * n))


def roc_curve(scores: ScoreSet) -> RocCurve:
    """Operating points of the rule "score > θ ⇒ member"; tied scores flip together.

    Point i uses θ just below the i-th largest distinct score; the first point
    (θ = +inf) is (0, 0) and the last is (1, 1).
    """
    scores.require()
    thresholds = np.unique(np.concatenate([scores.members, scores.nonmembers]))[::-1]
    m, n = len(scores.members), len(scores.nonmembers)
    # counts of scores >= v for each distinct v
    tp = m - np.searchsorted(scores.members, thresholds, side="left")
    fp = n - np.searchsorted(scores.nonmembers, thresholds, side="left")
    return RocCurve(
        thresholds=[float("inf")] + thresholds.tolist(),
        fpr=[0.0] + (fp / n).tolist(),
        tpr=[0.0] + (tp / m).tolist(),
    )


def tpr_at_fpr(scores: ScoreSet, fpr_target: float) -> float:
    """Largest TPR over thresholds whose empirical FPR is at most the target."""
    if not 0 <= fpr_target <= 1:
        raise ConfigError(f"FPR target must lie in [0, 1], got {fpr_target}")
    curve = roc_curve(scores)
    return max(t for f, t in zip(curve.fpr, curve.tpr) if f <= fpr_target + 1e-15)


def _structural_components(scores: ScoreSet) -> tuple[float, np.ndarray, np.ndarray]:
    m, n = len(scores.members), len(scores.nonmembers)
    pooled = rankdata(np.concatenate([scores.members, scores.nonmembers]))
    r_pos, r_neg = rankdata(scores.members), rankdata(scores.nonmembers)
    v10 = (pooled[:m] - r_pos) / n  # share of non-members each member beats
    v01 = 1.0 - (pooled[m:] - r_neg) / m  # share of members beating each non-member
    point = float((pooled[:m].sum() - m * (m + 1) / 2.0) / (m * n))
    return point, v10, v01


def delong_variance(scores: ScoreSet) -> float:
    scores.require(per_class=2)
    _, v10, v01 = _structural_components(scores)
    return float(np.var(v10, ddof=1) / len(v10) + np.var(v01, ddof=1) / len(v01))


def delong_ci(scores: ScoreSet, level: float = 0.95) -> IntervalEstimate:
    scores.require(per_class=2)
    point, v10, v01 = _structural_components(scores)
    var = float(np.var(v10, ddof=1) / len(v10) + np.var(v01, ddof=1) / len(v01))
    if var <= 0:
        return IntervalEstimate(point, point, point, "delong", level, flags=["degenerate"])
    z = norm.ppf(1.0 - (1.0 - level) / 2.0)
    se = np.sqrt(var)
    return IntervalEstimate(point, max(0.0, point - z * se), min(1.0, point + z * se), "delong", level)


def delong_p_value(scores: ScoreSet) -> float:
    """One-sided p-value for AUC > 0.5."""
    scores.require(per_class=2)
    point = auc(scores)
    var = delong_variance(scores)
    if var <= 0:
        return 0.0 if point > 0.5 else 1.0
    return float(norm.sf((point - 0.5) / np.sqrt(var)))


def bootstrap_ci(scores: ScoreSet, statistic: Callable[[ScoreSet], float],
                 resamples: int = 10000, level: float = 0.95, seed: int = 0,
                 clip_unit: bool = True) -> IntervalEstimate:
    """Percentile interval; members and non-members are resampled independently."""
    scores.require()
    if resamples < 1:
        raise ConfigError("bootstrap needs at least one resample")
    point = float(statistic(scores))
    rng = make_generator(seed)
    m, n = len(scores.members), len(scores.nonmembers)
    values = np.empty(resamples)
    for i in range(resamples):
        values[i] = statistic(ScoreSet(scores.members[rng.integers(0, m, m)],
                                       scores.nonmembers[rng.integers(0, n, n)]))
    tail = (1.0 - level) / 2.0
    lower, upper = (float(q) for q in np.quantile(values, [tail, 1.0 - tail]))
    lower, upper = min(lower, point), max(upper, point)
    if clip_unit:
        lower, upper = max(0.0, lower), min(1.0, upper)
    return IntervalEstimate(point, lower, upper, "bootstrap-percentile", level)


def _check_p_values(p_values: list[float]) -> np.ndarray:
    p = np.asarray(p_values, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ConfigError("p-values must lie in [0, 1]")
    return p


def holm_bonferroni(p_values: list[float], alpha: float = 0.05) -> list[bool]:
    """Step-down rejections, returned in input order."""
    p = _check_p_values(p_values)
    m = len(p)
    reject = [False] * m
    for i, idx in enumerate(np.argsort(p, kind="stable")):
        if p[idx] > alpha / (m - i):
            break
        reject[idx] = True
    return reject


def bonferroni(p_values: list[float], alpha: float = 0.05) -> list[bool]:
    p = _check_p_values(p_values)
    return [bool(v <= alpha / len(p)) for v in p]
