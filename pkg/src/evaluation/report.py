"""Run reports: endpoint tables per attack, Δ versus the best baseline, text rendering."""

import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import jinja2
import numpy as np

from src.errors import InsufficientDataError
from src.evaluation.stats import (
    IntervalEstimate, RocCurve, ScoreSet, auc, bootstrap_ci, delong_ci, delong_p_value, roc_curve,
    tpr_at_fpr,
)
from src.models import EvaluationConfig, ScoreRecord
from src.probe.cost import SATURATED_LOW
from src.probe.scoring import ATTACK_NAME

NOT_IMPLEMENTED = ["secmi"]

_env = jinja2.Environment(
    loader=jinja2.FileSystemLoader(os.path.join(os.path.dirname(__file__), "templates")),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


@dataclass
class AttackEndpoints:
    attack: str
    n_members: int
    n_nonmembers: int
    auc: IntervalEstimate
    auc_bootstrap: IntervalEstimate
    tpr: dict[float, IntervalEstimate]
    p_value: float
    mean_ledger: dict[str, float]
    saturation_rate: Optional[float]
    roc: RocCurve

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "n_members": self.n_members,
            "n_nonmembers": self.n_nonmembers,
            "auc": self.auc.to_dict(),
            "auc_bootstrap": self.auc_bootstrap.to_dict(),
            "tpr_at_fpr": {f"{k:g}": v.to_dict() for k, v in self.tpr.items()},
            "p_value": self.p_value,
            "mean_ledger": self.mean_ledger,
            "saturation_rate": self.saturation_rate,
            "roc": self.roc.to_dict(),
        }


def mean_ledger(records: list[ScoreRecord]) -> dict[str, float]:
    rows = [r.ledger.to_dict() for r in records]
    return {key: float(np.mean([row[key] for row in rows])) for key in sorted(rows[0])}


def evaluate_attack(records: list[ScoreRecord], config: EvaluationConfig,
                    attack: Optional[str] = None) -> AttackEndpoints:
    records = [r for r in records if attack is None or r.attack == attack]
    if not records:
        raise InsufficientDataError(f"no records for attack {attack!r}")
    name = attack or records[0].attack
    scores = ScoreSet.from_records(records).require(per_class=2)
    tpr = {
        target: bootstrap_ci(scores, lambda s, f=target: tpr_at_fpr(s, f), config.bootstrap_resamples,
                             config.level, config.seed)
        for target in config.fpr_targets
    }
    saturation = None
    if name == ATTACK_NAME:
        saturation = sum(SATURATED_LOW in r.flags for r in records) / len(records)
    return AttackEndpoints(
        attack=name,
        n_members=len(scores.members),
        n_nonmembers=len(scores.nonmembers),
        auc=delong_ci(scores, config.level),
        auc_bootstrap=bootstrap_ci(scores, auc, config.bootstrap_resamples, config.level, config.seed),
        tpr=tpr,
        p_value=delong_p_value(scores),
        mean_ledger=mean_ledger(records),
        saturation_rate=saturation,
        roc=roc_curve(scores),
    )


def delta_vs_best(ours: AttackEndpoints, baselines: list[AttackEndpoints]) -> dict[str, float]:
    """Per column: ours minus the best baseline in that column."""
    if not baselines:
        return {}
    delta = {"auc": ours.auc.point - max(b.auc.point for b in baselines)}
    for target, est in ours.tpr.items():
        best = max(b.tpr[target].point for b in baselines if target in b.tpr)
        delta[f"tpr@{target:g}"] = est.point - best
    return delta


@dataclass
class RunReport:
    endpoints: list[AttackEndpoints]
    delta: dict[str, float] = field(default_factory=dict)
    fingerprints: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    not_implemented: list[str] = field(default_factory=lambda: list(NOT_IMPLEMENTED))
    generated_at: str = ""

    def to_dict(self) -> dict:
        return {
            "generated_at": self.generated_at,
            "endpoints": [e.to_dict() for e in self.endpoints],
            "delta_vs_best_baseline": self.delta,
            "fingerprints": self.fingerprints,
            "not_implemented": self.not_implemented,
            "config": self.config,
        }

    def render_text(self) -> str:
        return _env.get_template("report.txt.j2").render(
            endpoints=self.endpoints, delta=self.delta, fingerprints=self.fingerprints,
            not_implemented=self.not_implemented, generated_at=self.generated_at,
            schedule=self.config.get("schedule"),
        )


def build_report(records_by_attack: dict[str, list[ScoreRecord]], config: EvaluationConfig,
                 fingerprints: Optional[dict[str, str]] = None,
                 experiment: Optional[dict] = None) -> RunReport:
    endpoints = [evaluate_attack(records, config, attack)
                 for attack, records in sorted(records_by_attack.items())]
    ours = [e for e in endpoints if e.attack == ATTACK_NAME]
    baselines = [e for e in endpoints if e.attack != ATTACK_NAME]
    return RunReport(
        endpoints=endpoints,
        delta=delta_vs_best(ours[0], baselines) if ours else {},
        fingerprints=fingerprints or {},
        config=experiment or {},
        generated_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
