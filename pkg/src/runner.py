"""Experiment stages over a run directory, and the ablation sweep."""

import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from src.baselines import baseline_unit_cost, match_compute, run_baseline
from src.calibration import CalibrationResult, calibrate_tau, calibration_fingerprint, clip_degradations
from src.checkpoint import load_checkpoint, save_checkpoint
from src.corpus import CorpusGenerator, Manifest, load_clips
from src.denoiser import MLPDenoiser, build_arch, init_params, train
from src.diffusion import Clip, NoiseSchedule, TimestepSpec, schedule_from_config
from src.errors import ArtifactError, InsufficientDataError
from src.evaluation.report import build_report, evaluate_attack
from src.evaluation.stats import bonferroni, holm_bonferroni
from src.models import ExperimentConfig, ScoreRecord
from src.pool import map_samples
from src.probe.cost import SATURATED_LOW
from src.probe.scoring import ATTACK_NAME, ProbeContext, score_fixed_budget, score_sample
from src.registry import RunDirectory, check_fingerprint, file_fingerprint, fingerprint
from src.sampler import LatentCodec
from src.scores import load_scores, persist_scores
from src.validator import require_clean

logger = logging.getLogger(__name__)


@dataclass
class StageResult:
    stage: str
    artifacts: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


@dataclass
class SweepCell:
    axis: str
    value: object
    name: str
    t: int
    eta_max: float
    metric: str
    auc: float
    tpr: float
    p_value: float
    holm_reject: bool = False
    bonferroni_reject: bool = False
    fixed_budget_auc: Optional[float] = None


@dataclass
class SweepSummary:
    cells: list[SweepCell]
    alpha: float
    fpr_target: float

    @property
    def family_size(self) -> int:
        return len(self.cells)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "family_size": self.family_size, "fpr_target": self.fpr_target,
                "cells": [asdict(c) for c in self.cells]}


# ── worker entry points (module level so the pool can pickle them) ──

def _calibrate_clip(clip: Clip, context: tuple) -> list[float]:
    ctx, calibration = context
    return clip_degradations(clip, ctx, calibration)


def _score_clip(clip: Clip, ctx: ProbeContext) -> ScoreRecord:
    return score_sample(clip, ctx)


def _fixed_budget_clip(clip: Clip, context: tuple) -> ScoreRecord:
    ctx, eta = context
    return score_fixed_budget(clip, ctx, eta)


def _baseline_clip(clip: Clip, context: tuple) -> ScoreRecord:
    kind, ctx, repetitions, timesteps, offset, p = context
    return run_baseline(kind, clip, ctx, repetitions, timesteps, offset, p)


class Pipeline:
    def __init__(self, config: ExperimentConfig, run_dir: Optional[RunDirectory] = None):
        self.config = config
        self.run_dir = (run_dir or RunDirectory(config.run.run_dir)).ensure()
        self.schedule: NoiseSchedule = schedule_from_config(config.schedule)
        self._model: Optional[tuple[MLPDenoiser, Optional[LatentCodec]]] = None

    # ── corpus ──

    def gen_data(self) -> StageResult:
        manifest, created = CorpusGenerator(self.run_dir.corpus_dir).generate(
            self.config.corpus, self.config.run.seed)
        require_clean(manifest)
        path = self.run_dir.write_json(self.run_dir.manifest_path, manifest.to_dict())
        counts = {s: len(manifest.split(s)) for s in ("member", "dev-nonmember", "eval-nonmember")}
        return StageResult("gen-data", created + [path], counts)

    def manifest(self) -> Manifest:
        manifest = Manifest.from_dict(self.run_dir.read_json(self.run_dir.manifest_path))
        require_clean(manifest, self.run_dir.corpus_dir)
        return manifest

    def clips(self, split: str) -> list[Clip]:
        return load_clips(self.manifest(), self.run_dir.corpus_dir, split)

    def scored_clips(self) -> list[Clip]:
        """Members followed by eval non-members."""
        clips = self.clips("member") + self.clips("eval-nonmember")
        if not clips:
            raise InsufficientDataError("no member or eval-nonmember clips to score")
        return clips

    # ── model ──

    def codec(self) -> Optional[LatentCodec]:
        if self.config.run.mode != "latent":
            return None
        n = self.config.corpus.clip_length
        return LatentCodec.truncated_dct(n, n // self.config.run.latent_stride)

    def _arch(self):
        codec = self.codec()
        dim = codec.m if codec else self.config.corpus.clip_length
        d = self.config.denoiser
        return build_arch(dim, self.schedule.T, d.hidden, d.activation, d.embedding_dim)

    def train(self) -> StageResult:
        members = self.clips("member")
        codec = self.codec()
        data = [codec.encode_array(c.samples) if codec else c.samples for c in members]
        arch = self._arch()
        logger.info("training %s denoiser (dim=%d) on %d member clips for %d steps",
                    self.config.run.mode, arch.dim, len(data), self.config.train.steps)
        result = train(init_params(arch, self.config.train.seed), data, self.schedule, self.config.train)
        path = save_checkpoint(self.run_dir.checkpoint_path, result.params)
        sidecar = {
            "arch": asdict(arch),
            "train": asdict(self.config.train),
            "schedule_fingerprint": self.schedule.fingerprint(),
            "mode": self.config.run.mode,
            "codec_dim": codec.m if codec else None,
            "loss_trace": result.loss_trace,
        }
        meta = self.run_dir.write_json(self.run_dir.checkpoint_meta_path, sidecar)
        self._model = None
        final = result.loss_trace[-1] if result.loss_trace else None
        return StageResult("train", [path, meta], {"steps": len(result.loss_trace), "final_loss": final})

    def model(self) -> tuple[MLPDenoiser, Optional[LatentCodec]]:
        if self._model is None:
            meta = self.run_dir.read_json(self.run_dir.checkpoint_meta_path)
            check_fingerprint("checkpoint schedule", meta.get("schedule_fingerprint", ""),
                              self.schedule.fingerprint())
            if meta.get("mode") != self.config.run.mode:
                raise ArtifactError(f"checkpoint was trained in {meta.get('mode')!r} mode, "
                                    f"config asks for {self.config.run.mode!r}")
            params = load_checkpoint(self.run_dir.require(self.run_dir.checkpoint_path), self._arch())
            self._model = (MLPDenoiser(params), self.codec())
        return self._model

    # ── probe context ──

    def timestep(self, t_ratio: Optional[float] = None) -> int:
        if t_ratio is not None:
            return TimestepSpec(t_ratio=t_ratio).resolve(self.schedule)
        return TimestepSpec(self.config.attack.t, self.config.attack.t_ratio).resolve(self.schedule)

    def context(self, t: int, metric: Optional[str] = None, tau: Optional[float] = None,
                eta_max: Optional[float] = None) -> ProbeContext:
        denoiser, codec = self.model()
        ctx = ProbeContext.from_config(self.config, denoiser, self.schedule, t, tau, codec, metric)
        if eta_max is not None:
            ctx = replace(ctx, attack=replace(ctx.attack, eta_max=eta_max))
        return ctx

    def calibration_fingerprint(self, t: int, metric: str) -> str:
        checkpoint = file_fingerprint(self.run_dir.require(self.run_dir.checkpoint_path))
        return calibration_fingerprint(self.config, self.schedule.fingerprint(), t, metric, checkpoint)

    @staticmethod
    def calibration_tag(t: int, metric: str) -> str:
        return f"{metric}-t{t}"

    # ── stages ──

    def calibrate(self, t_ratio: Optional[float] = None, metric: Optional[str] = None) -> StageResult:
        t = self.timestep(t_ratio)
        metric = metric or self.config.attack.metric
        ctx = self.context(t, metric)
        dev = self.clips("dev-nonmember")
        values = map_samples(_calibrate_clip, dev, (ctx, self.config.calibration), self.config.run.workers)
        result = calibrate_tau(dev, ctx, self.config.calibration, self.calibration_fingerprint(t, metric), values)
        path = self.run_dir.write_json(self.run_dir.calibration_path(self.calibration_tag(t, metric)),
                                       result.to_dict())
        return StageResult("calibrate", [path], {"tau": result.tau, "t": t, "metric": metric,
                                                 "valid": result.valid})

    def load_tau(self, t: int, metric: str) -> float:
        if self.config.attack.tau is not None:
            return self.config.attack.tau
        path = self.run_dir.calibration_path(self.calibration_tag(t, metric))
        result = CalibrationResult.from_dict(self.run_dir.read_json(path))
        return result.require(self.calibration_fingerprint(t, metric))

    def attack(self, t_ratio: Optional[float] = None, eta_max: Optional[float] = None,
               metric: Optional[str] = None, name: str = ATTACK_NAME) -> StageResult:
        t = self.timestep(t_ratio)
        metric = metric or self.config.attack.metric
        clips = self.scored_clips()
        ctx = self.context(t, metric, self.load_tau(t, metric), eta_max)
        logger.info("attack %s: %d clips at t=%d, η_max=%g, metric=%s, τ=%.6g",
                    name, len(clips), t, ctx.attack.eta_max, metric, ctx.tau)
        records = map_samples(_score_clip, clips, ctx, self.config.run.workers)
        path = persist_scores(records, self.run_dir.scores_path(name))
        saturation = sum(SATURATED_LOW in r.flags for r in records) / len(records)
        logger.info("attack %s: saturation rate %.1f%%", name, 100 * saturation)
        self._record_timings(name, records)
        return StageResult("attack", [path], {"records": len(records), "saturation_rate": saturation,
                                              "t": t, "tau": ctx.tau})

    def baseline(self) -> StageResult:
        t = self.timestep()
        clips = self.scored_clips()
        ctx = self.context(t)
        cfg = self.config.baselines
        target = None
        if cfg.repetitions is None:
            attack_records = load_scores(self.run_dir.require(self.run_dir.scores_path(ATTACK_NAME)))
            target = float(np.mean([r.ledger.network_calls for r in attack_records]))
        artifacts, summary = [], {}
        for kind in cfg.kinds:
            timesteps = cfg.timesteps if kind in ("loss", "endpoint") else None
            if cfg.repetitions is not None:
                repetitions = cfg.repetitions
            else:
                unit = baseline_unit_cost(kind, ctx, timesteps, cfg.trajectory_offset)
                repetitions = match_compute(target, unit, cfg.parity_tolerance)
            records = map_samples(
                _baseline_clip, clips,
                (kind, ctx, repetitions, timesteps, cfg.trajectory_offset, cfg.trajectory_norm),
                self.config.run.workers,
            )
            achieved = float(np.mean([r.ledger.network_calls for r in records]))
            if target is not None:
                logger.info("baseline %s: %d repetitions, %.1f network calls/sample vs attack %.1f",
                            kind, repetitions, achieved, target)
            artifacts.append(persist_scores(records, self.run_dir.scores_path(kind)))
            self._record_timings(kind, records)
            summary[kind] = {"repetitions": repetitions, "network_calls": achieved}
        return StageResult("baseline", artifacts, summary)

    def score_files(self) -> dict[str, list[ScoreRecord]]:
        scores_dir = os.path.join(self.run_dir.root, "scores")
        names = sorted(f[:-len(".jsonl")] for f in os.listdir(scores_dir) if f.endswith(".jsonl")) \
            if os.path.isdir(scores_dir) else []
        names = [n for n in names if not n.startswith("sweep-")]
        if not names:
            raise ArtifactError(f"no score files under {scores_dir}")
        return {name: load_scores(self.run_dir.scores_path(name)) for name in names}

    def evaluate(self, names: Optional[list[str]] = None) -> StageResult:
        files = self.score_files()
        if names:
            missing = [n for n in names if n not in files]
            if missing:
                raise ArtifactError(f"no score file for: {', '.join(missing)}")
            files = {n: files[n] for n in names}
        endpoints = {name: evaluate_attack(records, self.config.evaluation, name).to_dict()
                     for name, records in files.items()}
        path = self.run_dir.write_json(self.run_dir.report_path("evaluation.json"), endpoints)
        summary = {name: e["auc"]["point"] for name, e in endpoints.items()}
        return StageResult("evaluate", [path], summary)

    def fingerprints(self) -> dict[str, str]:
        t = self.timestep()
        return {
            "config": fingerprint(self.config.to_dict()),
            "schedule": self.schedule.fingerprint(),
            "calibration": self.calibration_fingerprint(t, self.config.attack.metric),
        }

    def report(self) -> StageResult:
        report = build_report(self.score_files(), self.config.evaluation, self.fingerprints(),
                              self.config.to_dict())
        json_path = self.run_dir.write_json(self.run_dir.report_path("report.json"), report.to_dict())
        text = report.render_text()
        text_path = self.run_dir.report_path("report.txt")
        with open(text_path, "w") as f:
            f.write(text)
        return StageResult("report", [json_path, text_path], {"text": text, "delta": report.delta})

    # ── sweep ──

    def _cell(self, axis: str, value, t_ratio: Optional[float], eta_max: Optional[float],
              metric: Optional[str], recalibrate: bool) -> SweepCell:
        name = f"sweep-{axis}-{value}"
        t = self.timestep(t_ratio)
        metric = metric or self.config.attack.metric
        tag_path = self.run_dir.calibration_path(self.calibration_tag(t, metric))
        if self.config.attack.tau is None and (recalibrate or not os.path.exists(tag_path)):
            self.calibrate(t_ratio, metric)
        stage = self.attack(t_ratio, eta_max, metric, name=name)
        records = load_scores(stage.artifacts[0])
        scores_eta = eta_max if eta_max is not None else self.config.attack.eta_max
        for r in records:
            if not 0 <= r.score <= scores_eta + 1e-12:
                raise ArtifactError(f"{name}: budget {r.score} outside [0, {scores_eta}] for {r.sample_id}")
        endpoints = evaluate_attack(records, self.config.evaluation, ATTACK_NAME)
        target = self.config.evaluation.fpr_targets[0]
        cell = SweepCell(axis=axis, value=value, name=name, t=t, eta_max=scores_eta, metric=metric,
                         auc=endpoints.auc.point, tpr=endpoints.tpr[target].point,
                         p_value=endpoints.p_value)
        if axis == "eta_max":
            cell.fixed_budget_auc = self._fixed_budget_auc(t, metric, scores_eta, f"sweep-fixed-{value}")
        return cell

    def _fixed_budget_auc(self, t: int, metric: str, eta: float, name: str) -> float:
        """AUC of max_{‖δ̃‖ ≤ η} D as a score, for comparison with the cost at the same budget."""
        ctx = self.context(t, metric, eta_max=eta)
        clips = self.scored_clips()
        records = map_samples(_fixed_budget_clip, clips, (ctx, eta), self.config.run.workers)
        persist_scores(records, self.run_dir.scores_path(name))
        return evaluate_attack(records, self.config.evaluation).auc.point

    def sweep(self) -> SweepSummary:
        s = self.config.sweep
        cells = []
        for r in s.t_ratios:
            cells.append(self._cell("t_ratio", r, r, None, None, recalibrate=True))
        for eta in s.eta_maxes:
            cells.append(self._cell("eta_max", eta, None, eta, None, recalibrate=False))
        for metric in s.metrics:
            cells.append(self._cell("metric", metric, None, None, metric, recalibrate=True))
        alpha = self.config.evaluation.alpha
        p_values = [c.p_value for c in cells]
        for cell, holm, bonf in zip(cells, holm_bonferroni(p_values, alpha), bonferroni(p_values, alpha)):
            cell.holm_reject, cell.bonferroni_reject = holm, bonf
        summary = SweepSummary(cells=cells, alpha=alpha, fpr_target=self.config.evaluation.fpr_targets[0])
        self.run_dir.write_json(self.run_dir.report_path("sweep.json"), summary.to_dict())
        return summary

    # ── bookkeeping ──

    def _record_timings(self, name: str, records: list[ScoreRecord]) -> None:
        path = self.run_dir.report_path("timings.json")
        timings = self.run_dir.read_json(path) if os.path.exists(path) else {}
        timings[name] = {
            "total_seconds": sum(r.ledger.wall_clock for r in records),
            "mean_seconds": float(np.mean([r.ledger.wall_clock for r in records])),
        }
        self.run_dir.write_json(path, timings)
