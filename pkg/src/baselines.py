"""Loss-aligned and trajectory membership baselines, plus compute-parity matching."""

import logging
import math
import time
from typing import Optional

import numpy as np

from src import autodiff as ad
from src.denoiser import denoising_loss
from src.diffusion import Clip, check_timestep, forward_noise
from src.errors import ConfigError, ParityError
from src.models import ComputeLedger, ScoreRecord
from src.probe.perturbation import norm
from src.probe.scoring import ProbeContext, forward_tag
from src.sampler import ddim_step, resolve_stride, reverse_from, timestep_path

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("loss", "endpoint", "trajectory")


def _start(clip: Clip, ctx: ProbeContext) -> np.ndarray:
    """x₀ in the space the denoiser runs in."""
    return ctx.codec.encode_array(clip.samples) if ctx.codec is not None else clip.samples


def _epsilon(clip: Clip, ctx: ProbeContext, t: int, repetition: int) -> np.ndarray:
    return ctx.seeds.gaussian(clip.id, t, forward_tag(repetition), (ctx.denoiser.dim,))


def default_offset(t: int) -> int:
    return t // 2


def _record(clip: Clip, kind: str, values: list[float], repetitions: int, ledger: ComputeLedger,
            started: float) -> ScoreRecord:
    ledger.wall_clock = time.perf_counter() - started
    return ScoreRecord(sample_id=clip.id, split=clip.split, attack=kind, score=-float(np.mean(values)),
                       repetitions=repetitions, ledger=ledger)


def loss_score(clip: Clip, ctx: ProbeContext, repetitions: int = 1,
               timesteps: Optional[list[int]] = None) -> ScoreRecord:
    """−mean ‖ε − ε_θ(x_t, t)‖²/n over repetitions and the timestep set."""
    timesteps = timesteps or [ctx.t]
    x0 = _start(clip, ctx)
    started = time.perf_counter()
    ledger = ComputeLedger()
    values = []
    for t in timesteps:
        for s in range(repetitions):
            values.append(denoising_loss(ctx.denoiser, x0, t, _epsilon(clip, ctx, t, s), ctx.schedule))
            ledger.network_calls += 1
    return _record(clip, "loss", values, repetitions, ledger, started)


def endpoint_score(clip: Clip, ctx: ProbeContext, repetitions: int = 1,
                   timesteps: Optional[list[int]] = None) -> ScoreRecord:
    """−mean D(x₀, R_t(x_t)) with the configured metric."""
    timesteps = timesteps or [ctx.t]
    metric = ctx.metric
    x0 = _start(clip, ctx)
    started = time.perf_counter()
    ledger = ComputeLedger()
    values = []
    for t in timesteps:
        for s in range(repetitions):
            x_t = forward_noise(ctx.schedule, x0, t, _epsilon(clip, ctx, t, s))
            recon = reverse_from(ad.const(x_t), t, ctx.denoiser, ctx.schedule, ctx.reverse, ledger)
            if ctx.codec is not None:
                recon = ctx.codec.decode(recon)
                ledger.decoder_calls += 1
            values.append(float(ad.evaluate(metric(ad.const(clip.samples), recon))))
            ledger.metric_evaluations += 1
    return _record(clip, "endpoint", values, repetitions, ledger, started)


def trajectory_path(t: int, offset: int, ctx: ProbeContext) -> list[int]:
    """DDIM indices from t down to t − offset (exclusive of the landing index)."""
    if offset < 1 or t - offset < 1:
        raise ConfigError(f"trajectory offset needs 1 <= t - t' < t, got t={t}, t'={offset}")
    stride = resolve_stride(offset + 1, ctx.reverse)
    return list(range(t, t - offset, -stride))


def trajectory_score(clip: Clip, ctx: ProbeContext, offset: Optional[int] = None, p: str = "2",
                     repetitions: int = 1, t: Optional[int] = None) -> ScoreRecord:
    """−‖x_{t−t′} − x′_{t−t′}‖_p: ground truth re-noised with the same ε, prediction by DDIM."""
    t = t or ctx.t
    check_timestep(ctx.schedule, t)
    offset = default_offset(t) if offset is None else offset
    path = trajectory_path(t, offset, ctx)
    target = t - offset
    x0 = _start(clip, ctx)
    started = time.perf_counter()
    ledger = ComputeLedger()
    values = []
    for s in range(repetitions):
        eps = _epsilon(clip, ctx, t, s)
        node = ad.const(forward_noise(ctx.schedule, x0, t, eps))
        for i, step in enumerate(path):
            prev = path[i + 1] if i + 1 < len(path) else target
            node = ddim_step(node, step, ctx.denoiser, ctx.schedule, t_prev=prev)
        predicted = ad.evaluate(node)
        truth = forward_noise(ctx.schedule, x0, target, eps)
        values.append(norm(truth - predicted, p))
        ledger.network_calls += len(path)
    return _record(clip, "trajectory", values, repetitions, ledger, started)


def baseline_unit_cost(kind: str, ctx: ProbeContext, timesteps: Optional[list[int]] = None,
                       offset: Optional[int] = None) -> int:
    """Network calls one repetition of a baseline costs."""
    timesteps = timesteps or [ctx.t]
    if kind == "loss":
        return len(timesteps)
    if kind == "endpoint":
        return sum(len(timestep_path(t, ctx.reverse)) for t in timesteps)
    if kind == "trajectory":
        offset = default_offset(ctx.t) if offset is None else offset
        return len(trajectory_path(ctx.t, offset, ctx))
    raise ConfigError(f"unknown baseline kind {kind!r}")


def match_compute(target: float, unit: float, tolerance: float = 0.05) -> int:
    """Repetitions r minimising |r·unit − target|, required within ±tolerance of target."""
    if target <= 0 or unit <= 0:
        raise ConfigError(f"compute parity needs positive costs, got target={target}, unit={unit}")
    if unit > (1.0 + tolerance) * target:
        raise ParityError(f"baseline unit cost {unit:g} exceeds {1 + tolerance:g} × target {target:g}")
    low = max(1, math.floor(target / unit))
    best = min((low, low + 1), key=lambda r: (abs(r * unit - target), r))
    achieved = best * unit
    if abs(achieved - target) / target > tolerance:
        raise ParityError(f"cannot match {target:g} within ±{tolerance:.0%} with unit {unit:g}")
    logger.info("compute parity: %d repetitions × %g = %g vs target %g", best, unit, achieved, target)
    return best


def run_baseline(kind: str, clip: Clip, ctx: ProbeContext, repetitions: int,
                 timesteps: Optional[list[int]] = None, offset: Optional[int] = None,
                 p: str = "2") -> ScoreRecord:
    if kind == "loss":
        return loss_score(clip, ctx, repetitions, timesteps)
    if kind == "endpoint":
        return endpoint_score(clip, ctx, repetitions, timesteps)
    if kind == "trajectory":
        return trajectory_score(clip, ctx, offset, p, repetitions)
    raise ConfigError(f"unknown baseline kind {kind!r}")
