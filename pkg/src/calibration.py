"""Threshold calibration on the development non-member split."""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

from src.diffusion import Clip
from src.errors import ArtifactError, ConfigError, InsufficientDataError, SplitViolationError
from src.models import CalibrationConfig, ExperimentConfig
from src.probe.perturbation import unit_direction
from src.probe.scoring import ProbeContext
from src.registry import check_fingerprint, fingerprint

logger = logging.getLogger(__name__)

PERCENTILE_METHOD = "nearest-rank"


def nearest_rank_percentile(values: Iterable[float], percentile: float) -> float:
    """Smallest value with at least P% of the sample at or below it."""
    ordered = sorted(float(v) for v in values)
    if not ordered:
        raise InsufficientDataError("percentile of an empty sample")
    if not 0 < percentile < 100:
        raise ConfigError(f"percentile must lie in (0, 100), got {percentile}")
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return ordered[rank - 1]


def calibration_fingerprint(config: ExperimentConfig, schedule_fp: str, t: int, metric: str,
                            checkpoint_fp: str = "") -> str:
    return fingerprint({
        "schedule": schedule_fp,
        "checkpoint": checkpoint_fp,
        "reverse": {"stride": config.reverse.stride, "max_calls": config.reverse.max_calls},
        "t": t,
        "metric": metric,
        "distances": asdict(config.distances),
        "mode": config.run.mode,
        "latent_stride": config.run.latent_stride if config.run.mode == "latent" else None,
    })


@dataclass
class CalibrationResult:
    tau: float
    samples: int
    directions: int
    percentile: float
    eta_ref: float
    t: int
    metric: str
    fingerprint: str
    values: list[float] = field(default_factory=list)
    method: str = PERCENTILE_METHOD
    valid: bool = True

    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "samples": self.samples, "directions": self.directions,
            "percentile": self.percentile, "eta_ref": self.eta_ref, "t": self.t,
            "metric": self.metric, "fingerprint": self.fingerprint, "values": list(self.values),
            "method": self.method, "valid": self.valid,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationResult":
        try:
            return cls(**data)
        except TypeError as e:
            raise ArtifactError(f"malformed calibration document: {e}") from e

    def require(self, expected_fingerprint: str) -> float:
        """τ for an attack whose configuration hashes to ``expected_fingerprint``."""
        check_fingerprint("calibration", self.fingerprint, expected_fingerprint)
        if not self.valid:
            raise ConfigError("calibration is invalid (τ = 0); raise calibration.eta_ref")
        return self.tau


def direction_tag(index: int) -> str:
    return f"calibration/dir{index}"


def clip_degradations(clip: Clip, ctx: ProbeContext, config: CalibrationConfig) -> list[float]:
    """D at budget η_ref along each of L unit Gaussian directions, forward ε fixed per clip."""
    objective = ctx.objective(clip, 0)
    values = []
    for i in range(config.directions):
        if config.eta_ref == 0:
            values.append(0.0)
            continue
        u = unit_direction(ctx.seeds.gaussian(clip.id, ctx.t, direction_tag(i), (objective.dim,)))
        values.append(objective.value(config.eta_ref * u))
    return values


def calibrate_tau(dev_set: list[Clip], ctx: ProbeContext, config: CalibrationConfig,
                  fingerprint_value: str = "", values: Optional[list[list[float]]] = None) -> CalibrationResult:
    """τ = nearest-rank P-th percentile of D over dev clips × directions.

    ``values`` lets the caller pass per-clip degradations computed elsewhere
    (e.g. by a worker pool); they are then used instead of recomputing.
    """
    if not dev_set:
        raise InsufficientDataError("calibration needs at least one dev-nonmember clip")
    wrong = [c.id for c in dev_set if c.split != "dev-nonmember"]
    if wrong:
        raise SplitViolationError([f"clip {cid} is not in the dev-nonmember split" for cid in wrong])
    if values is None:
        values = [clip_degradations(clip, ctx, config) for clip in dev_set]
    flat = sorted(v for per_clip in values for v in per_clip)
    tau = nearest_rank_percentile(flat, config.percentile)
    valid = tau > 0
    if not valid:
        logger.warning("calibration produced τ = 0 (η_ref = %g); the result is flagged invalid", config.eta_ref)
    logger.info("calibrated τ=%.6g from %d clips × %d directions (P%g)",
                tau, len(dev_set), config.directions, config.percentile)
    return CalibrationResult(
        tau=tau, samples=len(dev_set), directions=config.directions, percentile=config.percentile,
        eta_ref=config.eta_ref, t=ctx.t, metric=ctx.metric_kind, fingerprint=fingerprint_value,
        values=flat, valid=valid,
    )

