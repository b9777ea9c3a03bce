"""Time-normalised perturbations and ℓ_p-ball projection."""

from typing import Union

import numpy as np

from src import autodiff as ad
from src.diffusion import NoiseSchedule, sigma_t
from src.errors import ConfigError, ShapeError

NORMS = ("2", "inf")


def inject(x_t: Union[ad.Node, np.ndarray], delta_tilde: Union[ad.Node, np.ndarray], t: int,
           schedule: NoiseSchedule) -> ad.Node:
    """x_t + σ_t·δ̃."""
    x_t = x_t if isinstance(x_t, ad.Node) else ad.const(x_t)
    delta_tilde = delta_tilde if isinstance(delta_tilde, ad.Node) else ad.const(delta_tilde)
    if x_t.value is not None and delta_tilde.value is not None and x_t.value.shape != delta_tilde.value.shape:
        raise ShapeError(f"inject: x_t {x_t.value.shape} vs perturbation {delta_tilde.value.shape}")
    return x_t + ad.scale(delta_tilde, sigma_t(schedule, t))


def norm(z: np.ndarray, p: str) -> float:
    if p == "2":
        return float(np.linalg.norm(z))
    if p == "inf":
        return float(np.max(np.abs(z))) if z.size else 0.0
    raise ConfigError(f"norm must be one of {NORMS}, got {p!r}")


def project(z: np.ndarray, p: str, eta: float) -> np.ndarray:
    """Nearest point of the ℓ_p ball of radius η."""
    z = np.asarray(z, dtype=np.float64)
    if eta <= 0:
        raise ConfigError(f"projection radius must be > 0, got {eta}")
    if p == "2":
        return eta * z / max(eta, float(np.linalg.norm(z)))
    if p == "inf":
        return np.clip(z, -eta, eta)
    raise ConfigError(f"norm must be one of {NORMS}, got {p!r}")


def unit_direction(gaussian: np.ndarray) -> np.ndarray:
    length = float(np.linalg.norm(gaussian))
    if length == 0:
        raise ValueError("cannot normalise a zero direction")
    return gaussian / length
