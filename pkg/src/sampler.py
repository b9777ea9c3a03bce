"""Deterministic DDIM reverse operator R_t and its latent-mode wrapper."""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.fft

from src import autodiff as ad
from src.denoiser import Denoiser
from src.diffusion import NoiseSchedule, check_timestep, forward_noise, sigma_t
from src.errors import ConfigError, NumericalError, ShapeError
from src.models import ComputeLedger, ReverseConfig

SQRT_ALPHA_FLOOR = 1e-6


def _lift(x: Union[ad.Node, np.ndarray]) -> ad.Node:
    return x if isinstance(x, ad.Node) else ad.const(x)


def x0_hat(x_t: Union[ad.Node, np.ndarray], t: int, denoiser: Denoiser,
           schedule: NoiseSchedule, eps: Optional[ad.Node] = None) -> ad.Node:
    """(x_t − σ_t·ε_θ(x_t, t)) / √ᾱ_t."""
    check_timestep(schedule, t)
    root_a = math.sqrt(schedule.alpha_bar_at(t))
    if root_a < SQRT_ALPHA_FLOOR:
        raise NumericalError(f"√ᾱ_t = {root_a:.3g} below division floor", op="scale", step=t)
    x_t = _lift(x_t)
    if eps is None:
        eps = denoiser.predict_eps(x_t, t)
    return ad.scale(x_t - ad.scale(eps, sigma_t(schedule, t)), 1.0 / root_a)


def ddim_step(x_t: Union[ad.Node, np.ndarray], t: int, denoiser: Denoiser,
              schedule: NoiseSchedule, t_prev: Optional[int] = None) -> ad.Node:
    """Map x_t to x_{t_prev} (default t−1) with σ = 0; t_prev = 0 returns x̂₀."""
    t_prev = t - 1 if t_prev is None else t_prev
    if not 0 <= t_prev < t:
        raise ConfigError(f"ddim_step needs 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    x_t = _lift(x_t)
    with ad.step_scope(t):
        eps = denoiser.predict_eps(x_t, t)
        x0 = x0_hat(x_t, t, denoiser, schedule, eps=eps)
        if t_prev == 0:
            return x0
        a_prev = schedule.alpha_bar_at(t_prev)
        return ad.scale(x0, math.sqrt(a_prev)) + ad.scale(eps, math.sqrt(1.0 - a_prev))


def resolve_stride(t: int, config: ReverseConfig) -> int:
    if config.stride is not None:
        if config.stride < 1:
            raise ConfigError(f"reverse stride must be >= 1, got {config.stride}")
        return config.stride
    if config.max_calls < 2:
        raise ConfigError("reverse.max_calls must be >= 2")
    return max(1, math.ceil((t - 1) / (config.max_calls - 1)))


def timestep_path(t: int, config: ReverseConfig) -> list[int]:
    """Indices visited by R_t: t, t−s, … and always ending at 1."""
    if t < 1:
        raise ConfigError(f"timestep {t} must be >= 1")
    stride = resolve_stride(t, config)
    return list(range(t, 1, -stride)) + [1]


def reverse_from(x_t: Union[ad.Node, np.ndarray], t: int, denoiser: Denoiser,
                 schedule: NoiseSchedule, config: Optional[ReverseConfig] = None,
                 ledger: Optional[ComputeLedger] = None) -> ad.Node:
    """R_t: compose DDIM steps from t down to x̂₀ as one differentiable graph."""
    config = config or ReverseConfig(stride=1)
    check_timestep(schedule, t)
    path = timestep_path(t, config)
    node = _lift(x_t)
    for i, step in enumerate(path):
        prev = path[i + 1] if i + 1 < len(path) else 0
        if config.checkpointing:
            node = ad.checkpoint(
                lambda x, s=step, p=prev: ddim_step(x, s, denoiser, schedule, t_prev=p), node
            )
        else:
            node = ddim_step(node, step, denoiser, schedule, t_prev=prev)
    if ledger is not None:
        ledger.reverse_passes += 1
        ledger.network_calls += len(path)
    return node


def reverse_array(x_t: np.ndarray, t: int, denoiser: Denoiser, schedule: NoiseSchedule,
                  config: Optional[ReverseConfig] = None,
                  ledger: Optional[ComputeLedger] = None) -> np.ndarray:
    return ad.evaluate(reverse_from(ad.const(x_t), t, denoiser, schedule, config, ledger))


@dataclass(frozen=True)
class LatentCodec:
    """Frozen orthonormal codec: Enc(x) = x·B, Dec(z) = z·Bᵀ with B of shape (n, m)."""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.array(self.basis, dtype=np.float64)
        if basis.ndim != 2 or basis.shape[1] > basis.shape[0]:
            raise ShapeError(f"codec basis must be (n, m) with m <= n, got {basis.shape}")
        if not np.allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-9):
            raise ShapeError("codec basis columns must be orthonormal")
        basis.flags.writeable = False
        object.__setattr__(self, "basis", basis)

    @classmethod
    def truncated_dct(cls, n: int, m: int) -> "LatentCodec":
        if not 1 <= m <= n:
            raise ConfigError(f"latent dimension must lie in [1, {n}], got {m}")
        # rows of the orthonormal DCT-II matrix are the basis vectors
        matrix = scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)
        return cls(matrix[:m].T)

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    def gramian(self) -> np.ndarray:
        return self.basis.T @ self.basis

    def encode(self, x: Union[ad.Node, np.ndarray]) -> ad.Node:
        return ad.affine(_lift(x), self.basis)

    def decode(self, z: Union[ad.Node, np.ndarray]) -> ad.Node:
        return ad.affine(_lift(z), self.basis.T)

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n:
            raise ShapeError(f"codec expects length {self.n}, got {x.shape[-1]}")
        return x @ self.basis

    def decode_array(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.m:
            raise ShapeError(f"codec expects latent length {self.m}, got {z.shape[-1]}")
        return z @ self.basis.T


def reverse_latent(x0: np.ndarray, t: int, denoiser: Denoiser, codec: LatentCodec,
                   schedule: NoiseSchedule, epsilon: np.ndarray,
                   delta_tilde: Optional[ad.Node] = None,
                   config: Optional[ReverseConfig] = None,
                   ledger: Optional[ComputeLedger] = None) -> ad.Node:
    """Dec(R_t(z_t + σ_t·δ̃)) with z_t = forward_noise(Enc(x₀), t, ε)."""
    if denoiser.dim != codec.m:
        raise ShapeError(f"latent denoiser dimension {denoiser.dim} != codec dimension {codec.m}")
    z_t = ad.const(forward_noise(schedule, codec.encode_array(x0), t, epsilon))
    if delta_tilde is not None:
        z_t = z_t + ad.scale(delta_tilde, sigma_t(schedule, t))
    out = codec.decode(reverse_from(z_t, t, denoiser, schedule, config, ledger))
    if ledger is not None:
        ledger.decoder_calls += 1
    return out
