"""Noise predictors ε_θ(x_t, t) and the toy training loop."""

from __future__ import annotations

import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from src import autodiff as ad
from src.diffusion import NoiseSchedule, check_timestep
from src.errors import ConfigError, NumericalError, ShapeError
from src.models import TrainConfig
from src.seeds import box_muller, gaussian, make_generator, stable_hash

logger = logging.getLogger(__name__)


class Denoiser(ABC):
    """A noise predictor over vectors of length ``dim``."""

    dim: int

    @abstractmethod
    def predict_eps(self, x_t: ad.Node, t: int) -> ad.Node:
        """Build the graph of ε̂ for ``x_t`` at timestep ``t``."""

    # ── convenience helpers built on predict_eps() ──

    def predict_eps_array(self, x_t: np.ndarray, t: int) -> np.ndarray:
        return ad.evaluate(self.predict_eps(ad.const(x_t), t))


class ZeroDenoiser(Denoiser):
    def __init__(self, dim: int):
        self.dim = dim

    def predict_eps(self, x_t: ad.Node, t: int) -> ad.Node:
        return ad.scale(x_t, 0.0)


class ExactNoiseOracle(Denoiser):
    """Returns the very ε that formed x_t, so x̂₀ recovers the clean signal exactly."""

    def __init__(self, epsilon: np.ndarray):
        self.epsilon = np.asarray(epsilon, dtype=np.float64)
        self.dim = self.epsilon.shape[0]

    def predict_eps(self, x_t: ad.Node, t: int) -> ad.Node:
        # the zero-scaled x_t term keeps the shape check on the input
        return ad.add(ad.scale(x_t, 0.0), ad.const(self.epsilon))


@dataclass(frozen=True)
class AnalyticPrior:
    mu: np.ndarray
    tau2: float

    def __post_init__(self):
        if self.tau2 <= 0:
            raise ValueError("prior variance must be positive")


class AnalyticPriorDenoiser(Denoiser):
    """Posterior-mean ε̂ under an isotropic Gaussian data prior N(μ, τ²I)."""

    def __init__(self, prior: AnalyticPrior, schedule: NoiseSchedule):
        self.prior = prior
        self.schedule = schedule
        self.dim = prior.mu.shape[0]

    def coefficients(self, t: int) -> tuple[float, float]:
        """ε̂ = c_x·x_t − c_mu·μ."""
        check_timestep(self.schedule, t)
        a = self.schedule.alpha_bar_at(t)
        s = math.sqrt(1.0 - a)
        k = math.sqrt(a) * self.prior.tau2 / (a * self.prior.tau2 + s * s)
        c_x = (1.0 - math.sqrt(a) * k) / s
        c_mu = math.sqrt(a) * (1.0 - k * math.sqrt(a)) / s
        return c_x, c_mu

    def predict_eps(self, x_t: ad.Node, t: int) -> ad.Node:
        c_x, c_mu = self.coefficients(t)
        return ad.add(ad.scale(x_t, c_x), ad.const(-c_mu * self.prior.mu))


@dataclass
class ArchDescriptor:
    dim: int
    T: int
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    activation: str = "silu"
    embedding_dim: int = 16

    def weight_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        widths = list(self.hidden)
        shapes = [
            ("w_in_x", (self.dim, widths[0])),
            ("w_in_t", (self.embedding_dim, widths[0])),
            ("b_in", (widths[0],)),
        ]
        for i in range(1, len(widths)):
            shapes.append((f"w_h{i}", (widths[i - 1], widths[i])))
            shapes.append((f"b_h{i}", (widths[i],)))
        shapes.append(("w_out", (widths[-1], self.dim)))
        shapes.append(("b_out", (self.dim,)))
        return shapes

    def weight_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.weight_shapes())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ArchDescriptor":
        return cls(**json.loads(text))


@dataclass
class DenoiserParams:
    arch: ArchDescriptor
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.arch.weight_count(),):
            raise ShapeError(
                f"flat weight length {self.flat.size} != {self.arch.weight_count()} for architecture"
            )

    def tensors(self) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for name, shape in self.arch.weight_shapes():
            size = int(np.prod(shape))
            out[name] = self.flat[offset:offset + size].reshape(shape)
            offset += size
        return out

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.arch, self.flat.copy())


def init_params(arch: ArchDescriptor, seed: int) -> DenoiserParams:
    chunks = []
    for name, shape in arch.weight_shapes():
        if name.startswith("b_"):
            chunks.append(np.zeros(int(np.prod(shape))))
            continue
        w = gaussian(seed ^ stable_hash(name), shape) / math.sqrt(shape[0])
        if name == "w_out":
            w *= 0.1
        chunks.append(w.ravel())
    return DenoiserParams(arch, np.concatenate(chunks))


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding; ``t`` may be an int or an integer array."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def _activation(name: str):
    if name == "silu":
        return ad.silu
    if name == "tanh":
        return ad.tanh
    raise ValueError(f"unknown activation {name!r}")


def mlp_graph(arch: ArchDescriptor, weights: dict[str, ad.Node], x: ad.Node,
              emb: np.ndarray) -> ad.Node:
    """ε̂ for one input (dim,) or a batch (B, dim) with matching embeddings."""
    act = _activation(arch.activation)
    h = act(x @ weights["w_in_x"] + ad.const(emb) @ weights["w_in_t"] + weights["b_in"])
    for i in range(1, len(arch.hidden)):
        h = act(h @ weights[f"w_h{i}"] + weights[f"b_h{i}"])
    return h @ weights["w_out"] + weights["b_out"]


class MLPDenoiser(Denoiser):
    """Frozen toy network; weights enter graphs as constants."""

    def __init__(self, params: DenoiserParams):
        self.params = params
        self.arch = params.arch
        self.dim = params.arch.dim
        self._weights = {name: ad.const(w) for name, w in params.tensors().items()}

    # node ids are per-process, so weight nodes are rebuilt rather than pickled
    def __getstate__(self):
        return {"params": self.params}

    def __setstate__(self, state):
        self.__init__(state["params"])

    def predict_eps(self, x_t: ad.Node, t: int) -> ad.Node:
        if not 1 <= t <= self.arch.T:
            raise ConfigError(f"timestep {t} outside [1, {self.arch.T}]")
        return mlp_graph(self.arch, self._weights, x_t, timestep_embedding(t, self.arch.embedding_dim))


@dataclass
class TrainResult:
    params: DenoiserParams
    loss_trace: list[float]


def train(params: DenoiserParams, corpus: list[np.ndarray], schedule: NoiseSchedule,
          config: TrainConfig) -> TrainResult:
    """Minimise E‖ε − ε_θ(x_t, t)‖² with SGD + momentum; deterministic given the seed."""
    if not corpus:
        raise ValueError("training corpus is empty")
    data = np.stack([np.asarray(x, dtype=np.float64) for x in corpus])
    if data.shape[1] != params.arch.dim:
        raise ShapeError(f"corpus dimension {data.shape[1]} != denoiser dimension {params.arch.dim}")

    arch = params.arch
    flat = params.flat.copy()
    velocity = np.zeros_like(flat)
    alpha_bar = np.asarray(schedule.alpha_bar)
    rng = make_generator(config.seed)
    trace: list[float] = []

    for step in range(config.steps):
        idx = rng.integers(0, data.shape[0], config.batch_size)
        ts = rng.integers(1, schedule.T + 1, config.batch_size)
        eps = box_muller(rng, (config.batch_size, arch.dim))
        a = alpha_bar[ts - 1][:, None]
        x_t = np.sqrt(a) * data[idx] + np.sqrt(1.0 - a) * eps

        current = DenoiserParams(arch, flat)
        leaves = {name: ad.leaf(w, name=name) for name, w in current.tensors().items()}
        pred = mlp_graph(arch, leaves, ad.const(x_t), timestep_embedding(ts, arch.embedding_dim))
        loss = ad.reduce_mean(ad.square(pred - ad.const(eps)))
        try:
            value = float(ad.evaluate(loss))
            grads = ad.backward(loss, leaves.values())
        except NumericalError as e:
            raise NumericalError(f"training diverged at step {step}: {e}", op=e.op) from e

        grad = np.concatenate([grads[leaves[name].id].ravel() for name, _ in arch.weight_shapes()])
        if config.grad_clip > 0:
            norm = float(np.linalg.norm(grad))
            if norm > config.grad_clip:
                grad *= config.grad_clip / norm
        velocity = config.momentum * velocity + grad
        flat = flat - config.lr * velocity
        trace.append(value)
        if config.log_every and (step + 1) % config.log_every == 0:
            logger.info("train step %d/%d loss %.6f", step + 1, config.steps, value)

    return TrainResult(params=DenoiserParams(arch, flat), loss_trace=trace)


def denoising_loss(denoiser: Denoiser, x0: np.ndarray, t: int, epsilon: np.ndarray,
                   schedule: NoiseSchedule) -> float:
    """‖ε − ε_θ(x_t, t)‖² / n for one fixed (x₀, t, ε)."""
    a = schedule.alpha_bar_at(t)
    x_t = math.sqrt(a) * x0 + math.sqrt(1.0 - a) * epsilon
    eps_hat = denoiser.predict_eps_array(x_t, t)
    return float(np.mean((epsilon - eps_hat) ** 2))


def build_arch(dim: int, T: int, hidden: list[int], activation: str,
               embedding_dim: int) -> ArchDescriptor:
    return ArchDescriptor(dim=dim, T=T, hidden=list(hidden), activation=activation,
                          embedding_dim=embedding_dim)


def load_denoiser(path: str, expected: Optional[ArchDescriptor] = None) -> MLPDenoiser:
    from src.checkpoint import load_checkpoint
    return MLPDenoiser(load_checkpoint(path, expected))
