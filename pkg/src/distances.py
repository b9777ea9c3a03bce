"""Differentiable degradation metrics D(a, b) on waveforms.

Every metric is built from autodiff ops; STFT and mel projections are fixed
matrices applied through ``affine`` and cached per configuration.
"""

import functools
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import librosa
import numpy as np
import scipy.signal

from src import autodiff as ad
from src.errors import ConfigError, ShapeError
from src.models import METRIC_KINDS, DistanceConfig

logger = logging.getLogger(__name__)

EPS_MAG = 1e-12
EPS_SC = 1e-8
EPS_FRO = 1e-12

Metric = Callable[[ad.Node, ad.Node], ad.Node]


@dataclass(frozen=True)
class STFTConfig:
    frame_length: int
    hop: int
    fft_size: int
    window: str = "hann"

    def __post_init__(self):
        if not 1 <= self.hop <= self.frame_length <= self.fft_size:
            raise ConfigError(
                f"STFT needs 1 <= hop <= frame <= fft, got hop={self.hop}, "
                f"frame={self.frame_length}, fft={self.fft_size}"
            )
        if self.window not in ("hann", "rectangular"):
            raise ConfigError(f"unknown window {self.window!r}")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class MelConfig:
    bands: int
    sample_rate: int
    stft: STFTConfig
    fmin: float = 0.0
    fmax: Optional[float] = None
    floor: float = 1e-5

    def __post_init__(self):
        if self.bands < 1:
            raise ConfigError("mel band count must be >= 1")
        if self.floor <= 0:
            raise ConfigError("mel floor must be positive")


def stft_configs(config: DistanceConfig) -> list[STFTConfig]:
    if not config.fft_sizes:
        raise ConfigError("mr-stft needs at least one resolution")
    return [
        STFTConfig(frame_length=n, hop=max(1, n // config.hop_divisor), fft_size=n, window=config.window)
        for n in config.fft_sizes
    ]


def mel_config(config: DistanceConfig, sample_rate: int) -> MelConfig:
    n = config.mel_fft
    stft = STFTConfig(frame_length=n, hop=max(1, n // config.hop_divisor), fft_size=n, window=config.window)
    return MelConfig(bands=config.mel_bands, sample_rate=sample_rate, stft=stft,
                     fmin=config.mel_fmin, fmax=config.mel_fmax, floor=config.mel_floor)


@functools.lru_cache(maxsize=32)
def dft_matrices(cfg: STFTConfig) -> tuple[np.ndarray, np.ndarray]:
    """Windowed real/imaginary DFT matrices of shape (frame_length, bins)."""
    if cfg.window == "hann":
        window = scipy.signal.get_window("hann", cfg.frame_length, fftbins=True)
    else:
        window = np.ones(cfg.frame_length)
    n = np.arange(cfg.frame_length)[:, None]
    k = np.arange(cfg.bins)[None, :]
    phase = 2.0 * np.pi * n * k / cfg.fft_size
    real = window[:, None] * np.cos(phase)
    imag = -window[:, None] * np.sin(phase)
    real.flags.writeable = False
    imag.flags.writeable = False
    return real, imag


@functools.lru_cache(maxsize=16)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """(bins, bands) projection; every band has at least one nonzero weight."""
    fb = librosa.filters.mel(sr=cfg.sample_rate, n_fft=cfg.stft.fft_size, n_mels=cfg.bands,
                             fmin=cfg.fmin, fmax=cfg.fmax)
    fb = np.asarray(fb, dtype=np.float64)
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2.0
        centres = librosa.mel_frequencies(n_mels=cfg.bands + 2, fmin=cfg.fmin, fmax=fmax)[1:-1]
        for band in empty:
            bin_index = int(round(centres[band] * cfg.stft.fft_size / cfg.sample_rate))
            fb[band, min(bin_index, cfg.stft.bins - 1)] = 1.0
        logger.debug("mel filterbank: %d empty band(s) pinned to nearest bin", empty.size)
    matrix = fb.T.copy()
    matrix.flags.writeable = False
    return matrix


def _lift(x: Union[ad.Node, np.ndarray]) -> ad.Node:
    return x if isinstance(x, ad.Node) else ad.const(x)


def _check_pair(a: ad.Node, b: ad.Node) -> None:
    if a.value is not None and b.value is not None and a.value.shape != b.value.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.value.shape} vs {b.value.shape}")


def _power(x: ad.Node, cfg: STFTConfig) -> ad.Node:
    real, imag = dft_matrices(cfg)
    frame = (cfg.frame_length, cfg.hop)
    return ad.square(ad.affine(x, real, frame=frame)) + ad.square(ad.affine(x, imag, frame=frame))


def spectrogram(x: Union[ad.Node, np.ndarray], cfg: STFTConfig) -> ad.Node:
    """Magnitude √(re² + im² + ε_mag), shape (frames, bins)."""
    return ad.sqrt(_power(_lift(x), cfg) + ad.const(EPS_MAG))


def _frobenius(x: ad.Node) -> ad.Node:
    # zero at x = 0 with a finite gradient
    return ad.sqrt(ad.reduce_sum(ad.square(x)) + ad.const(EPS_FRO)) - ad.const(np.sqrt(EPS_FRO))


def waveform_mse(a: Union[ad.Node, np.ndarray], b: Union[ad.Node, np.ndarray]) -> ad.Node:
    a, b = _lift(a), _lift(b)
    _check_pair(a, b)
    return ad.reduce_mean(ad.square(a - b))


def log_mel(x: Union[ad.Node, np.ndarray], cfg: MelConfig) -> ad.Node:
    mel = ad.affine(_power(_lift(x), cfg.stft), mel_filterbank(cfg))
    return ad.log(mel + ad.const(cfg.floor))


def log_mel_mse(a: Union[ad.Node, np.ndarray], b: Union[ad.Node, np.ndarray],
                cfg: MelConfig) -> ad.Node:
    a, b = _lift(a), _lift(b)
    _check_pair(a, b)
    return ad.reduce_mean(ad.square(log_mel(a, cfg) - log_mel(b, cfg)))


def mr_stft(a: Union[ad.Node, np.ndarray], b: Union[ad.Node, np.ndarray],
            configs: list[STFTConfig]) -> ad.Node:
    """Σ_res [spectral convergence + mean |log|A| − log|B||]."""
    if not configs:
        raise ConfigError("mr-stft needs at least one resolution")
    a, b = _lift(a), _lift(b)
    _check_pair(a, b)
    total = None
    for cfg in configs:
        mag_a, mag_b = spectrogram(a, cfg), spectrogram(b, cfg)
        denom = ad.scale(_frobenius(mag_a) + _frobenius(mag_b), 0.5) + ad.const(EPS_SC)
        convergence = ad.div(_frobenius(mag_a - mag_b), denom)
        log_l1 = ad.reduce_mean(ad.absolute(ad.log(mag_a) - ad.log(mag_b)))
        term = convergence + log_l1
        total = term if total is None else total + term
    return total


def build_metric(kind: str, config: DistanceConfig, sample_rate: int) -> Metric:
    if kind == "waveform-mse":
        return waveform_mse
    if kind == "log-mel-mse":
        mel = mel_config(config, sample_rate)
        return lambda a, b: log_mel_mse(a, b, mel)
    if kind == "mr-stft":
        configs = stft_configs(config)
        return lambda a, b: mr_stft(a, b, configs)
    raise ConfigError(f"unknown metric kind {kind!r}; expected one of {', '.join(METRIC_KINDS)}")


def secondary_degradations(a: np.ndarray, b: np.ndarray, config: DistanceConfig,
                           sample_rate: int) -> dict[str, float]:
    """Every metric kind evaluated on one pair, for per-sample reporting."""
    return {
        kind: float(ad.evaluate(build_metric(kind, config, sample_rate)(ad.const(a), ad.const(b))))
        for kind in METRIC_KINDS
    }
