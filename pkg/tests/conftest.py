import numpy as np
import pytest

from src.diffusion import Clip, NoiseSchedule, build_schedule
from src.models import ExperimentConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end pipeline and Monte-Carlo coverage runs")


@pytest.fixture
def schedule():
    return build_schedule("linear", T=100, beta_min=1e-4, beta_max=0.02)


@pytest.fixture
def short_schedule():
    return build_schedule("linear", T=10, beta_min=1e-3, beta_max=0.2)


@pytest.fixture
def schedule_036():
    """Two-step schedule with ᾱ_2 = 0.36."""
    return NoiseSchedule(kind="linear", alpha_bar=(0.9, 0.36), beta_min=0.1, beta_max=0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_clip():
    def _make(samples, cid="mem-0000", split="member", sample_rate=8000):
        return Clip(id=cid, samples=np.asarray(samples, dtype=np.float64), sample_rate=sample_rate,
                    split=split)
    return _make


@pytest.fixture
def tiny_config(tmp_path):
    """A config small enough for stage-level tests."""
    return ExperimentConfig.from_dict({
        "run": {"run_dir": str(tmp_path / "run"), "seed": 7},
        "corpus": {"members": 4, "dev": 4, "eval": 4, "clip_length": 256, "sample_rate": 4000,
                   "freq_range": [100.0, 800.0]},
        "schedule": {"T": 20, "beta_max": 0.2},
        "denoiser": {"hidden": [16], "embedding_dim": 8},
        "train": {"steps": 5, "batch_size": 4, "log_every": 0},
        "reverse": {"max_calls": 4},
        "distances": {"fft_sizes": [32, 64], "mel_bands": 8, "mel_fft": 64},
        "attack": {"steps": 3, "restarts": 1, "bisection_steps": 3, "metric": "waveform-mse"},
        "calibration": {"directions": 2},
        "evaluation": {"bootstrap_resamples": 50},
        "sweep": {"t_ratios": [0.4, 0.8], "eta_maxes": [0.2, 0.8], "metrics": ["waveform-mse"]},
    })
