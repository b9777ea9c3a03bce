"""Synthetic damped-sinusoid corpus: clip generation, LSAC clip files and the manifest."""

import hashlib
import logging
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from src.diffusion import Clip
from src.errors import ArtifactError, ConfigError
from src.models import SPLITS, CorpusConfig
from src.seeds import SeedPolicy, box_muller

logger = logging.getLogger(__name__)

CLIP_MAGIC = b"LSAC"
CLIP_VERSION = 1
MANIFEST_VERSION = 1
SPLIT_PREFIX = {"member": "mem", "dev-nonmember": "dev", "eval-nonmember": "eval"}


@dataclass
class ClipEntry:
    id: str
    split: str
    params: dict
    sha256: str

    @property
    def filename(self) -> str:
        return f"{self.id}.lsac"


@dataclass
class Manifest:
    config: dict
    master_seed: int
    entries: list[ClipEntry] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def split(self, name: str) -> list[ClipEntry]:
        return [e for e in self.entries if e.split == name]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "master_seed": self.master_seed,
            "config": self.config,
            "entries": [asdict(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Manifest":
        if data.get("version") != MANIFEST_VERSION:
            raise ArtifactError(f"unsupported manifest version {data.get('version')!r}")
        return cls(
            config=data.get("config", {}),
            master_seed=data["master_seed"],
            entries=[ClipEntry(**e) for e in data.get("entries", [])],
        )


def clip_id(split: str, index: int) -> str:
    return f"{SPLIT_PREFIX[split]}-{index:04d}"


def draw_params(config: CorpusConfig, policy: SeedPolicy, cid: str, split: str) -> dict:
    rng = policy.generator(cid, 0, "corpus/params")
    k = int(rng.integers(config.min_components, config.max_components + 1))
    shift = config.eval_shift_hz if split == "eval-nonmember" else 0.0
    return {
        "freqs": (rng.uniform(*config.freq_range, k) + shift).tolist(),
        "decays": rng.uniform(*config.decay_range, k).tolist(),
        "amplitudes": rng.uniform(*config.amplitude_range, k).tolist(),
        "phases": rng.uniform(0.0, 2.0 * np.pi, k).tolist(),
    }


def synthesize(params: dict, config: CorpusConfig, policy: SeedPolicy, cid: str) -> np.ndarray:
    """Σ a·sin(2πft + φ)·exp(−dt) plus a Gaussian floor, peak-normalised to [−1, 1]."""
    time_axis = np.arange(config.clip_length) / config.sample_rate
    signal = np.zeros(config.clip_length)
    for f, d, a, phi in zip(params["freqs"], params["decays"], params["amplitudes"], params["phases"]):
        signal += a * np.sin(2.0 * np.pi * f * time_axis + phi) * np.exp(-d * time_axis)
    signal += config.noise_floor * box_muller(policy.generator(cid, 0, "corpus/floor"), (config.clip_length,))
    peak = float(np.max(np.abs(signal)))
    return signal / peak if peak > 0 else signal


def content_hash(samples: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(samples, dtype="<f8").tobytes()).hexdigest()


def encode_clip(samples: np.ndarray, sample_rate: int) -> bytes:
    samples = np.asarray(samples, dtype="<f8")
    return CLIP_MAGIC + struct.pack("<III", CLIP_VERSION, samples.size, sample_rate) + samples.tobytes()


def decode_clip(blob: bytes) -> tuple[np.ndarray, int]:
    if len(blob) < 16 or blob[:4] != CLIP_MAGIC:
        raise ArtifactError("not a clip file (bad magic)")
    version, n, sample_rate = struct.unpack_from("<III", blob, 4)
    if version != CLIP_VERSION:
        raise ArtifactError(f"unsupported clip version {version}")
    if len(blob) - 16 != n * 8:
        raise ArtifactError(f"truncated clip: header says {n} samples")
    return np.frombuffer(blob, dtype="<f8", count=n, offset=16).astype(np.float64), sample_rate


class CorpusGenerator:
    def __init__(self, clip_dir: str):
        self.clip_dir = clip_dir

    def generate(self, config: CorpusConfig, master_seed: int) -> tuple[Manifest, list[str]]:
        problems = config.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        os.makedirs(self.clip_dir, exist_ok=True)
        policy = SeedPolicy(master_seed)
        manifest = Manifest(config=asdict(config), master_seed=master_seed)
        created_files = []
        counts = {"member": config.members, "dev-nonmember": config.dev, "eval-nonmember": config.eval}
        for split in SPLITS:
            for i in range(counts[split]):
                cid = clip_id(split, i)
                params = draw_params(config, policy, cid, split)
                samples = synthesize(params, config, policy, cid)
                entry = ClipEntry(id=cid, split=split, params=params, sha256=content_hash(samples))
                path = os.path.join(self.clip_dir, entry.filename)
                with open(path, "wb") as f:
                    f.write(encode_clip(samples, config.sample_rate))
                manifest.entries.append(entry)
                created_files.append(path)
        logger.info("generated %d clips (%s)", len(created_files),
                    ", ".join(f"{s}={counts[s]}" for s in SPLITS))
        return manifest, created_files


def read_clip(entry: ClipEntry, clip_dir: str) -> Clip:
    path = os.path.join(clip_dir, entry.filename)
    if not os.path.exists(path):
        raise ArtifactError(f"missing clip file: {path}")
    with open(path, "rb") as f:
        samples, sample_rate = decode_clip(f.read())
    return Clip(id=entry.id, samples=samples, sample_rate=sample_rate, split=entry.split)


def load_clips(manifest: Manifest, clip_dir: str, split: str) -> list[Clip]:
    return [read_clip(e, clip_dir) for e in manifest.split(split)]
