"""Seed derivation and platform-independent Gaussian draws.

Every random quantity in a run is keyed by (sample id, timestep, purpose tag) so
results do not depend on iteration order or worker assignment.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    # splitmix64 finaliser
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stable_hash(text: str) -> int:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return struct.unpack("<Q", digest)[0]


@dataclass(frozen=True)
class SeedPolicy:
    master_seed: int

    def derive(self, sample_id: str, t: int, tag: str) -> int:
        """64-bit seed = mix(master, hash(sample id), t, hash(tag))."""
        z = _mix64(self.master_seed & _MASK64)
        z = _mix64(z ^ stable_hash(sample_id))
        z = _mix64(z ^ (t & _MASK64))
        return _mix64(z ^ stable_hash(tag))

    def generator(self, sample_id: str, t: int, tag: str) -> np.random.Generator:
        return make_generator(self.derive(sample_id, t, tag))

    def gaussian(self, sample_id: str, t: int, tag: str, shape) -> np.ndarray:
        return gaussian(self.derive(sample_id, t, tag), shape)


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & _MASK64))


def box_muller(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals from PCG64 uniforms via Box–Muller."""
    size = int(np.prod(shape, dtype=np.int64))
    pairs = (size + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1]
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:size].reshape(shape)


def gaussian(seed: int, shape) -> np.ndarray:
    return box_muller(make_generator(seed), shape)
