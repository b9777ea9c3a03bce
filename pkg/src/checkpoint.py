"""Binary denoiser checkpoints.

Layout (little-endian):

    b"LSAP" | u32 version | u32 descriptor length | descriptor JSON (UTF-8)
    | u64 weight count | weight count × f8
"""

import os
import struct
from typing import Optional

import numpy as np

from src.denoiser import ArchDescriptor, DenoiserParams
from src.errors import CheckpointFormatError

MAGIC = b"LSAP"
VERSION = 1


def encode_checkpoint(params: DenoiserParams) -> bytes:
    descriptor = params.arch.to_json().encode("utf-8")
    header = MAGIC + struct.pack("<II", VERSION, len(descriptor)) + descriptor
    weights = params.flat.astype("<f8")
    return header + struct.pack("<Q", weights.size) + weights.tobytes()


def decode_checkpoint(blob: bytes, expected: Optional[ArchDescriptor] = None) -> DenoiserParams:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointFormatError("not a denoiser checkpoint (bad magic)")
    version, desc_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    offset = 12
    if len(blob) < offset + desc_len + 8:
        raise CheckpointFormatError("truncated checkpoint header")
    try:
        arch = ArchDescriptor.from_json(blob[offset:offset + desc_len].decode("utf-8"))
    except (UnicodeDecodeError, ValueError, TypeError) as e:
        raise CheckpointFormatError(f"malformed architecture descriptor: {e}") from e
    offset += desc_len
    (count,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    if len(blob) - offset != count * 8:
        raise CheckpointFormatError(
            f"truncated checkpoint: expected {count} weights, found {(len(blob) - offset) // 8}"
        )
    if count != arch.weight_count():
        raise CheckpointFormatError(
            f"weight count {count} does not match descriptor ({arch.weight_count()})"
        )
    if expected is not None and expected != arch:
        raise CheckpointFormatError(
            f"architecture mismatch: checkpoint {arch.to_json()}, expected {expected.to_json()}"
        )
    flat = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64)
    return DenoiserParams(arch, flat)


def save_checkpoint(path: str, params: DenoiserParams) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(params))
    return path


def load_checkpoint(path: str, expected: Optional[ArchDescriptor] = None) -> DenoiserParams:
    if not os.path.exists(path):
        raise CheckpointFormatError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        return decode_checkpoint(f.read(), expected)
