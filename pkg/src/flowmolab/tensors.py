"""Latent video tensors and their binary file format.

A latent video is a float64 ndarray of shape (F, W, H, C), row-major:
frames, width, height, channels, all >= 1. All math runs in float64;
files store float32, so conversion happens only at the I/O boundary.

File format "FMT1", little-endian, no padding or trailing bytes:
  magic b"FMT1" | rank as u32 (always 4) | rank dims as u64 | payload of
  F*W*H*C IEEE-754 binary32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FMT1"
RANK = 4


class TensorFormatError(ValueError):
    """Malformed magic, rank, dims, or truncated payload."""


class TensorValueError(ValueError):
    """Tensor violates a value invariant (non-finite, bad dims)."""


class NumericError(ArithmeticError):
    """NaN/Inf detected mid-computation (CLI exit code 3)."""


def validate_latent(t: np.ndarray, *, min_frames: int = 1) -> np.ndarray:
    """Check shape rank, positive dims and finiteness; return t as float64."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != RANK:
        raise TensorValueError(f"expected rank {RANK} tensor, got rank {t.ndim}")
    if any(d < 1 for d in t.shape):
        raise TensorValueError(f"all dims must be >= 1, got {t.shape}")
    if t.shape[0] < min_frames:
        raise TensorValueError(
            f"need at least {min_frames} frames, got {t.shape[0]}"
        )
    if not np.all(np.isfinite(t)):
        raise TensorValueError("tensor contains NaN or Inf")
    return t


def serialize(t: np.ndarray) -> bytes:
    """Serialize a latent video to FMT1 bytes (float32 payload)."""
    t = validate_latent(t)
    header = MAGIC + struct.pack("<I", RANK) + struct.pack("<4Q", *t.shape)
    payload = np.ascontiguousarray(t, dtype="<f4").tobytes()
    return header + payload


def deserialize(buf: bytes) -> np.ndarray:
    """Parse FMT1 bytes back into a float64 latent video."""
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise TensorFormatError("bad magic bytes")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if rank != RANK:
        raise TensorFormatError(f"unsupported rank {rank}")
    head = 8 + 8 * rank
    if len(buf) < head:
        raise TensorFormatError("truncated dim header")
    dims = struct.unpack_from(f"<{rank}Q", buf, 8)
    if any(d < 1 for d in dims):
        raise TensorFormatError(f"dims must be >= 1, got {dims}")
    n = int(np.prod(dims))
    expected = head + 4 * n
    if len(buf) != expected:
        raise TensorFormatError(
            f"payload length mismatch: file has {len(buf)} bytes, need {expected}"
        )
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=head)
    return data.astype(np.float64).reshape(dims)


def tensor_write(t: np.ndarray, path) -> None:
    """Write t to path in FMT1 format. Deterministic for equal inputs."""
    Path(path).write_bytes(serialize(t))


def tensor_read(path) -> np.ndarray:
    """Read an FMT1 file; round-trips with tensor_write bit-exactly."""
    return deserialize(Path(path).read_bytes())


def variance_over_axis0(t: np.ndarray) -> np.ndarray:
    """Population variance E[(X - E[X])^2] along axis 0.

    Axis-0 length 1 gives all zeros. Summation order is fixed (numpy
    pairwise over a contiguous axis), so results are run-to-run identical.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 1 or t.size == 0:
        raise TensorValueError("variance needs a non-empty tensor of rank >= 1")
    mean = t.mean(axis=0)
    return np.mean((t - mean) ** 2, axis=0)
