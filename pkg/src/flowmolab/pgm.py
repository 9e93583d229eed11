"""Grayscale visualization of one latent channel as binary PGM frames.

One selected channel is min-max normalized globally over (F, W, H) to
0..255 (rounding half to even) and written as one P5 file per frame. A
constant tensor has no range to normalize, so it maps to mid-gray 128.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .tensors import validate_latent


def render_frames(video, channel: int):
    """Returns (frames as uint8 (F, H, W), constant_input flag)."""
    video = validate_latent(video)
    if not 0 <= channel < video.shape[3]:
        raise ValueError(f"channel {channel} outside 0..{video.shape[3] - 1}")
    x = video[:, :, :, channel]
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        frames = np.full(x.shape, 128, dtype=np.uint8)
    else:
        v = 255.0 * (x - lo) / (hi - lo)
        frames = np.clip(np.rint(v), 0, 255).astype(np.uint8)
    # tensor axes are (F, W, H); image rows are H, columns are W
    return frames.transpose(0, 2, 1), hi == lo


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) 8-bit grayscale; image is (rows, cols) uint8."""
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("PGM image must be a 2-D uint8 array")
    rows, cols = image.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.tobytes())


def write_frames(video, channel: int, out_dir) -> list[Path]:
    """Write frame_0000.pgm ... for the selected channel; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, constant = render_frames(video, channel)
    paths = []
    for i, frame in enumerate(frames):
        p = out_dir / f"frame_{i:04d}.pgm"
        write_pgm(p, frame)
        paths.append(p)
    if constant:
        print("warning: constant tensor, wrote mid-gray frames")
    return paths
