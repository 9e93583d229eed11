"""Synthetic latent-video generator with controllable temporal coherence.

Videos are rendered directly in latent space: each scene is a handful of
soft blobs (radial raised-cosine bumps, amplitude 1 on a zero background,
clamped to [0, 1]) moving along smooth linear-with-bounce or sinusoidal
trajectories. Corruptions inject the classic temporal artifacts:

  teleport   blob position resampled uniformly with some probability/frame
  duplicate  a phantom copy of blob 0 exists during a frame span
  pop        blob 0 appears or disappears at a given frame

A video is labeled COHERENT iff its corruption is "none". build_corpus
calibrates the coherent class's velocity scale so both classes have the
same mean motion magnitude (mean absolute frame difference) and coherence,
not motion amount, separates them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .rng import Rng, derive_seed
from .tensors import serialize, tensor_write, validate_latent

COHERENT = "COHERENT"
INCOHERENT = "INCOHERENT"
LABEL_IDS = {COHERENT: 0, INCOHERENT: 1}


@dataclass(frozen=True)
class Corruption:
    kind: str = "none"  # none | teleport | duplicate | pop
    prob: float = 0.0  # teleport: per-frame resample probability
    span: tuple[int, int] | None = None  # duplicate: [start, end) frames
    frame: int | None = None  # pop: switch frame
    appear: bool = True  # pop: appear at frame vs disappear at frame

    def tag(self) -> str:
        if self.kind == "teleport":
            return f"teleport:{self.prob}"
        if self.kind == "duplicate":
            return f"duplicate:{self.span[0]}-{self.span[1]}"
        if self.kind == "pop":
            return f"pop:{'appear' if self.appear else 'vanish'}@{self.frame}"
        return "none"


NO_CORRUPTION = Corruption()


@dataclass(frozen=True)
class SceneSpec:
    blob_count: int = 2
    blob_radius: float = 4.0
    velocity: float = 1.2  # max per-frame displacement along each axis
    corruption: Corruption = NO_CORRUPTION
    seed: int = 0


def _validate_spec(spec: SceneSpec, dims):
    f, w, h, c = dims
    if min(f, w, h, c) < 1:
        raise ValueError(f"bad dims {dims}")
    if spec.blob_count < 1:
        raise ValueError("need at least one blob")
    if not spec.blob_radius < min(w, h) / 2:
        raise ValueError("blob radius must be < min(W, H) / 2")
    cor = spec.corruption
    if cor.kind == "teleport" and not 0.0 <= cor.prob <= 1.0:
        raise ValueError("teleport probability must be in [0, 1]")
    if cor.kind == "duplicate":
        a, b = cor.span
        if not (0 <= a < b <= f):
            raise ValueError(f"duplicate span {cor.span} outside [0, {f})")
    if cor.kind == "pop" and not 0 <= cor.frame < f:
        raise ValueError(f"pop frame {cor.frame} outside [0, {f})")
    if cor.kind not in ("none", "teleport", "duplicate", "pop"):
        raise ValueError(f"unknown corruption kind {cor.kind!r}")


def _bounce(x, lo, hi):
    """Reflect x into [lo, hi]."""
    if hi <= lo:
        return lo
    period = 2.0 * (hi - lo)
    y = (x - lo) % period
    return lo + (period - y if y > hi - lo else y)


def _trajectory(rng: Rng, frames, w, h, margin, velocity):
    """Smooth positions for one blob: linear-with-bounce or sinusoidal."""
    lo_w, hi_w = margin, w - 1 - margin
    lo_h, hi_h = margin, h - 1 - margin
    draws = rng.uniform(9)
    x0 = lo_w + draws[0] * (hi_w - lo_w)
    y0 = lo_h + draws[1] * (hi_h - lo_h)
    sinusoidal = draws[2] < 0.5
    pos = np.zeros((frames, 2))
    if sinusoidal:
        om = 0.3 + 0.6 * draws[3]
        amp = velocity / om
        ph_x = 2 * np.pi * draws[4]
        ph_y = 2 * np.pi * draws[5]
        for f in range(frames):
            pos[f, 0] = _bounce(x0 + amp * np.sin(om * f + ph_x), lo_w, hi_w)
            pos[f, 1] = _bounce(y0 + amp * np.sin(om * f + ph_y), lo_h, hi_h)
    else:
        vx = velocity * (2 * draws[6] - 1)
        vy = velocity * (2 * draws[7] - 1)
        for f in range(frames):
            pos[f, 0] = _bounce(x0 + vx * f, lo_w, hi_w)
            pos[f, 1] = _bounce(y0 + vy * f, lo_h, hi_h)
    return pos


def _render_blob(frame_img, x, y, radii):
    """Add a raised-cosine bump (amplitude 1 at the center) per channel."""
    w, h, _ = frame_img.shape
    gw = np.arange(w)[:, None]
    gh = np.arange(h)[None, :]
    r = np.sqrt((gw - x) ** 2 + (gh - y) ** 2)
    for ci, rad in enumerate(radii):
        inside = r < rad
        frame_img[:, :, ci] += np.where(
            inside, 0.5 * (1.0 + np.cos(np.pi * r / rad)), 0.0
        )


def generate(spec: SceneSpec, dims):
    """Render one video; returns (tensor (F, W, H, C) in [0, 1], label)."""
    _validate_spec(spec, dims)
    f, w, h, c = (int(d) for d in dims)
    rng = Rng(spec.seed)
    margin = min(spec.blob_radius * 0.5, (min(w, h) - 1) / 4)
    cor = spec.corruption

    blobs = []
    for _ in range(spec.blob_count):
        pos = _trajectory(rng, f, w, h, margin, spec.velocity)
        radii = spec.blob_radius * (0.8 + 0.4 * rng.uniform(c))
        blobs.append({"pos": pos, "radii": radii, "visible": np.ones(f, bool)})

    if cor.kind == "teleport":
        lo_w, hi_w = margin, w - 1 - margin
        lo_h, hi_h = margin, h - 1 - margin
        for blob in blobs:
            # draws consumed every frame so the stream layout is stable
            coins = rng.uniform(f)
            jumps = rng.uniform(2 * f)
            offset = np.zeros(2)
            for fr in range(1, f):
                if coins[fr] < cor.prob:
                    tx = lo_w + jumps[2 * fr] * (hi_w - lo_w)
                    ty = lo_h + jumps[2 * fr + 1] * (hi_h - lo_h)
                    offset = np.array([tx, ty]) - blob["pos"][fr]
                blob["pos"][fr] = [
                    _bounce(blob["pos"][fr, 0] + offset[0], lo_w, hi_w),
                    _bounce(blob["pos"][fr, 1] + offset[1], lo_h, hi_h),
                ]
    elif cor.kind == "duplicate":
        pos = _trajectory(rng, f, w, h, margin, spec.velocity)
        visible = np.zeros(f, bool)
        visible[cor.span[0] : cor.span[1]] = True
        blobs.append(
            {"pos": pos, "radii": blobs[0]["radii"].copy(), "visible": visible}
        )
    elif cor.kind == "pop":
        visible = np.zeros(f, bool)
        if cor.appear:
            visible[cor.frame :] = True
        else:
            visible[: cor.frame] = True
        blobs[0]["visible"] = visible

    video = np.zeros((f, w, h, c))
    for fr in range(f):
        for blob in blobs:
            if blob["visible"][fr]:
                _render_blob(video[fr], blob["pos"][fr, 0], blob["pos"][fr, 1],
                             blob["radii"])
    np.clip(video, 0.0, 1.0, out=video)
    label = COHERENT if cor.kind == "none" else INCOHERENT
    return video, label


def motion_magnitude(video) -> float:
    """Mean absolute difference between consecutive frames."""
    video = validate_latent(video, min_frames=2)
    return float(np.mean(np.abs(np.diff(video, axis=0))))


def _quantize(video) -> np.ndarray:
    """Round-trip through the file payload precision (float32)."""
    return np.asarray(video, dtype=np.float32).astype(np.float64)


def default_corruptions(frames: int):
    """Corruption cycle used for incoherent corpus samples."""
    half = frames // 2
    return [
        Corruption("teleport", prob=0.5),
        Corruption("teleport", prob=0.25),
        Corruption("pop", frame=half, appear=True),
        Corruption("duplicate", span=(frames // 4, frames - frames // 4)),
        Corruption("pop", frame=half, appear=False),
    ]


def calibrate_velocity(
    make_spec, seeds, dims, target_motion: float, lo=0.02, hi=12.0, iters=36
):
    """Bisect the velocity scale so the coherent class's mean motion
    magnitude (after file quantization) matches target_motion.

    make_spec(seed, velocity) must return a coherent SceneSpec. The search
    is deterministic, so reruns give identical corpora.
    """

    def mean_motion(vel):
        total = 0.0
        for s in seeds:
            video, _ = generate(make_spec(s, vel), dims)
            total += motion_magnitude(_quantize(video))
        return total / len(seeds)

    if mean_motion(hi) < target_motion:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mean_motion(mid) < target_motion:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def build_corpus(
    n_per_class: int,
    dims,
    out_dir,
    base_seed: int = 0,
    blob_count: int = 2,
    blob_radius: float = 4.0,
    corruptions=None,
):
    """Write 2 n tensor files plus manifest.csv; returns the manifest path.

    Manifest columns: path,label,seed,corruption,motion_magnitude. Paths
    are relative to the manifest's directory. Motion magnitudes are
    computed on the float32-quantized tensors, matching what a reader
    recomputes from the files.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    dims = tuple(int(d) for d in dims)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cycle = corruptions if corruptions is not None else default_corruptions(dims[0])

    rows = []
    incoherent = []
    for j in range(n_per_class):
        seed = derive_seed(base_seed, 10_000 + j)
        spec = SceneSpec(
            blob_count=blob_count,
            blob_radius=blob_radius,
            corruption=cycle[j % len(cycle)],
            seed=seed,
        )
        video, label = generate(spec, dims)
        incoherent.append((f"incoherent_{j:04d}.fmt", spec, _quantize(video)))

    target = float(np.mean([motion_magnitude(v) for _, _, v in incoherent]))
    coh_seeds = [derive_seed(base_seed, 20_000 + j) for j in range(n_per_class)]

    def make_spec(seed, vel):
        return SceneSpec(
            blob_count=blob_count, blob_radius=blob_radius, velocity=vel, seed=seed
        )

    velocity = calibrate_velocity(make_spec, coh_seeds, dims, target)

    for j, seed in enumerate(coh_seeds):
        spec = make_spec(seed, velocity)
        video, label = generate(spec, dims)
        name = f"coherent_{j:04d}.fmt"
        tensor_write(video, out_dir / name)
        rows.append((name, COHERENT, spec.seed, spec.corruption.tag(),
                     motion_magnitude(_quantize(video))))
    for name, spec, video in incoherent:
        tensor_write(video, out_dir / name)
        rows.append((name, INCOHERENT, spec.seed, spec.corruption.tag(),
                     motion_magnitude(video)))

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "seed", "corruption", "motion_magnitude"])
        for name, label, seed, tag, motion in rows:
            writer.writerow([name, label, str(seed), tag, repr(motion)])
    return manifest


@dataclass(frozen=True)
class CorpusItem:
    path: Path
    label: str
    seed: int
    corruption: str
    motion_magnitude: float


def read_manifest(manifest_path) -> list[CorpusItem]:
    manifest_path = Path(manifest_path)
    items = []
    with open(manifest_path, newline="") as fh:
        for row in csv.DictReader(fh):
            items.append(
                CorpusItem(
                    path=manifest_path.parent / row["path"],
                    label=row["label"],
                    seed=int(row["seed"]),
                    corruption=row["corruption"],
                    motion_magnitude=float(row["motion_magnitude"]),
                )
            )
    return items
