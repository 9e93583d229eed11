"""Frequency-domain re-initialization baseline for the flow sampler.

After a full sampling round, the final latent is re-noised to near t = 1,
its low-frequency band (3-D Butterworth mask over frames x width x height)
is kept, the high-frequency band is replaced with fresh noise, and sampling
restarts from the mixed latent. Re-noising uses the interpolation rule at
t_renoise = 0.98 rather than exactly 1, since the t = 1 endpoint is pure
noise and would discard the content the low band is meant to keep.

DFT convention: unnormalized forward, 1/(F W H) inverse (numpy default),
per channel independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ShapeError
from .rng import Rng, derive_seed
from .sampler import NoiseSchedule, sample
from .tensors import NumericError, validate_latent


@dataclass(frozen=True)
class FreqFilterSpec:
    family: str = "butterworth"
    order: int = 4
    spatial_cutoff: float = 0.25
    temporal_cutoff: float = 0.25

    def __post_init__(self):
        if self.family != "butterworth":
            raise ValueError(f"unsupported filter family {self.family!r}")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")
        if not 0.0 < self.spatial_cutoff <= 1.0:
            raise ValueError("spatial cutoff must be in (0, 1]")
        if not 0.0 < self.temporal_cutoff <= 1.0:
            raise ValueError("temporal cutoff must be in (0, 1]")


def lowpass_mask(dims, spec: FreqFilterSpec) -> np.ndarray:
    """Butterworth gain 1 / (1 + d^(2n)) on the 3-D DFT grid.

    d^2 = (f_t / d_t)^2 + (sqrt(f_w^2 + f_h^2) / d_s)^2 with frequencies
    normalized to [-0.5, 0.5); gain is 1 at DC and 0.5 where d = 1.
    """
    f, w, h = (int(d) for d in dims)
    if min(f, w, h) < 1:
        raise ValueError(f"bad dims {dims}")
    ft = np.fft.fftfreq(f) / spec.temporal_cutoff
    fw = np.fft.fftfreq(w) / spec.spatial_cutoff
    fh = np.fft.fftfreq(h) / spec.spatial_cutoff
    d2 = (
        ft[:, None, None] ** 2
        + fw[None, :, None] ** 2
        + fh[None, None, :] ** 2
    )
    return 1.0 / (1.0 + d2**spec.order)


def freq_mix(z_renoised, fresh_noise, spec: FreqFilterSpec) -> np.ndarray:
    """Low band of z_renoised + high band of fresh_noise, per channel."""
    z = validate_latent(z_renoised)
    n = validate_latent(fresh_noise)
    if z.shape != n.shape:
        raise ShapeError(f"shapes differ: {z.shape} vs {n.shape}")
    mask = lowpass_mask(z.shape[:3], spec)[..., None]
    axes = (0, 1, 2)
    mixed = mask * np.fft.fftn(z, axes=axes) + (1.0 - mask) * np.fft.fftn(
        n, axes=axes
    )
    out = np.fft.ifftn(mixed, axes=axes)
    residue = float(np.max(np.abs(out.imag)))
    if residue > 1e-10:
        raise NumericError(f"imaginary residue {residue} after inverse DFT")
    return np.ascontiguousarray(out.real)


def freeinit_sample(
    model,
    dims,
    schedule: NoiseSchedule,
    cond,
    seed: int,
    rho: float = 5.0,
    rounds: int = 1,
    spec: FreqFilterSpec = FreqFilterSpec(),
    t_renoise: float = 0.98,
):
    """Iterative sampling with frequency-band re-initialization.

    Round 0 is a plain sampling run (bit-identical to sample() for equal
    seeds). Each later round re-noises the previous result to t_renoise via
    the interpolation rule, keeps its low band, injects fresh noise in the
    high band and resamples. Returns (final latent, final round's trace).
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    z, trace = sample(model, dims, schedule, cond, seed, rho)
    for r in range(1, rounds):
        rng = Rng(derive_seed(seed, 40_000 + r))
        z0 = rng.normal(dims)
        fresh = rng.normal(dims)
        z_re = (1.0 - t_renoise) * z + t_renoise * z0
        z_init = freq_mix(z_re, fresh, spec)
        z, trace = sample(model, dims, schedule, cond, seed, rho, initial=z_init)
    return z, trace
