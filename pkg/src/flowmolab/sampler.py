"""Discrete noise schedule, CFG combination and the denoising loop.

Two step strategies are supported. EULER integrates dz/dt = v with
z <- z - sigma_i u where sigma_i = t_i - t_{i+1} (t_N defined as 0); this
is exact for straight-line paths and is the default. PAPER_LITERAL applies
z <- (1 - sigma_i) z - sigma_i u with a configurable sigma sequence that
defaults to the Euler step sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .guidance import (
    AGGREGATE_MAX,
    GuidanceConfig,
    flowmo_loss,
    make_opt_state,
    refine,
)
from .model import ShapeError
from .rng import Rng
from .tensors import NumericError, validate_latent

EULER = "euler"
PAPER_LITERAL = "paper_literal"


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing timesteps t_0 = 1 > ... > t_{N-1} >= 0 with a
    per-step coefficient sigma_i."""

    timesteps: tuple
    sigmas: tuple
    strategy: str = EULER

    def __post_init__(self):
        ts = tuple(float(t) for t in self.timesteps)
        sg = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, "timesteps", ts)
        object.__setattr__(self, "sigmas", sg)
        if self.strategy not in (EULER, PAPER_LITERAL):
            raise ValueError(f"unknown step strategy {self.strategy!r}")
        if len(ts) == 0 or len(ts) != len(sg):
            raise ValueError("need equal, nonzero numbers of timesteps and sigmas")
        if ts[0] != 1.0:
            raise ValueError("schedule must start at t = 1")
        if ts[-1] < 0.0:
            raise ValueError("schedule must end at t >= 0")
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise ValueError("timesteps must be strictly decreasing")
        if any(not 0.0 <= s <= 1.0 for s in sg):
            raise ValueError("sigmas must lie in [0, 1]")
        if self.strategy == EULER:
            expect = [a - b for a, b in zip(ts, ts[1:])] + [ts[-1]]
            if any(abs(s - e) > 1e-12 for s, e in zip(sg, expect)):
                raise ValueError("EULER sigmas must equal t_i - t_{i+1}")

    def __len__(self):
        return len(self.timesteps)

    @classmethod
    def uniform(cls, n: int, strategy: str = EULER, sigmas=None) -> "NoiseSchedule":
        """n steps t_i = 1 - i/n; default sigmas are the Euler differences."""
        if n < 1:
            raise ValueError("schedule needs at least one step")
        ts = [(n - i) / n for i in range(n)]
        if sigmas is None:
            sigmas = [a - b for a, b in zip(ts, ts[1:])] + [ts[-1]]
        return cls(tuple(ts), tuple(sigmas), strategy)

    @classmethod
    def from_timesteps(cls, ts, strategy: str = EULER, sigmas=None) -> "NoiseSchedule":
        ts = tuple(float(t) for t in ts)
        if sigmas is None:
            sigmas = [a - b for a, b in zip(ts, ts[1:])] + [ts[-1]]
        return cls(ts, tuple(sigmas), strategy)


def cfg_combine(u_cond, u_uncond, rho: float) -> np.ndarray:
    """Classifier-free guidance: u_cond + rho (u_cond - u_uncond)."""
    u_cond = validate_latent(u_cond)
    u_uncond = validate_latent(u_uncond)
    if u_cond.shape != u_uncond.shape:
        raise ShapeError(
            f"branch shapes differ: {u_cond.shape} vs {u_uncond.shape}"
        )
    if rho < 0:
        raise ValueError("guidance scale rho must be >= 0")
    if rho == 0.0:
        return u_cond
    return u_cond + rho * (u_cond - u_uncond)


def fm_step(z, u, sigma: float, strategy: str = EULER) -> np.ndarray:
    """One denoising update of the latent with velocity u."""
    z = validate_latent(z)
    u = validate_latent(u)
    if z.shape != u.shape:
        raise ShapeError(f"latent {z.shape} vs velocity {u.shape}")
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    if strategy == EULER:
        return z - sigma * u
    if strategy == PAPER_LITERAL:
        return (1.0 - sigma) * z - sigma * u
    raise ValueError(f"unknown step strategy {strategy!r}")


def denoised_estimate(z, u, t: float) -> np.ndarray:
    """Extrapolated clean latent from the current state and velocity.

    Along the linear path z_t = (1-t) z1 + t z0 with exact velocity
    u = z0 - z1, the clean endpoint is z_t - t u; t is the interpolation
    coefficient at the current step.
    """
    return np.asarray(z, dtype=np.float64) - t * np.asarray(u, dtype=np.float64)


@dataclass
class StepRecord:
    """Per-step trace entry.

    loss_before is the loss at the prediction from the initial passes of
    the step; loss_after is the loss at the prediction actually used by the
    denoising update (equal to loss_before when no refinement ran).
    argmax_w/argmax_h mark the patch targeted by refinement (from the
    pre-refinement breakdown). mean_s/max_s summarize the map of the used
    prediction. grad_norm is the mean latent-gradient norm over inner
    iterations, None when not refined.
    """

    step: int
    t: float
    sigma: float
    loss_before: float
    loss_after: float
    mean_s: float
    max_s: float
    argmax_w: int
    argmax_h: int
    refined: bool
    grad_norm: float | None = None
    denoised: np.ndarray | None = None


@dataclass
class SampleTrace:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def sample(
    model,
    dims,
    schedule: NoiseSchedule,
    cond,
    seed: int,
    rho: float = 5.0,
    guidance: GuidanceConfig | None = None,
    initial: np.ndarray | None = None,
    record_denoised: bool = False,
):
    """Run the full denoising schedule; returns (final latent, SampleTrace).

    Per step: conditional and unconditional passes, CFG combination, loss
    bookkeeping, optional refinement when the step index is in
    guidance.refine_steps (both passes and the combination are recomputed
    at the refined latent), then the denoising update. The only randomness
    is the initial draw, so equal seeds give bit-identical outputs; passing
    `initial` skips the draw entirely.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or dims[3] != model.arch.in_channels:
        raise ShapeError(f"dims {dims} incompatible with model")
    if guidance is not None and guidance.rho is not None:
        rho = guidance.rho
    if initial is None:
        z = Rng(seed).normal(dims)
    else:
        z = validate_latent(initial)
        if z.shape != dims:
            from .model import ShapeError


            raise ShapeError(f"initial latent {z.shape} != dims {dims}")
    aggregate = guidance.aggregate if guidance is not None else AGGREGATE_MAX
    debias_input = guidance.debias if guidance is not None else True
    refine_at = frozenset(guidance.refine_steps) if guidance is not None else frozenset()
    opt_state = None
    if guidance is not None:
        opt_state = make_opt_state(guidance, dims)

    trace = SampleTrace()
    for i, (t, sigma) in enumerate(zip(schedule.timesteps, schedule.sigmas)):
        u_cond = model.forward(z, t, cond)
        u_uncond = model.forward(z, t, None)
        u = cfg_combine(u_cond, u_uncond, rho)
        bd = flowmo_loss(u, aggregate=aggregate, debias_input=debias_input)
        refined = False
        grad_norm = None
        loss_before = bd.loss
        bd_used = bd
        if guidance is not None and i in refine_at:
            result, opt_state = refine(model, z, t, cond, rho, guidance, opt_state)
            z, u = result.z, result.u
            bd_used = flowmo_loss(u, aggregate=aggregate, debias_input=debias_input)
            refined = True
            grad_norm = float(np.mean(result.grad_norms))
        rec = StepRecord(
            step=i,
            t=t,
            sigma=sigma,
            loss_before=loss_before,
            loss_after=bd_used.loss,
            mean_s=float(bd_used.map.mean()),
            max_s=float(bd_used.map.max()),
            argmax_w=int(bd.argmax[0]),
            argmax_h=int(bd.argmax[1]),
            refined=refined,
            grad_norm=grad_norm,
            denoised=denoised_estimate(z, u, t) if record_denoised else None,
        )
        trace.records.append(rec)
        z = fm_step(z, u, sigma, schedule.strategy)
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite latent after step {i}")
    return z, trace
