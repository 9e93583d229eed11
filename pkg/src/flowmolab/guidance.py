"""Temporal-coherence loss on velocity predictions and latent refinement.

The loss chain: take absolute differences of consecutive frames (appearance
debiasing, so content shared by all frames cancels), compute the population
variance of those differences across the frame axis per (w, h, c), average
over channels into a spatial map s, and take the maximum entry - the most
temporally incoherent patch. Refinement descends this scalar through the
classifier-free-guided model prediction back to the noised latent.

Gradients are analytic: the max selects one (w*, h*) column, the channel
mean contributes 1/C, the population variance over M values contributes
2 (d_f - mean d) / M, and each absolute difference routes +sign to frame
f+1 and -sign to frame f, with sign(0) = 0. The gradient is exactly zero
outside the argmax column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import AdamState, SgdState
from .tensors import TensorValueError, validate_latent, variance_over_axis0

AGGREGATE_MAX = "max"
AGGREGATE_MEAN = "mean"


@dataclass(frozen=True)
class GuidanceConfig:
    """Refinement hyperparameters.

    rho left at None means "use the sampler's guidance scale". refine_steps
    are schedule indices. aggregate/debias select ablation variants of the
    loss; the defaults are the full method. grad_through_uncond=False
    restricts the gradient to the conditional branch of the CFG combination.
    """

    eta: float = 0.005
    refine_steps: tuple = tuple(range(12))
    rho: float | None = None
    optimizer: str = "adam"
    inner_iterations: int = 1
    grad_through_uncond: bool = True
    aggregate: str = AGGREGATE_MAX
    debias: bool = True

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.inner_iterations < 1:
            raise ValueError("inner_iterations must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.aggregate not in (AGGREGATE_MAX, AGGREGATE_MEAN):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")
        if any(int(i) < 0 for i in self.refine_steps):
            raise ValueError("refine_steps must be non-negative indices")


@dataclass
class LossBreakdown:
    """Loss value plus the intermediates behind it.

    For the default max aggregate, loss == map[argmax]. debiased holds the
    frame-difference tensor (F-1 frames) or None for the no-debias variant.
    """

    loss: float
    argmax: tuple[int, int]
    map: np.ndarray
    debiased: np.ndarray | None = None


def debias(u: np.ndarray) -> np.ndarray:
    """Absolute differences of consecutive frames: (F, ...) -> (F-1, ...)."""
    u = validate_latent(u, min_frames=2)
    return np.abs(u[1:] - u[:-1])


def variance_map(du: np.ndarray) -> np.ndarray:
    """Channel mean of the per-(w, h, c) population variance across frames."""
    du = validate_latent(du)
    return variance_over_axis0(du).mean(axis=2)


def flowmo_loss(u, *, aggregate: str = AGGREGATE_MAX, debias_input: bool = True):
    """Scalar temporal-coherence loss with full breakdown.

    Argmax ties break to the smallest (w, h) in row-major order.
    """
    u = validate_latent(u, min_frames=2)
    du = debias(u) if debias_input else u
    smap = variance_map(du)
    flat = int(np.argmax(smap))
    argmax = (flat // smap.shape[1], flat % smap.shape[1])
    if aggregate == AGGREGATE_MAX:
        loss = float(smap[argmax])
    elif aggregate == AGGREGATE_MEAN:
        loss = float(smap.mean())
    else:
        raise ValueError(f"unknown aggregate {aggregate!r}")
    return LossBreakdown(
        loss=loss, argmax=argmax, map=smap, debiased=du if debias_input else None
    )


def loss_grad_wrt_u(
    u, *, aggregate: str = AGGREGATE_MAX, debias_input: bool = True
) -> np.ndarray:
    """dL/du, nonzero only at the argmax (w*, h*) column for the max loss."""
    u = validate_latent(u, min_frames=2)
    bd = flowmo_loss(u, aggregate=aggregate, debias_input=debias_input)
    w, h = bd.map.shape
    if aggregate == AGGREGATE_MAX:
        sel = np.zeros((w, h))
        sel[bd.argmax] = 1.0
    else:
        sel = np.full((w, h), 1.0 / (w * h))
    du = bd.debiased if debias_input else u
    m = du.shape[0]
    c = u.shape[3]
    coef = sel[None, :, :, None] * (2.0 / (m * c)) * (du - du.mean(axis=0))
    if not debias_input:
        return coef
    gd = coef * np.sign(u[1:] - u[:-1])
    g = np.zeros_like(u)
    g[1:] += gd
    g[:-1] -= gd
    return g


def loss_grad_wrt_z(
    model,
    z,
    t: float,
    cond,
    rho: float,
    *,
    grad_through_uncond: bool = True,
    aggregate: str = AGGREGATE_MAX,
    debias_input: bool = True,
):
    """Gradient of the loss at the CFG-combined prediction w.r.t. the latent.

    u = u_cond + rho (u_cond - u_uncond), so du/dz = (1+rho) J_cond -
    rho J_uncond and the returned gradient is the corresponding VJP
    combination. Returns (gradient, breakdown at u).
    """
    from .sampler import cfg_combine

    u_cond = model.forward(z, t, cond)
    u_uncond = model.forward(z, t, None)
    u = cfg_combine(u_cond, u_uncond, rho)
    bd = flowmo_loss(u, aggregate=aggregate, debias_input=debias_input)
    gu = loss_grad_wrt_u(u, aggregate=aggregate, debias_input=debias_input)
    gz = (1.0 + rho) * model.vjp(z, t, cond, gu)
    if grad_through_uncond and rho != 0.0:
        gz = gz - rho * model.vjp(z, t, None, gu)
    return gz, bd


@dataclass
class RefineResult:
    z: np.ndarray
    u: np.ndarray
    breakdown_before: LossBreakdown
    grad_norms: list[float] = field(default_factory=list)


def make_opt_state(cfg: GuidanceConfig, shape):
    return AdamState.zeros(shape) if cfg.optimizer == "adam" else SgdState()


def refine(model, z, t: float, cond, rho: float, cfg: GuidanceConfig, opt_state):
    """One refinement: inner_iterations descent updates on z, then fresh
    conditional/unconditional passes and CFG combination at the new z.

    opt_state is owned by the calling sampling run and persists across
    refinement timesteps; pass None to create it here. Returns
    (RefineResult, opt_state).
    """
    from .sampler import cfg_combine

    if opt_state is None:
        opt_state = make_opt_state(cfg, np.asarray(z).shape)
    result_bd = None
    grad_norms = []
    for _ in range(cfg.inner_iterations):
        gz, bd = loss_grad_wrt_z(
            model,
            z,
            t,
            cond,
            rho,
            grad_through_uncond=cfg.grad_through_uncond,
            aggregate=cfg.aggregate,
            debias_input=cfg.debias,
        )
        if result_bd is None:
            result_bd = bd
        grad_norms.append(float(np.sqrt(np.sum(gz * gz))))
        z = opt_state.step(z, gz, cfg.eta)
    u_cond = model.forward(z, t, cond)
    u_uncond = model.forward(z, t, None)
    u = cfg_combine(u_cond, u_uncond, rho)
    return RefineResult(z=z, u=u, breakdown_before=result_bd, grad_norms=grad_norms), opt_state
