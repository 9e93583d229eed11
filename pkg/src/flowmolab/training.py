"""Flow-matching trainer for the toy velocity model.

Each step draws a data latent z1 (with its condition id), noise z0 ~ N(0,I)
and t ~ U(0,1), forms z_t = (1-t) z1 + t z0 and regresses the model output
onto the path velocity z0 - z1 under mean squared error. The condition is
replaced by the null token with probability cond_dropout per sample so the
trained model supports classifier-free guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ToyVelocityModel
from .optim import AdamState
from .rng import Rng
from .tensors import NumericError, validate_latent


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 4
    learning_rate: float = 2e-3
    seed: int = 0
    cond_dropout: float = 0.1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ValueError("cond_dropout must be in [0, 1]")


def train_fm(model: ToyVelocityModel, dataset, cfg: TrainConfig):
    """Train and return (trained model, per-step loss list).

    dataset is a sequence of (latent video, condition id) pairs with
    homogeneous dims. Seeded draws happen in a fixed order (index, t,
    dropout, noise) per batch element, so equal seeds give bit-identical
    parameters.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    dims = np.asarray(dataset[0][0]).shape
    for video, cond in dataset:
        v = validate_latent(video)
        if v.shape != dims:
            raise ValueError(f"inhomogeneous dataset dims: {v.shape} vs {dims}")
        model._cond_index(cond)

    rng = Rng(cfg.seed)
    params = model.params.copy()
    adam = AdamState.zeros(params.shape)
    numel = float(np.prod(dims))
    losses: list[float] = []

    for step in range(cfg.steps):
        current = model.with_params(params)
        grad = np.zeros_like(params)
        loss_acc = 0.0
        for _ in range(cfg.batch_size):
            idx = int(rng.integers(1, len(dataset))[0])
            t = float(rng.uniform(1)[0])
            drop = float(rng.uniform(1)[0]) < cfg.cond_dropout
            z0 = rng.normal(dims)
            z1, cond = dataset[idx]
            used = None if drop else cond
            zt = (1.0 - t) * np.asarray(z1, dtype=np.float64) + t * z0
            target = z0 - z1
            out, tape = current.forward_with_tape(zt, t, used)
            resid = out - target
            loss_acc += float(np.mean(resid * resid))
            grad += current.backward_params(tape, (2.0 / numel) * resid)
        grad /= cfg.batch_size
        params = adam.step(params, grad, cfg.learning_rate)
        losses.append(loss_acc / cfg.batch_size)
        if step % 200 == 0 and not np.all(np.isfinite(params)):
            raise NumericError(f"non-finite parameters at training step {step}")

    if not np.all(np.isfinite(params)):
        raise NumericError("non-finite parameters after training")
    return model.with_params(params), losses
