"""Welch's t-test with a normal-approximation p-value.

Implemented in-package so experiment comparisons need no external
statistics stack. The normal approximation to the t distribution is
adequate at the sample sizes used here (n >= 20 per group).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_one_sided: float  # H1: mean(x) > mean(y)
    p_two_sided: float
    mean_x: float
    mean_y: float


def _normal_sf(x: float) -> float:
    """P(Z > x) for standard normal Z."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def welch_t_test(x, y) -> WelchResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = x.size, y.size
    if nx < 2 or ny < 2:
        raise ValueError("Welch's t-test needs at least two samples per group")
    mx, my = float(x.mean()), float(y.mean())
    vx = float(x.var(ddof=1))
    vy = float(y.var(ddof=1))
    se2 = vx / nx + vy / ny
    if se2 == 0.0:
        t = 0.0 if mx == my else math.copysign(math.inf, mx - my)
        df = float(nx + ny - 2)
    else:
        t = (mx - my) / math.sqrt(se2)
        df = se2**2 / (
            (vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1)
        )
    return WelchResult(
        t=t,
        df=df,
        p_one_sided=_normal_sf(t),
        p_two_sided=2.0 * _normal_sf(abs(t)),
        mean_x=mx,
        mean_y=my,
    )
