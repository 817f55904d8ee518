"""Small numerical helpers used by several modules."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of log(y) against log(x).

    Returns (slope, stderr). With fewer than two points the slope is nan;
    with exactly two points the standard error is nan (no residual dof).
    All x and y must be positive.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("x and y must be 1-d sequences of equal length")
    if xa.size < 2:
        return math.nan, math.nan
    if np.any(xa <= 0) or np.any(ya <= 0):
        raise ValueError("log-log fit requires positive data")
    lx = np.log(xa)
    ly = np.log(ya)
    lx_c = lx - lx.mean()
    sxx = float(lx_c @ lx_c)
    if sxx == 0.0:
        return math.nan, math.nan
    slope = float(lx_c @ (ly - ly.mean())) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    n = xa.size
    if n == 2:
        return slope, math.nan
    sigma2 = float(resid @ resid) / (n - 2)
    return slope, math.sqrt(sigma2 / sxx)
