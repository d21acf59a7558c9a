"""Sieve design builders for the nonparametric and regularized adjustments."""

from __future__ import annotations

import numpy as np


def sieve_basis(x1, x2) -> np.ndarray:
    """Nine-column spline-type design for a two-covariate sample.

    Columns: 1, x1, x2, x1^2, x2^2, x1*1{x1>t1}, x2*1{x2>t2}, x1*x2,
    x1*1{x1>t1} * x2*1{x2>t2}, with t1, t2 the full-sample medians and a
    strict comparison at the threshold.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    t1 = np.median(x1)
    t2 = np.median(x2)
    h1 = x1 * (x1 > t1)
    h2 = x2 * (x2 > t2)
    return np.column_stack([
        np.ones_like(x1), x1, x2, x1 ** 2, x2 ** 2, h1, h2, x1 * x2, h1 * h2,
    ])


def general_sieve(x, kind: str = "power", degree: int = 2, knots=None) -> np.ndarray:
    """Additive sieve design: one intercept plus per-covariate basis columns.

    kind="power" expands each covariate into x, x^2, ..., x^degree.
    kind="spline" uses the truncated-power basis of order ``degree``:
    x, ..., x^(degree-1) plus max(x - t, 0)^(degree-1) at each interior
    knot.  ``knots`` is a knot count (placed at equally spaced sample
    quantiles) or an explicit strictly increasing grid shared by all
    covariates.  The non-constant column count is d_x * J per covariate
    block, with no cross-covariate interactions.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d_x = x.shape
    cols = [np.ones(n)]
    if kind == "power":
        if degree < 1:
            raise ValueError("power degree must be at least 1")
        for l in range(d_x):
            for k in range(1, degree + 1):
                cols.append(x[:, l] ** k)
    elif kind == "spline":
        if degree < 2:
            raise ValueError("spline order must be at least 2")
        for l in range(d_x):
            xl = x[:, l]
            for k in range(1, degree):
                cols.append(xl ** k)
            grid = _knot_grid(xl, knots)
            for t in grid:
                cols.append(np.maximum(xl - t, 0.0) ** (degree - 1))
    else:
        raise ValueError(f"unknown sieve kind '{kind}'")
    return np.column_stack(cols)


def _knot_grid(xl: np.ndarray, knots) -> np.ndarray:
    if knots is None:
        knots = 1
    if np.isscalar(knots):
        j = int(knots)
        if j < 1:
            raise ValueError("knot count must be at least 1")
        qs = np.arange(1, j + 1) / (j + 1)
        grid = np.quantile(xl, qs)
    else:
        grid = np.asarray(knots, dtype=float)
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("degenerate knot grid: knots must be strictly increasing")
    return grid
