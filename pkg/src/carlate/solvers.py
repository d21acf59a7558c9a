"""Regression solvers: OLS, logistic MLE, and weighted-l1 regressions with
data-driven penalty loadings.

The penalized fits minimize

    (1/m) * loss(b) + (rho/m) * sum_h loadings[h] * |b_h|

with m the number of rows, loss the residual sum of squares (least squares
family) or the negative Bernoulli log-likelihood (logistic family).  The
least-squares problem is solved by cyclic coordinate descent with an
active-set strategy; the logistic one by iteratively reweighted penalized
least squares.  Loadings are refined from residual second moments until they
stabilize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr, ndtri

RIDGE = 1e-8
SV_CUTOFF = 1e-12


@dataclass(frozen=True)
class LinearFit:
    coef: np.ndarray
    rank_deficient: bool
    iterations: int = 0


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    converged: bool
    grad_norm: float
    ridge_used: bool


@dataclass(frozen=True)
class LassoFit:
    coef: np.ndarray
    loadings: np.ndarray
    rho: float
    active_set: np.ndarray
    loading_iterations: int = 0


def normal_cdf(z):
    """Standard normal CDF."""
    return ndtr(z)


def normal_quantile(p: float) -> float:
    """Standard normal quantile; p must lie strictly inside (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile argument {p} outside (0, 1)")
    return float(ndtri(p))


def rho_tuning(n_as: int, p_n: int, c: float = 1.1) -> float:
    """Penalty level c * sqrt(n_as) * quantile(1 - 1/(p_n * log(n_as)))."""
    if p_n < 1:
        raise ValueError("regressor count must be at least 1")
    arg = 1.0 - 1.0 / (p_n * math.log(n_as))
    if not 0.0 < arg < 1.0:
        raise ValueError(f"quantile argument {arg} outside (0, 1); "
                         f"need a larger cell than n_a(s)={n_as}")
    return c * math.sqrt(n_as) * normal_quantile(arg)


def ols(design: np.ndarray, y: np.ndarray) -> LinearFit:
    """Least-squares fit; minimum-norm solution when rank-deficient."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=SV_CUTOFF)
    return LinearFit(coef=coef, rank_deficient=rank < design.shape[1])


def _neg_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    # -sum[y*eta - log(1+exp(eta))], computed stably
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def logistic_mle(design: np.ndarray, y: np.ndarray, tol: float = 1e-8,
                 max_iter: int = 100) -> LogisticFit:
    """Logistic maximum likelihood via Newton iterations with step halving.

    Convergence requires the score sum(y_i - p_i) * x_i to have norm at most
    ``tol``.  When the Hessian is singular or the coefficients diverge
    (separation), a small ridge stabilizes the step and ``ridge_used`` is
    flagged; a fit is still returned as long as it stays finite.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("logistic response must be coded {0,1}")
    m, p = design.shape
    coef = np.zeros(p)
    ridge_used = False
    eta = design @ coef
    loss = _neg_loglik(eta, y)
    grad_norm = np.inf
    for _ in range(max_iter):
        prob = expit(eta)
        score = design.T @ (y - prob)
        grad_norm = float(np.linalg.norm(score))
        if grad_norm <= tol:
            return LogisticFit(coef=coef, converged=True, grad_norm=grad_norm,
                               ridge_used=ridge_used)
        w = prob * (1.0 - prob)
        hess = design.T @ (design * w[:, None])
        if eta.size and np.max(np.abs(eta)) > 30.0:
            # some fitted probability saturated: separation along a direction
            ridge_used = True
        try:
            if ridge_used:
                hess = hess + RIDGE * np.eye(p)
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            ridge_used = True
            step = np.linalg.solve(hess + RIDGE * np.eye(p), score)
        scale = 1.0
        for _ in range(40):
            new_coef = coef + scale * step
            new_eta = design @ new_coef
            new_loss = _neg_loglik(new_eta, y)
            if new_loss <= loss + 1e-12:
                break
            scale *= 0.5
        coef, eta, loss = new_coef, new_eta, new_loss
        if not np.all(np.isfinite(coef)):
            raise ValueError("perfect separation")
    prob = expit(eta)
    grad_norm = float(np.linalg.norm(design.T @ (y - prob)))
    return LogisticFit(coef=coef, converged=grad_norm <= tol,
                       grad_norm=grad_norm, ridge_used=True)


def _soft_threshold(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _cd_kernel(design, y, w, thresholds, coef, tol, max_sweeps):
    """Coordinate descent for (1/2) sum w_i (y_i - x_i'b)^2 + sum_j t_j |b_j|.

    Sweeps cycle in ascending column order, restricting to the active set
    between full passes; ``coef`` is updated in place.
    """
    m, p = design.shape
    col_norms = np.zeros(p)
    for j in range(p):
        acc = 0.0
        for i in range(m):
            acc += w[i] * design[i, j] * design[i, j]
        col_norms[j] = acc
    r = np.empty(m)
    for i in range(m):
        pred = 0.0
        for j in range(p):
            pred += design[i, j] * coef[j]
        r[i] = y[i] - pred
    sweeps = 0
    full_pass = True
    while sweeps < max_sweeps:
        sweeps += 1
        delta = 0.0
        for j in range(p):
            if not full_pass and coef[j] == 0.0:
                continue
            cn = col_norms[j]
            if cn <= 0.0:
                continue
            old = coef[j]
            z = cn * old
            for i in range(m):
                z += w[i] * design[i, j] * r[i]
            t = thresholds[j]
            if z > t:
                new = (z - t) / cn
            elif z < -t:
                new = (z + t) / cn
            else:
                new = 0.0
            if new != old:
                coef[j] = new
                diff = new - old
                for i in range(m):
                    r[i] -= design[i, j] * diff
                if abs(diff) > delta:
                    delta = abs(diff)
        if delta < tol:
            if full_pass:
                break
            full_pass = True      # verify no inactive coordinate re-enters
        else:
            full_pass = False
    return sweeps


try:                              # compiled kernel; the plain function is the fallback
    from numba import njit

    _cd_kernel = njit(cache=True)(_cd_kernel)
except ImportError:               # pragma: no cover
    pass


def _cd_weighted_ls(design, y, w, thresholds, coef, tol, max_sweeps):
    design = np.ascontiguousarray(design, dtype=float)
    sweeps = _cd_kernel(design, np.ascontiguousarray(y, dtype=float),
                        np.ascontiguousarray(w, dtype=float),
                        np.ascontiguousarray(thresholds, dtype=float),
                        coef, tol, max_sweeps)
    return coef, sweeps


def lasso_ls(design, y, rho: float, loadings, tol: float = 1e-8,
             max_sweeps: int = 10_000, warm=None) -> LassoFit:
    """Weighted-l1 least squares: (1/m)||y - Xb||^2 + (rho/m) sum w_j |b_j|."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    if np.any(loadings < 0):
        raise ValueError("penalty loadings must be nonnegative")
    m, p = design.shape
    coef = np.zeros(p) if warm is None else np.array(warm, dtype=float)
    # objective has loss /m and penalty rho/m; the common 1/m cancels, and
    # the squared loss contributes a factor 2 to its gradient
    thresholds = 0.5 * rho * loadings
    coef, _ = _cd_weighted_ls(design, y, np.ones(m), thresholds, coef, tol, max_sweeps)
    resid = y - design @ coef
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(resid @ resid) / m + rho / m * float(loadings @ np.abs(coef))
    if not np.isfinite(loss):
        raise ValueError("non-finite loss (signals bad scaling)")
    return LassoFit(coef=coef, loadings=loadings, rho=rho,
                    active_set=np.flatnonzero(coef))


def lasso_logit(design, y, rho: float, loadings, tol: float = 1e-8,
                max_outer: int = 100, max_sweeps: int = 10_000, warm=None) -> LassoFit:
    """Weighted-l1 logistic regression solved by iteratively reweighted
    penalized least squares; outer loop stops when the largest coefficient
    change falls below ``tol``."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    if np.any(loadings < 0):
        raise ValueError("penalty loadings must be nonnegative")
    m, p = design.shape
    coef = np.zeros(p) if warm is None else np.array(warm, dtype=float)
    thresholds = rho * loadings
    for _ in range(max_outer):
        eta = np.clip(design @ coef, -30.0, 30.0)
        prob = expit(eta)
        w = np.maximum(prob * (1.0 - prob), 1e-6)
        z = eta + (y - prob) / w
        new = coef.copy()
        new, _ = _cd_weighted_ls(design, z, w, thresholds, new, 0.1 * tol, max_sweeps)
        delta = float(np.max(np.abs(new - coef))) if p else 0.0
        coef = new
        if not np.all(np.isfinite(coef)):
            raise ValueError("non-finite loss (signals bad scaling)")
        if delta < tol:
            break
    with np.errstate(over="ignore", invalid="ignore"):
        loss = _neg_loglik(design @ coef, y) / m \
            + rho / m * float(loadings @ np.abs(coef))
    if not np.isfinite(loss):
        raise ValueError("non-finite loss (signals bad scaling)")
    return LassoFit(coef=coef, loadings=loadings, rho=rho,
                    active_set=np.flatnonzero(coef))


def _residual_loadings(design, resid):
    return np.sqrt(np.mean((design * resid[:, None]) ** 2, axis=0))


def iterate_loadings(design, y, family: str, rho: float,
                     unpenalized_cols=(0,), tol: float = 1e-4,
                     max_rounds: int = 15) -> LassoFit:
    """Penalized fit with loadings refined from residual moments.

    Starts from loadings sqrt(mean((y_i - ybar)^2 * x_ih^2)), then alternates
    fitting and recomputing sqrt(mean((x_ih * resid_i)^2)) until the largest
    loading change drops below ``tol`` or ``max_rounds`` refits have run.
    Columns in ``unpenalized_cols`` (the intercept, by default) always carry
    a zero loading.
    """
    if family not in ("leastsquares", "logistic"):
        raise ValueError(f"unknown family '{family}'")
    if rho < 0:
        raise ValueError("penalty level must be nonnegative")
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    fit_one = lasso_ls if family == "leastsquares" else lasso_logit

    def _mask(loadings):
        out = loadings.copy()
        for j in unpenalized_cols:
            out[j] = 0.0
        return out

    loadings = _mask(_residual_loadings(design, y - y.mean()))
    fit = fit_one(design, y, rho, loadings)
    rounds = 0
    for _ in range(max_rounds):
        if family == "leastsquares":
            resid = y - design @ fit.coef
        else:
            resid = y - expit(design @ fit.coef)
        new_loadings = _mask(_residual_loadings(design, resid))
        rounds += 1
        if float(np.max(np.abs(new_loadings - loadings))) < tol:
            break
        loadings = new_loadings
        fit = fit_one(design, y, rho, loadings, warm=fit.coef)
    # `loadings` is always the vector the final fit was computed with, so the
    # returned pair satisfies the stationarity conditions jointly
    return LassoFit(coef=fit.coef, loadings=loadings, rho=rho,
                    active_set=np.flatnonzero(fit.coef), loading_iterations=rounds)
