"""Working-model fits per (arm, stratum) cell and their per-unit predictions.

Every builder returns an :class:`AdjustmentSurface` holding fitted values
mu_y[i, a] and mu_d[i, a] for both assignment arms at every unit, which is
what the doubly robust moment consumes: predictions are materialized for the
whole stratum, including units observed in the opposite arm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .basis import sieve_basis
from .data import ExperimentData, index_strata
from .solvers import iterate_loadings, logistic_mle, ols, rho_tuning

METHOD_TAGS = ("NA", "L", "NL", "F", "NP", "R")

# logistic-family predictions stay strictly inside (0, 1) even when a
# separated cell saturates the link in floating point
_PROB_EPS = 1e-12


def _clip_prob(p: np.ndarray) -> np.ndarray:
    return np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)


class AdjustmentError(ValueError):
    """Raised when a cell cannot support the requested fit."""


@dataclass(frozen=True)
class RegressorSpec:
    """Feature map applied to the covariate matrix before cell-level fits.

    ``build`` returns the n-by-d feature matrix without a constant column;
    builders that need an intercept prepend it themselves.
    """

    name: str
    build: Callable[[np.ndarray], np.ndarray]


def _build_raw(x: np.ndarray) -> np.ndarray:
    return x


def _build_sieve(x: np.ndarray) -> np.ndarray:
    if x.shape[1] != 2:
        raise AdjustmentError("sieve regressors require exactly two covariates")
    return sieve_basis(x[:, 0], x[:, 1])[:, 1:]   # constant handled downstream


RAW = RegressorSpec(name="raw", build=_build_raw)
SIEVE = RegressorSpec(name="sieve", build=_build_sieve)

REGRESSOR_SPECS = {"raw": RAW, "sieve": SIEVE}


@dataclass(frozen=True)
class AdjustmentSurface:
    """Fitted working-model predictions for both arms at every unit."""

    mu_y: np.ndarray                    # (n, 2); column a holds mu_y(a, S_i, X_i)
    mu_d: np.ndarray                    # (n, 2)
    method: str
    fit_diagnostics: dict = field(default_factory=dict)

    def shifted(self, c_y=None, c_d=None, s=None) -> "AdjustmentSurface":
        """Copy with stratum-specific constants added to every prediction
        (used to exercise the location-shift invariance)."""
        mu_y = self.mu_y.copy()
        mu_d = self.mu_d.copy()
        if c_y is not None:
            mu_y += np.asarray(c_y)[s][:, None]
        if c_d is not None:
            mu_d += np.asarray(c_d)[s][:, None]
        return AdjustmentSurface(mu_y=mu_y, mu_d=mu_d, method=self.method,
                                 fit_diagnostics=self.fit_diagnostics)


def _cells(data: ExperimentData):
    """Yield (a, s, cell_rows, stratum_rows) over all arm-stratum cells."""
    idx = index_strata(data)
    for s in range(data.n_strata):
        rows_s = np.flatnonzero(data.s == s)
        for a, cell in ((1, idx.i1_of[s]), (0, idx.i0_of[s])):
            yield a, s, cell, rows_s


def _require_nonempty(cell, a, s, data):
    if cell.size == 0:
        label = data.s_labels[s]
        raise AdjustmentError(f"empty cell: no units with a={a} in stratum {label!r}")


def adjust_none(data: ExperimentData) -> AdjustmentSurface:
    """No adjustment: identically zero working models."""
    zeros = np.zeros((data.n, 2))
    return AdjustmentSurface(mu_y=zeros, mu_d=zeros.copy(), method="NA")


def adjust_optimal_linear(data: ExperimentData, spec: RegressorSpec = RAW) -> AdjustmentSurface:
    """Variance-minimizing linear adjustment.

    Per cell, the features are demeaned within the cell and outcome and
    treatment are regressed on them; predictions apply the slopes to the raw
    features of every unit in the stratum (the arbitrary level is irrelevant
    by the location-shift invariance of the final estimator).
    """
    psi = spec.build(data.x)
    mu_y = np.zeros((data.n, 2))
    mu_d = np.zeros((data.n, 2))
    diags = {}
    for a, s, cell, rows_s in _cells(data):
        _require_nonempty(cell, a, s, data)
        centered = psi[cell] - psi[cell].mean(axis=0)
        fit_y = ols(centered, data.y[cell])
        fit_d = ols(centered, data.d[cell].astype(float))
        mu_y[rows_s, a] = psi[rows_s] @ fit_y.coef
        mu_d[rows_s, a] = psi[rows_s] @ fit_d.coef
        diags[(a, s)] = {"rank_deficient": fit_y.rank_deficient or fit_d.rank_deficient,
                         "n_cell": int(cell.size)}
    return AdjustmentSurface(mu_y=mu_y, mu_d=mu_d, method="L", fit_diagnostics=diags)


def _fit_linear_logistic(data: ExperimentData, design0: np.ndarray, method: str):
    """Shared cell loop for the linear-outcome / logistic-treatment families."""
    mu_y = np.zeros((data.n, 2))
    mu_d = np.zeros((data.n, 2))
    diags = {}
    coefs_d = {}
    for a, s, cell, rows_s in _cells(data):
        _require_nonempty(cell, a, s, data)
        fit_y = ols(design0[cell], data.y[cell])
        fit_d = logistic_mle(design0[cell], data.d[cell].astype(float))
        mu_y[rows_s, a] = design0[rows_s] @ fit_y.coef
        mu_d[rows_s, a] = _clip_prob(expit(design0[rows_s] @ fit_d.coef))
        coefs_d[(a, s)] = fit_d.coef
        diags[(a, s)] = {"rank_deficient": fit_y.rank_deficient,
                         "logit_converged": fit_d.converged,
                         "ridge_used": fit_d.ridge_used,
                         "n_cell": int(cell.size)}
    return AdjustmentSurface(mu_y=mu_y, mu_d=mu_d, method=method,
                             fit_diagnostics=diags), coefs_d


def adjust_ols_logit(data: ExperimentData, spec: RegressorSpec = RAW) -> AdjustmentSurface:
    """Linear outcome model and logistic treatment model per cell, both with
    an intercept."""
    psi = spec.build(data.x)
    design0 = np.column_stack([np.ones(data.n), psi])
    surface, _ = _fit_linear_logistic(data, design0, "NL")
    return surface


def adjust_nonparametric(data: ExperimentData) -> AdjustmentSurface:
    """Sieve version of the linear/logistic adjustment for two-covariate data;
    identical computation with the spline-type design as regressors."""
    surface = adjust_ols_logit(data, SIEVE)
    return AdjustmentSurface(mu_y=surface.mu_y, mu_d=surface.mu_d, method="NP",
                             fit_diagnostics=surface.fit_diagnostics)


def augmented_features(data: ExperimentData, spec: RegressorSpec = RAW) -> np.ndarray:
    """Features for the further-improvement fit: the base features plus the
    two arm-specific fitted treatment probabilities, one column each."""
    psi = spec.build(data.x)
    design0 = np.column_stack([np.ones(data.n), psi])
    _, coefs_d = _fit_linear_logistic(data, design0, "NL")
    phi = np.zeros((data.n, psi.shape[1] + 2))
    for s in range(data.n_strata):
        rows_s = np.flatnonzero(data.s == s)
        p1 = expit(design0[rows_s] @ coefs_d[(1, s)])
        p0 = expit(design0[rows_s] @ coefs_d[(0, s)])
        phi[rows_s] = np.column_stack([psi[rows_s], p1, p0])
    return phi


def adjust_further(data: ExperimentData, spec: RegressorSpec = RAW) -> AdjustmentSurface:
    """Efficiency improvement over both the optimal linear and the logistic
    adjustments: the two fitted treatment probabilities join the features,
    and the enlarged design is refit as an optimal linear adjustment.
    """
    phi = augmented_features(data, spec)
    mu_y = np.zeros((data.n, 2))
    mu_d = np.zeros((data.n, 2))
    diags = {}
    for a, s, cell, rows_s in _cells(data):
        _require_nonempty(cell, a, s, data)
        centered = phi[cell] - phi[cell].mean(axis=0)
        fit_y = ols(centered, data.y[cell])
        fit_d = ols(centered, data.d[cell].astype(float))
        mu_y[rows_s, a] = phi[rows_s] @ fit_y.coef
        mu_d[rows_s, a] = phi[rows_s] @ fit_d.coef
        diags[(a, s)] = {"rank_deficient": fit_y.rank_deficient or fit_d.rank_deficient,
                         "n_cell": int(cell.size)}
    return AdjustmentSurface(mu_y=mu_y, mu_d=mu_d, method="F", fit_diagnostics=diags)


def adjust_regularized(data: ExperimentData, spec: RegressorSpec = SIEVE,
                       c: float = 1.1, rho_override: float | None = None) -> AdjustmentSurface:
    """Penalized linear/logistic adjustment with data-driven loadings.

    The penalty level per cell is c * sqrt(n_a(s)) * quantile(1 - 1/(p log
    n_a(s))) with p the regressor count, unless ``rho_override`` pins it.
    Cells need at least 3 units for the tuning formula.
    """
    psi = spec.build(data.x)
    design0 = np.column_stack([np.ones(data.n), psi])
    p_n = design0.shape[1]
    mu_y = np.zeros((data.n, 2))
    mu_d = np.zeros((data.n, 2))
    diags = {}
    for a, s, cell, rows_s in _cells(data):
        _require_nonempty(cell, a, s, data)
        label = data.s_labels[s]
        if rho_override is None and cell.size < 3:
            raise AdjustmentError(f"cell a={a}, stratum {label!r} has "
                                  f"{cell.size} units; need at least 3")
        try:
            rho = rho_tuning(cell.size, p_n, c) if rho_override is None else rho_override
            fit_y = iterate_loadings(design0[cell], data.y[cell], "leastsquares", rho)
            fit_d = iterate_loadings(design0[cell], data.d[cell].astype(float),
                                     "logistic", rho)
        except ValueError as exc:
            raise AdjustmentError(f"cell a={a}, stratum {label!r}: {exc}") from exc
        mu_y[rows_s, a] = design0[rows_s] @ fit_y.coef
        mu_d[rows_s, a] = _clip_prob(expit(design0[rows_s] @ fit_d.coef))
        diags[(a, s)] = {"rho": rho,
                         "active_y": int(fit_y.active_set.size),
                         "active_d": int(fit_d.active_set.size),
                         "loading_iterations": max(fit_y.loading_iterations,
                                                   fit_d.loading_iterations),
                         "n_cell": int(cell.size)}
    return AdjustmentSurface(mu_y=mu_y, mu_d=mu_d, method="R", fit_diagnostics=diags)


def build_surface(data: ExperimentData, method: str,
                  regressors: str = "raw", **kwargs) -> AdjustmentSurface:
    """Construct the adjustment surface for one of the method tags."""
    method = method.upper()
    if isinstance(regressors, str):
        if regressors not in REGRESSOR_SPECS:
            raise AdjustmentError(f"unknown regressor spec '{regressors}'; "
                                  f"choose one of {sorted(REGRESSOR_SPECS)}")
        spec = REGRESSOR_SPECS[regressors]
    else:
        spec = regressors
    if method == "NA":
        return adjust_none(data)
    if method == "L":
        return adjust_optimal_linear(data, spec)
    if method == "NL":
        return adjust_ols_logit(data, spec)
    if method == "F":
        return adjust_further(data, spec)
    if method == "NP":
        return adjust_nonparametric(data)
    if method == "R":
        return adjust_regularized(data, spec, **kwargs)
    raise AdjustmentError(f"unknown adjustment method '{method}'")
