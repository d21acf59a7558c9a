"""LATE point estimators, their variance estimators, and Wald inference.

The central estimator is the doubly robust moment ratio: per-unit terms

    xi_H = A(D - mu_d1)/pi - (1-A)(D - mu_d0)/(1-pi) + mu_d1 - mu_d0
    xi_G = A(Y - mu_y1)/pi - (1-A)(Y - mu_y0)/(1-pi) + mu_y1 - mu_y0

with pi the within-stratum treated fraction, and tau = mean(xi_G) /
mean(xi_H).  Any adjustment surface may be plugged in; the point estimate is
exactly invariant to stratum-specific shifts of the surface.  The TSLS
benchmark (assignment as instrument, strata dummies and covariates as
exogenous controls) and the stratum-wise regression aggregation estimator
("S") are provided for comparison with their own variance estimators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjustments import AdjustmentSurface, build_surface
from .data import ExperimentData, index_strata
from .solvers import normal_cdf, normal_quantile, ols

DENOM_TOL = 1e-12


class EstimationError(ValueError):
    """Raised when an estimator's in-sample requirements fail."""


@dataclass(frozen=True)
class LateEstimate:
    """Point estimate with asymptotic scale: the standard error is
    sigma_hat / sqrt(n)."""

    tau_hat: float
    sigma_hat: float | None
    n: int
    method: str
    h_hat: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> float:
        return self.sigma_hat / np.sqrt(self.n)


@dataclass(frozen=True)
class TslsEstimate:
    """Two-stage least squares estimate with the usual heteroskedasticity
    robust (sandwich) standard error; ``coef`` stacks the treatment
    coefficient first, then strata dummies, then covariates."""

    tau_hat: float
    sigma_naive_hat: float
    n: int
    coef: np.ndarray

    @property
    def sigma_hat(self) -> float:
        return self.sigma_naive_hat

    @property
    def method(self) -> str:
        return "TSLS"

    @property
    def se(self) -> float:
        return self.sigma_naive_hat / np.sqrt(self.n)


@dataclass(frozen=True)
class SEstimate:
    """Stratum-wise regression aggregation estimate."""

    tau_hat: float
    sigma_hat: float
    n: int
    gamma: dict
    nu: dict
    denominator: float

    @property
    def method(self) -> str:
        return "S"

    @property
    def se(self) -> float:
        return self.sigma_hat / np.sqrt(self.n)


def _pi_per_unit(data: ExperimentData, pi=None):
    idx = index_strata(data)
    if pi is None:
        pi_s = idx.pi_hat
    else:
        pi_s = np.atleast_1d(np.asarray(pi, dtype=float))
        if pi_s.size == 1:
            pi_s = np.full(data.n_strata, pi_s[0])
    bad = ~((pi_s > 0.0) & (pi_s < 1.0))
    if np.any(bad):
        labels = [data.s_labels[j] for j in np.flatnonzero(bad)]
        raise EstimationError(f"stratum treated fraction is 0 or 1 in strata {labels}; "
                              "every stratum needs both arms")
    return idx, pi_s, pi_s[data.s]


def _moment_terms(data: ExperimentData, surface: AdjustmentSurface, pi_i):
    a = data.a.astype(float)
    d = data.d.astype(float)
    w1 = a / pi_i
    w0 = (1.0 - a) / (1.0 - pi_i)
    xi_h = (w1 * (d - surface.mu_d[:, 1]) - w0 * (d - surface.mu_d[:, 0])
            + surface.mu_d[:, 1] - surface.mu_d[:, 0])
    xi_g = (w1 * (data.y - surface.mu_y[:, 1]) - w0 * (data.y - surface.mu_y[:, 0])
            + surface.mu_y[:, 1] - surface.mu_y[:, 0])
    return xi_h, xi_g


def dr_late(data: ExperimentData, surface: AdjustmentSurface, pi=None) -> LateEstimate:
    """Doubly robust LATE point estimate (no variance; see dr_variance).

    ``pi`` optionally overrides the in-sample treated fractions with known
    assignment probabilities, for diagnostics only.
    """
    if not (np.all(np.isfinite(surface.mu_y)) and np.all(np.isfinite(surface.mu_d))):
        raise EstimationError("adjustment surface contains non-finite values")
    _, _, pi_i = _pi_per_unit(data, pi)
    xi_h, xi_g = _moment_terms(data, surface, pi_i)
    h_hat = float(xi_h.mean())
    if abs(h_hat) < DENOM_TOL:
        raise EstimationError("no identified compliance variation: the moment "
                              "denominator is numerically zero")
    tau = float(xi_g.mean()) / h_hat
    return LateEstimate(tau_hat=tau, sigma_hat=None, n=data.n,
                        method=surface.method, h_hat=h_hat)


def dr_variance(data: ExperimentData, surface: AdjustmentSurface, tau_hat: float,
                pi=None) -> float:
    """Consistent estimator of the asymptotic variance of the doubly robust
    estimator (the squared scale of sqrt(n) * (tau_hat - tau))."""
    idx, _, pi_i = _pi_per_unit(data, pi)
    y = data.y
    d = data.d.astype(float)
    muy1, muy0 = surface.mu_y[:, 1], surface.mu_y[:, 0]
    mud1, mud0 = surface.mu_d[:, 1], surface.mu_d[:, 0]
    tilde1 = ((1.0 - 1.0 / pi_i) * muy1 - muy0 + y / pi_i
              - tau_hat * ((1.0 - 1.0 / pi_i) * mud1 - mud0 + d / pi_i))
    tilde0 = ((1.0 / (1.0 - pi_i) - 1.0) * muy0 + muy1 - y / (1.0 - pi_i)
              - tau_hat * ((1.0 / (1.0 - pi_i) - 1.0) * mud0 + mud1 - d / (1.0 - pi_i)))
    resid = y - tau_hat * d
    total = 0.0
    for s in range(data.n_strata):
        i1, i0 = idx.i1_of[s], idx.i0_of[s]
        if i1.size == 0 or i0.size == 0:
            raise EstimationError(f"empty cell in stratum {data.s_labels[s]!r}")
        hat1 = tilde1[i1] - tilde1[i1].mean()
        hat0 = tilde0[i0] - tilde0[i0].mean()
        xi2 = resid[i1].mean() - resid[i0].mean()
        total += float(hat1 @ hat1) + float(hat0 @ hat0) + idx.n_of[s] * xi2 ** 2
    xi_h, _ = _moment_terms(data, surface, pi_i)
    h_hat = float(xi_h.mean())
    if abs(h_hat) < DENOM_TOL:
        raise EstimationError("no identified compliance variation")
    return total / data.n / h_hat ** 2


def _strata_dummies(data: ExperimentData) -> np.ndarray:
    dummies = np.zeros((data.n, data.n_strata))
    dummies[np.arange(data.n), data.s] = 1.0
    return dummies


def tsls(data: ExperimentData) -> TslsEstimate:
    """TSLS with assignment as instrument and strata dummies plus covariates
    as exogenous controls (full dummy set, no extra intercept), with the usual
    IV heteroskedasticity-robust standard error."""
    dummies = _strata_dummies(data)
    xbar = np.column_stack([data.d.astype(float), dummies, data.x])
    zbar = np.column_stack([data.a.astype(float), dummies, data.x])
    n = data.n
    first = ols(zbar, data.d.astype(float))
    if abs(first.coef[0]) < 1e-10:
        raise EstimationError("zero first stage: assignment does not move treatment")
    s_zz = zbar.T @ zbar / n
    s_zx = zbar.T @ xbar / n
    s_zy = zbar.T @ data.y / n
    try:
        zz_inv_zx = np.linalg.solve(s_zz, s_zx)
        zz_inv_zy = np.linalg.solve(s_zz, s_zy)
        bread = s_zx.T @ zz_inv_zx
        coef = np.linalg.solve(bread, s_zx.T @ zz_inv_zy)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(f"singular Gram in TSLS: {exc}") from exc
    resid = data.y - xbar @ coef
    meat_inner = zbar.T @ (zbar * resid[:, None] ** 2) / n
    bread_inv = np.linalg.inv(bread)
    middle = zz_inv_zx.T @ meat_inner @ zz_inv_zx
    sandwich = bread_inv @ middle @ bread_inv
    var = float(sandwich[0, 0])
    return TslsEstimate(tau_hat=float(coef[0]), sigma_naive_hat=float(np.sqrt(max(var, 0.0))),
                        n=n, coef=coef)


def s_estimator(data: ExperimentData) -> SEstimate:
    """Stratum-wise regression aggregation: per arm and stratum, outcome and
    treatment are regressed on an intercept plus covariates; the estimate is
    the ratio of aggregated fitted contrasts at the stratum covariate means.
    Numerically identical to the optimal linear adjustment with raw
    covariates."""
    idx = index_strata(data)
    k = data.k
    gamma = {}
    nu = {}
    for s in range(data.n_strata):
        for a, cell in ((1, idx.i1_of[s]), (0, idx.i0_of[s])):
            if cell.size == 0:
                raise EstimationError(f"empty cell: a={a} in stratum {data.s_labels[s]!r}")
            design = np.column_stack([np.ones(cell.size), data.x[cell]])
            fit_y = ols(design, data.y[cell])
            fit_d = ols(design, data.d[cell].astype(float))
            gamma[("Y", a, s)] = float(fit_y.coef[0])
            gamma[("D", a, s)] = float(fit_d.coef[0])
            nu[("Y", a, s)] = fit_y.coef[1:]
            nu[("D", a, s)] = fit_d.coef[1:]
    num = 0.0
    den = 0.0
    xbar_s = [data.x[data.s == s].mean(axis=0) if k else np.zeros(0)
              for s in range(data.n_strata)]
    for s in range(data.n_strata):
        p_s = idx.p_hat[s]
        num += p_s * (gamma[("Y", 1, s)] - gamma[("Y", 0, s)]
                      + (nu[("Y", 1, s)] - nu[("Y", 0, s)]) @ xbar_s[s])
        den += p_s * (gamma[("D", 1, s)] - gamma[("D", 0, s)]
                      + (nu[("D", 1, s)] - nu[("D", 0, s)]) @ xbar_s[s])
    if abs(den) < DENOM_TOL:
        raise EstimationError("degenerate denominator in stratum aggregation")
    tau = num / den

    # variance: within-arm dispersion of the per-unit contributions plus the
    # between-strata contrast of the adjusted outcome
    nu_yd = {(a, s): nu[("Y", a, s)] - tau * nu[("D", a, s)]
             for a in (0, 1) for s in range(data.n_strata)}
    pi_i = idx.pi_hat[data.s]
    adj = data.y - data.d * tau
    x_nu1 = np.array([data.x[i] @ nu_yd[(1, data.s[i])] for i in range(data.n)]) \
        if k else np.zeros(data.n)
    x_nu0 = np.array([data.x[i] @ nu_yd[(0, data.s[i])] for i in range(data.n)]) \
        if k else np.zeros(data.n)
    rho1 = (adj - x_nu1) / pi_i + (x_nu1 - x_nu0)
    rho0 = (adj - x_nu0) / (1.0 - pi_i) - (x_nu1 - x_nu0)
    s1 = s0 = s2 = 0.0
    for s in range(data.n_strata):
        i1, i0 = idx.i1_of[s], idx.i0_of[s]
        c1 = rho1[i1] - rho1[i1].mean()
        c0 = rho0[i0] - rho0[i0].mean()
        s1 += float(c1 @ c1)
        s0 += float(c0 @ c0)
        s2 += idx.n_of[s] * (adj[i1].mean() - adj[i0].mean()) ** 2
    sigma2 = (s1 + s0 + s2) / data.n / den ** 2
    return SEstimate(tau_hat=float(tau), sigma_hat=float(np.sqrt(sigma2)), n=data.n,
                     gamma=gamma, nu=nu, denominator=float(den))


@dataclass(frozen=True)
class WaldTest:
    statistic: float
    p_value: float
    ci_lo: float
    ci_hi: float
    reject: bool
    level: float
    tau0: float

    @property
    def ci_length(self) -> float:
        return self.ci_hi - self.ci_lo


def wald(estimate, tau0: float, level: float = 0.05) -> WaldTest:
    """Two-sided Wald test of tau = tau0 and the matching confidence
    interval; rejection uses a strict comparison at the critical value."""
    sigma = estimate.sigma_hat
    if sigma is None or not sigma > 0.0:
        raise EstimationError("zero or missing standard error")
    se = sigma / np.sqrt(estimate.n)
    stat = (estimate.tau_hat - tau0) / se
    z = normal_quantile(1.0 - level / 2.0)
    p = 2.0 * (1.0 - normal_cdf(abs(stat)))
    return WaldTest(statistic=float(stat), p_value=float(p),
                    ci_lo=float(estimate.tau_hat - z * se),
                    ci_hi=float(estimate.tau_hat + z * se),
                    reject=bool(abs(stat) > z), level=level, tau0=tau0)


ALL_METHODS = ("NA", "TSLS", "L", "S", "NL", "F", "NP", "R")


def estimate(data: ExperimentData, method: str, regressors: str = "raw",
             pi=None, **kwargs):
    """Compute point estimate and standard error for one method tag.

    Surface-based methods (NA, L, NL, F, NP, R) return a
    :class:`LateEstimate`; "tsls" and "s" return their own estimate types,
    all exposing tau_hat, sigma_hat, and n for downstream inference.
    """
    tag = method.upper()
    if tag == "TSLS":
        return tsls(data)
    if tag == "S":
        return s_estimator(data)
    if tag not in ALL_METHODS:
        raise EstimationError(f"unknown method '{method}'")
    surface = build_surface(data, tag, regressors=regressors, **kwargs)
    point = dr_late(data, surface, pi=pi)
    sigma2 = dr_variance(data, surface, point.tau_hat, pi=pi)
    return LateEstimate(tau_hat=point.tau_hat, sigma_hat=float(np.sqrt(sigma2)),
                        n=point.n, method=tag, h_hat=point.h_hat,
                        diagnostics={"surface": surface.fit_diagnostics})
