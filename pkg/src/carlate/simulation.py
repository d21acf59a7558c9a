"""Benchmark data-generating processes and the Monte Carlo study harness.

Four built-in DGPs produce potential outcomes and treatments with imperfect
compliance over four strata cut from a running variable: (1) a smooth
outcome model with Beta-distributed running variable, (2) an interaction
model with uniform running variable, (3) a high-dimensional linear model
with 20 correlated covariates, and (4) a variant of (1) whose treatment
effect varies across strata, paired with heterogeneous assignment
probabilities to expose the TSLS inconsistency.

The harness draws a fresh sample per replication, assigns treatment with a
chosen scheme, runs every requested estimator on the same realized data, and
aggregates rejection rates and confidence-interval lengths.  Replications
are seeded from a spawning sequence, so reports are reproducible and
independent of scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import ExperimentData, build_dataset
from .estimators import EstimationError, estimate, wald
from .adjustments import AdjustmentError
from .randomization import SchemeConfig, assign, make_scheme

DGP_IDS = (1, 2, 3, 4)

# error covariance shared by all DGPs: corr 0.5^|j-k| among the four shocks
_SIGMA_EPS = 0.5 ** np.abs(np.subtract.outer(np.arange(4), np.arange(4)))
_CHOL_EPS = np.linalg.cholesky(_SIGMA_EPS)

_OMEGA20 = 0.5 ** np.abs(np.subtract.outer(np.arange(20), np.arange(20)))
_CHOL_OMEGA20 = np.linalg.cholesky(_OMEGA20)

_SQRT20 = math.sqrt(20.0)

DGP_PARAMS = {
    1: {"a1": 2.0, "a0": 1.0, "b1": 1.3, "b0": -1.0, "c1": 3.0, "c0": 3.0},
    2: {"a1": 2.0, "a0": 1.0, "b1": 1.0, "b0": -1.0, "c1": 3.0, "c0": 3.0},
    3: {"a1": 2.0, "a0": 1.0, "b1": 2.0, "b0": -1.0,
        "c1": math.sqrt(7.0), "c0": math.sqrt(7.0)},
    4: {"a1": 2.0, "a0": 1.0, "b1": 1.3, "b0": -1.0, "c1": 3.0, "c0": 3.0},
}


class SimulationError(RuntimeError):
    """Raised when a study cannot run or too many replications fail."""


def default_pi(dgp: int) -> np.ndarray:
    if dgp == 4:
        return np.array([0.2, 0.2, 0.2, 0.5])
    return np.full(4, 0.5)


@dataclass(frozen=True)
class DgpSpec:
    """Identifies one benchmark process at one sample size."""

    dgp: int
    n: int
    pi: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.dgp not in DGP_IDS:
            raise SimulationError(f"unknown dgp {self.dgp}; choose one of {DGP_IDS}")
        if self.n < 1:
            raise SimulationError("sample size must be positive")
        pi = default_pi(self.dgp) if self.pi is None else np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "pi", pi)


@dataclass(frozen=True)
class PotentialData:
    """Latent simulation-side arrays; strata labels are 1..4."""

    y1: np.ndarray
    y0: np.ndarray
    d1: np.ndarray
    d0: np.ndarray
    s: np.ndarray
    x: np.ndarray
    z: np.ndarray


def _strata_from(z: np.ndarray, cuts) -> np.ndarray:
    s = np.zeros(z.shape[0], dtype=np.intp)
    for g in cuts:
        s += z <= g
    return s


def gen_potential(spec: DgpSpec, rng: np.random.Generator, params=None) -> PotentialData:
    """Draw latent potential outcomes and treatments for one replication."""
    p = dict(DGP_PARAMS[spec.dgp])
    if params:
        p.update(params)
    n = spec.n
    if spec.dgp in (1, 3, 4):
        z = (rng.beta(2.0, 2.0, size=n) - 0.5) * _SQRT20
        cuts = (-0.25 * _SQRT20, 0.0, 0.25 * _SQRT20, 0.5 * _SQRT20)
    else:
        z = rng.uniform(-2.0, 2.0, size=n)
        cuts = (-1.0, 0.0, 1.0, 2.0)
    s = _strata_from(z, cuts)

    if spec.dgp == 3:
        x = rng.standard_normal((n, 20)) @ _CHOL_OMEGA20.T
        beta = np.sqrt(6.0) / np.arange(1, 21) ** 2
        gamma_k = -2.0 / np.arange(1, 21) ** 2
        alpha = x @ beta + z
        gamma = x @ gamma_k - z
    elif spec.dgp == 2:
        x1 = rng.uniform(-2.0, 2.0, size=n)
        x2 = rng.standard_normal(n)
        x = np.column_stack([x1, x2])
        alpha = -0.8 * x1 * x2 + z ** 2 + z * x1
        gamma = 0.5 * x1 ** 2 - 0.5 * x2 ** 2 - 0.5 * z ** 2
    else:
        x1 = rng.uniform(-2.0, 2.0, size=n)
        x2 = z + rng.standard_normal(n)
        x = np.column_stack([x1, x2])
        alpha = 0.7 * x1 ** 2 + x2 + 4.0 * z
        gamma = 0.5 * x1 ** 2 - 0.5 * x2 ** 2 - 0.5 * z ** 2

    eps = rng.standard_normal((n, 4)) @ _CHOL_EPS.T
    d0 = (p["b0"] + gamma > p["c0"] * eps[:, 2]).astype(np.int8)
    d1_new = (p["b1"] + gamma > p["c1"] * eps[:, 3]).astype(np.int8)
    d1 = np.where(d0 == 1, 1, d1_new).astype(np.int8)

    if spec.dgp == 4:
        base = 0.7 * x[:, 0] ** 2 + x[:, 1] + 4.0 * z
        y1 = 2.0 + s.astype(float) ** 2 + base + eps[:, 0]
        y0 = 1.0 + base + eps[:, 1]
    else:
        y0 = p["a0"] + alpha + eps[:, 0]
        y1 = p["a1"] + alpha + eps[:, 1]
    return PotentialData(y1=y1, y0=y0, d1=d1, d0=d0, s=s, x=x, z=z)


def realize(potential: PotentialData, a) -> ExperimentData:
    """Compose observed treatment and outcome from a realized assignment."""
    a = np.asarray(a)
    d = potential.d1 * a + potential.d0 * (1 - a)
    y = potential.y1 * d + potential.y0 * (1 - d)
    return build_dataset(y, d, a, potential.s, potential.x)


@dataclass(frozen=True)
class TrueTau:
    value: float
    mc_se: float
    oracle_n: int
    oracle_reps: int
    seed: int
    dgp: int


_TAU_CACHE: dict = {}


def true_tau(spec: DgpSpec, oracle_n: int = 10_000, oracle_reps: int = 1_000,
             seed: int | None = None, params=None) -> TrueTau:
    """Monte Carlo oracle for the true complier average effect.

    Per draw of ``oracle_n`` latent units, the mean of y1 - y0 over
    compliers is recorded; the oracle value averages those over
    ``oracle_reps`` draws.  Results are cached per (dgp, scale, seed).
    """
    if seed is None:
        seed = 1000 + spec.dgp
    key = (spec.dgp, oracle_n, oracle_reps, seed, bool(params))
    if not params and key in _TAU_CACHE:
        return _TAU_CACHE[key]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    big = DgpSpec(dgp=spec.dgp, n=oracle_n, pi=spec.pi, seed=seed)
    vals = np.empty(oracle_reps)
    for r in range(oracle_reps):
        pot = gen_potential(big, rng, params=params)
        compliers = pot.d1 > pot.d0
        m = int(compliers.sum())
        if m == 0:
            raise SimulationError("no compliers: the complier average effect "
                                  "is not identified for these parameters")
        vals[r] = float((pot.y1[compliers] - pot.y0[compliers]).mean())
    out = TrueTau(value=float(vals.mean()),
                  mc_se=float(vals.std(ddof=1) / math.sqrt(oracle_reps)),
                  oracle_n=oracle_n, oracle_reps=oracle_reps, seed=seed, dgp=spec.dgp)
    if not params:
        _TAU_CACHE[key] = out
    return out


@dataclass(frozen=True)
class MethodSummary:
    method: str
    size: float
    power: float
    ci_ratio: float        # percent of the no-adjustment median CI length
    reps: int
    failures: int


@dataclass(frozen=True)
class SimulationReport:
    dgp: int
    scheme: str
    n: int
    reps: int
    seed: int
    tau0: float
    level: float
    rows: list
    draws: dict = field(default_factory=dict, repr=False)

    def row_for(self, method: str) -> MethodSummary:
        tag = method.upper()
        for row in self.rows:
            if row.method == tag:
                return row
        raise KeyError(method)


def default_regressors(dgp: int, method: str) -> str:
    tag = method.upper()
    if tag in ("NP", "R"):
        return "raw" if dgp == 3 else "sieve"
    return "raw"


def _validate_methods(dgp: int, methods) -> list:
    tags = [m.upper() for m in methods]
    for tag in tags:
        if tag not in ("NA", "TSLS", "L", "S", "NL", "F", "NP", "R"):
            raise SimulationError(f"unknown method '{tag}'")
    if dgp == 3:
        bad = [t for t in tags if t not in ("NA", "R")]
        if bad:
            raise SimulationError(f"dgp 3 supports only NA and R; got {bad}")
    return tags


def _one_rep(task):
    """Run a single replication; returns per-method result tuples."""
    (dgp, n, pi, cfg, methods, regressors, tau0, level, seed_seq) = task
    rng = np.random.default_rng(seed_seq)
    spec = DgpSpec(dgp=dgp, n=n, pi=pi)
    pot = gen_potential(spec, rng)
    draw = assign(pot.s - 1, cfg, rng)   # labels 1..4 -> target-probability index
    data = realize(pot, draw.a)
    out = {}
    for tag, reg in zip(methods, regressors):
        try:
            est = estimate(data, tag, regressors=reg)
            w0 = wald(est, tau0, level)
            w1 = wald(est, tau0 + 1.0, level)
            out[tag] = (est.tau_hat, est.sigma_hat, w0.reject, w1.reject,
                        w0.ci_length, None)
        except (EstimationError, AdjustmentError, ValueError) as exc:
            out[tag] = (np.nan, np.nan, False, False, np.nan, str(exc))
    return out


def run_mc(spec: DgpSpec, scheme, methods, reps: int, tau0: float | None = None,
           level: float = 0.05, threads: int = 1, oracle_n: int = 10_000,
           oracle_reps: int = 1_000, max_failure_rate: float = 0.01) -> SimulationReport:
    """Size/power/CI-length study over ``reps`` replications.

    ``scheme`` is a scheme name or a prebuilt :class:`SchemeConfig`; the
    targeted probabilities default to the spec's.  When ``tau0`` is omitted
    the oracle value is computed (and cached) first.  Per-method failures
    are excluded from the rates but must stay below ``max_failure_rate``.
    """
    if reps < 1:
        raise SimulationError("need at least one replication")
    tags = _validate_methods(spec.dgp, methods)
    if isinstance(scheme, SchemeConfig):
        cfg = scheme
    else:
        cfg = make_scheme(scheme, pi=spec.pi, n_strata=4)   # raises ConfigError early
    regs = [default_regressors(spec.dgp, t) for t in tags]
    if tau0 is None:
        tau0 = true_tau(spec, oracle_n=oracle_n, oracle_reps=oracle_reps).value

    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(reps)
    tasks = [(spec.dgp, spec.n, spec.pi, cfg, tags, regs, tau0, level, c)
             for c in children]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_one_rep, tasks, chunksize=max(1, reps // (8 * threads))))
    else:
        results = [_one_rep(t) for t in tasks]

    draws = {tag: {"tau": np.empty(reps), "sigma": np.empty(reps),
                   "reject0": np.zeros(reps, dtype=bool),
                   "reject1": np.zeros(reps, dtype=bool),
                   "ci_length": np.empty(reps),
                   "ok": np.zeros(reps, dtype=bool),
                   "errors": []}
             for tag in tags}
    for r, res in enumerate(results):
        for tag in tags:
            tau, sigma, rej0, rej1, ci_len, err = res[tag]
            rec = draws[tag]
            rec["tau"][r] = tau
            rec["sigma"][r] = sigma
            rec["reject0"][r] = rej0
            rec["reject1"][r] = rej1
            rec["ci_length"][r] = ci_len
            rec["ok"][r] = err is None
            if err is not None:
                rec["errors"].append((r, err))

    na_median = None
    if "NA" in draws:
        ok = draws["NA"]["ok"]
        if ok.any():
            na_median = float(np.median(draws["NA"]["ci_length"][ok]))
    rows = []
    for tag in tags:
        rec = draws[tag]
        ok = rec["ok"]
        failures = int((~ok).sum())
        if failures > max_failure_rate * reps:
            examples = "; ".join(msg for _, msg in rec["errors"][:3])
            raise SimulationError(f"method {tag} failed in {failures}/{reps} "
                                  f"replications (limit {max_failure_rate:.0%}): {examples}")
        n_ok = int(ok.sum())
        size = float(rec["reject0"][ok].mean()) if n_ok else float("nan")
        power = float(rec["reject1"][ok].mean()) if n_ok else float("nan")
        med = float(np.median(rec["ci_length"][ok])) if n_ok else float("nan")
        ratio = 100.0 * med / na_median if na_median else float("nan")
        rows.append(MethodSummary(method=tag, size=size, power=power,
                                  ci_ratio=ratio, reps=n_ok, failures=failures))
    return SimulationReport(dgp=spec.dgp, scheme=cfg.scheme, n=spec.n, reps=reps,
                            seed=spec.seed, tau0=tau0, level=level,
                            rows=rows, draws=draws)
