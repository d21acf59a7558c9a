"""Covariate-adaptive treatment assignment schemes and stratum imbalance.

Four schemes are provided: independent Bernoulli draws (srs), Wei's
adaptive biased coin (wei), Efron's biased-coin design (bcd), and
stratified block randomization (sbr).  The sequential schemes (wei, bcd)
target an assignment probability of one half per stratum and reject any
other target.

Each stratum consumes an independent child stream spawned from the caller's
generator, so assignments within a stratum depend only on that stratum's
own history; reordering or editing other strata leaves them untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SCHEMES = ("srs", "wei", "bcd", "sbr")


class ConfigError(ValueError):
    """Raised for invalid scheme configuration."""


def wei_default_f(x: float) -> float:
    """Default allocation function (1 - x) / 2 on [-1, 1]."""
    return (1.0 - x) / 2.0


@dataclass(frozen=True)
class SchemeConfig:
    """Assignment-scheme configuration.

    ``pi`` holds the target treated probability per dense stratum index.
    ``bcd_lambda`` is the biased-coin bias in (1/2, 1]; ``wei_f`` the
    allocation function for the adaptive coin, non-increasing with
    f(-x) = 1 - f(x).
    """

    scheme: str
    pi: np.ndarray
    bcd_lambda: float = 0.75
    wei_f: Callable[[float], float] = field(default=wei_default_f)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{self.scheme}'; choose one of {SCHEMES}")
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if np.any(pi <= 0.0) or np.any(pi >= 1.0):
            raise ConfigError("target probabilities must lie strictly inside (0, 1)")
        object.__setattr__(self, "pi", pi)
        if self.scheme in ("wei", "bcd") and np.any(pi != 0.5):
            raise ConfigError(f"scheme '{self.scheme}' is defined only for "
                              "a target probability of 1/2 in every stratum")
        if self.scheme == "bcd" and not (0.5 < self.bcd_lambda <= 1.0):
            raise ConfigError("bcd bias parameter must lie in (1/2, 1]")
        if self.scheme == "wei":
            for u in (0.0, 0.5, 1.0):
                lo, hi = self.wei_f(u), self.wei_f(-u)
                if abs((1.0 - lo) - hi) > 1e-12:
                    raise ConfigError("allocation function must satisfy f(-x) = 1 - f(x)")
                if not (0.0 - 1e-12 <= lo <= 1.0 + 1e-12):
                    raise ConfigError("allocation function must map into [0, 1]")
            if not (self.wei_f(-1.0) >= self.wei_f(-0.5) >= self.wei_f(0.0)
                    >= self.wei_f(0.5) >= self.wei_f(1.0)):
                raise ConfigError("allocation function must be non-increasing")


def make_scheme(scheme: str, pi=0.5, n_strata: int | None = None,
                bcd_lambda: float = 0.75, wei_f=None) -> SchemeConfig:
    """Build a SchemeConfig, broadcasting a scalar pi over n_strata."""
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    if n_strata is not None and pi.size == 1:
        pi = np.full(n_strata, pi[0])
    kwargs = {} if wei_f is None else {"wei_f": wei_f}
    return SchemeConfig(scheme=scheme, pi=pi, bcd_lambda=bcd_lambda, **kwargs)


@dataclass(frozen=True)
class AssignmentDraw:
    """A realized assignment vector plus its per-stratum imbalance."""

    a: np.ndarray
    b_of: np.ndarray


def imbalance(a, s, pi) -> np.ndarray:
    """Per-stratum imbalance: sum over units of (A_i - pi(s)) within stratum s."""
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=np.intp)
    if a.shape != s.shape:
        raise ValueError("assignment and stratum arrays must have equal length")
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    n_strata = max(int(s.max()) + 1 if s.size else 0, pi.size)
    if pi.size == 1:
        pi = np.full(n_strata, pi[0])
    treated = np.bincount(s, weights=a, minlength=n_strata)
    counts = np.bincount(s, minlength=n_strata)
    return treated - pi[:n_strata] * counts


def _check_pi_covers(cfg: SchemeConfig, s: np.ndarray) -> np.ndarray:
    n_strata = int(s.max()) + 1 if s.size else 0
    pi = cfg.pi
    if pi.size == 1:
        pi = np.full(n_strata, pi[0])
    if pi.size < n_strata:
        raise ConfigError(f"configuration covers {pi.size} strata but data has {n_strata}")
    return pi


def _spawn_per_stratum(rng: np.random.Generator, n_strata: int):
    return rng.spawn(n_strata) if n_strata else []


def assign_srs(s, cfg: SchemeConfig, rng: np.random.Generator) -> AssignmentDraw:
    """Independent Bernoulli(pi(s)) assignment per unit."""
    s = np.asarray(s, dtype=np.intp)
    pi = _check_pi_covers(cfg, s)
    children = _spawn_per_stratum(rng, pi.size)
    a = np.zeros(s.shape[0], dtype=np.int8)
    for st in range(pi.size):
        in_s = np.flatnonzero(s == st)
        if in_s.size:
            a[in_s] = children[st].random(in_s.size) < pi[st]
    return AssignmentDraw(a=a, b_of=imbalance(a, s, pi))


def assign_wei(s, cfg: SchemeConfig, rng: np.random.Generator) -> AssignmentDraw:
    """Wei's adaptive biased coin: the treated probability for the k-th unit
    of a stratum is f(2 * B / m), with B the running imbalance and m the
    number of earlier units in that stratum (first visit uses f(0))."""
    if cfg.scheme != "wei" and np.any(cfg.pi != 0.5):
        raise ConfigError("adaptive biased coin requires a target probability of 1/2")
    s = np.asarray(s, dtype=np.intp)
    pi = _check_pi_covers(cfg, s)
    children = _spawn_per_stratum(rng, pi.size)
    a = np.zeros(s.shape[0], dtype=np.int8)
    running_b = np.zeros(pi.size)
    seen = np.zeros(pi.size, dtype=np.intp)
    for i, st in enumerate(s):
        u = 0.0 if seen[st] == 0 else 2.0 * running_b[st] / seen[st]
        p = float(cfg.wei_f(u))
        a_i = 1 if children[st].random() < p else 0
        a[i] = a_i
        running_b[st] += a_i - 0.5
        seen[st] += 1
    return AssignmentDraw(a=a, b_of=imbalance(a, s, pi))


def assign_bcd(s, cfg: SchemeConfig, rng: np.random.Generator) -> AssignmentDraw:
    """Efron's biased coin: probability 1/2 at zero imbalance, lambda when the
    stratum is under-treated, 1 - lambda when over-treated."""
    if np.any(cfg.pi != 0.5):
        raise ConfigError("biased-coin design requires a target probability of 1/2")
    s = np.asarray(s, dtype=np.intp)
    pi = _check_pi_covers(cfg, s)
    lam = cfg.bcd_lambda
    children = _spawn_per_stratum(rng, pi.size)
    a = np.zeros(s.shape[0], dtype=np.int8)
    running_b = np.zeros(pi.size)
    for i, st in enumerate(s):
        b = running_b[st]
        p = 0.5 if b == 0 else (lam if b < 0 else 1.0 - lam)
        a_i = 1 if children[st].random() < p else 0
        a[i] = a_i
        running_b[st] += a_i - 0.5
    return AssignmentDraw(a=a, b_of=imbalance(a, s, pi))


def assign_sbr(s, cfg: SchemeConfig, rng: np.random.Generator) -> AssignmentDraw:
    """Stratified block randomization: exactly floor(pi(s) * n(s)) treated
    units per stratum, selected by uniform random permutation."""
    s = np.asarray(s, dtype=np.intp)
    pi = _check_pi_covers(cfg, s)
    children = _spawn_per_stratum(rng, pi.size)
    a = np.zeros(s.shape[0], dtype=np.int8)
    for st in range(pi.size):
        in_s = np.flatnonzero(s == st)
        if not in_s.size:
            continue
        m = int(np.floor(pi[st] * in_s.size))
        perm = children[st].permutation(in_s.size)
        a[in_s[perm[:m]]] = 1
    return AssignmentDraw(a=a, b_of=imbalance(a, s, pi))


_ASSIGNERS = {"srs": assign_srs, "wei": assign_wei, "bcd": assign_bcd, "sbr": assign_sbr}


def assign(s, cfg: SchemeConfig, rng: np.random.Generator) -> AssignmentDraw:
    """Dispatch to the scheme named in the configuration."""
    return _ASSIGNERS[cfg.scheme](s, cfg, rng)
