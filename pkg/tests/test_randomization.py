import math

import numpy as np
import pytest

from carlate.randomization import (ConfigError, assign, assign_bcd,
                                   assign_sbr, assign_srs, assign_wei,
                                   imbalance, make_scheme, wei_default_f)


def test_config_rejects_degenerate_probability():
    with pytest.raises(ConfigError, match="inside"):
        make_scheme("srs", pi=1.0)
    with pytest.raises(ConfigError, match="inside"):
        make_scheme("srs", pi=0.0)


def test_config_rejects_bad_lambda():
    with pytest.raises(ConfigError, match="1/2, 1"):
        make_scheme("bcd", pi=0.5, bcd_lambda=0.4)


def test_wei_and_bcd_require_half_probability():
    for scheme in ("wei", "bcd"):
        with pytest.raises(ConfigError, match="1/2"):
            make_scheme(scheme, pi=[0.2, 0.2, 0.2, 0.5])


def test_wei_rejects_asymmetric_allocation_function():
    with pytest.raises(ConfigError, match="f"):
        make_scheme("wei", pi=0.5, wei_f=lambda x: 0.4)


def test_srs_binomial_calibration():
    n = 100_000
    cfg = make_scheme("srs", pi=0.5, n_strata=1)
    draw = assign_srs(np.zeros(n, dtype=int), cfg, np.random.default_rng(1))
    # 0.01 tolerance is ~6 binomial standard deviations at this n
    assert abs(draw.a.mean() - 0.5) < 0.01


def test_srs_heterogeneous_targets():
    pi = np.array([0.2, 0.2, 0.2, 0.5])
    cfg = make_scheme("srs", pi=pi)
    rng = np.random.default_rng(2)
    s = rng.integers(0, 4, size=40_000)
    draw = assign_srs(s, cfg, rng)
    for st in range(4):
        frac = draw.a[s == st].mean()
        n_s = (s == st).sum()
        assert abs(frac - pi[st]) < 5 * math.sqrt(pi[st] * (1 - pi[st]) / n_s)


def test_wei_first_visit_uses_f_zero():
    assert wei_default_f(0.0) == 0.5
    # over many fresh single-unit draws, the first unit of a stratum is
    # treated about half the time
    cfg = make_scheme("wei", pi=0.5, n_strata=1)
    hits = sum(int(assign_wei(np.zeros(1, dtype=int), cfg,
                              np.random.default_rng(seed)).a[0])
               for seed in range(2000))
    assert abs(hits / 2000 - 0.5) < 0.04


def test_wei_argument_sequence_matches_hand_computation():
    """The allocation function must see 2*B/m computed from the realized path."""
    seen = []

    def recording_f(u):
        seen.append(u)
        return (1.0 - u) / 2.0

    cfg = make_scheme("wei", pi=0.5, n_strata=1, wei_f=recording_f)
    seen.clear()      # drop the config-validation spot checks
    s = np.zeros(12, dtype=int)
    draw = assign_wei(s, cfg, np.random.default_rng(3))
    expected = []
    b = 0.0
    for k in range(12):
        expected.append(0.0 if k == 0 else 2.0 * b / k)
        b += draw.a[k] - 0.5
    assert np.allclose(seen, expected)


def test_wei_saturated_history_forces_opposite_arm():
    """A fully one-sided history drives the argument to +-1, where the
    default allocation (1 - x)/2 is deterministic: f(1) = 0, f(-1) = 1.
    After a single unit the imbalance ratio is already +-1, so the second
    unit always lands in the opposite arm."""
    assert wei_default_f(1.0) == 0.0
    assert wei_default_f(-1.0) == 1.0
    cfg = make_scheme("wei", pi=0.5, n_strata=1)
    for seed in range(25):
        draw = assign_wei(np.zeros(2, dtype=int), cfg, np.random.default_rng(seed))
        assert draw.a[1] == 1 - draw.a[0]


def test_wei_imbalance_vanishes():
    cfg = make_scheme("wei", pi=0.5, n_strata=2)
    rng = np.random.default_rng(4)
    s = rng.integers(0, 2, size=10_000)
    draw = assign_wei(s, cfg, rng)
    counts = np.bincount(s)
    assert np.all(np.abs(draw.b_of) / counts < 0.05)


def test_bcd_lambda_one_alternates():
    cfg = make_scheme("bcd", pi=0.5, n_strata=1, bcd_lambda=1.0)
    draw = assign_bcd(np.zeros(50, dtype=int), cfg, np.random.default_rng(5))
    # after any first draw the coin is deterministic, so pairs alternate
    for k in range(0, 50, 2):
        assert draw.a[k + 1] == 1 - draw.a[k]


def test_bcd_replay_oracle():
    """Exact sequence match against a hand simulation consuming the same
    per-stratum child stream."""
    cfg = make_scheme("bcd", pi=0.5, n_strata=1, bcd_lambda=0.75)
    n = 200
    draw = assign_bcd(np.zeros(n, dtype=int), cfg, np.random.default_rng(6))
    child = np.random.default_rng(6).spawn(1)[0]
    b = 0.0
    expected = np.zeros(n, dtype=int)
    for k in range(n):
        p = 0.5 if b == 0 else (0.75 if b < 0 else 0.25)
        expected[k] = 1 if child.random() < p else 0
        b += expected[k] - 0.5
    assert np.array_equal(draw.a, expected)


def test_bcd_imbalance_bounded():
    cfg = make_scheme("bcd", pi=0.5, n_strata=2, bcd_lambda=0.75)
    rng = np.random.default_rng(7)
    s = rng.integers(0, 2, size=10_000)
    draw = assign_bcd(s, cfg, rng)
    counts = np.bincount(s)
    assert np.all(np.abs(draw.b_of) / counts < 0.05)
    # mean-reverting walk stays tiny compared with the sqrt(n) scale of
    # independent coin flips
    assert np.max(np.abs(draw.b_of)) < 20


def test_sbr_exact_counts():
    cfg = make_scheme("sbr", pi=0.5, n_strata=1)
    rng = np.random.default_rng(8)
    assert assign_sbr(np.zeros(10, dtype=int), cfg, rng).a.sum() == 5
    assert assign_sbr(np.zeros(7, dtype=int), cfg, rng).a.sum() == 3


def test_sbr_imbalance_below_one():
    rng = np.random.default_rng(9)
    for pi in (0.2, 0.5, 0.63):
        cfg = make_scheme("sbr", pi=pi, n_strata=3)
        for _ in range(20):
            s = rng.integers(0, 3, size=101)
            draw = assign_sbr(s, cfg, rng)
            assert np.all(np.abs(draw.b_of) < 1.0)


def test_sbr_uniform_over_treated_sets():
    """With n(s)=4 and pi=1/2 each of the C(4,2)=6 treated pairs is equally
    likely."""
    cfg = make_scheme("sbr", pi=0.5, n_strata=1)
    rng = np.random.default_rng(10)
    counts = {}
    reps = 10_000
    for _ in range(reps):
        draw = assign_sbr(np.zeros(4, dtype=int), cfg, rng)
        key = tuple(np.flatnonzero(draw.a).tolist())
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    for key, c in counts.items():
        assert abs(c / reps - 1 / 6) < 0.02, (key, c)


def test_imbalance_definition():
    assert imbalance([1, 1, 0, 0], [0, 0, 0, 0], [0.5])[0] == 0.0
    assert imbalance([1, 1, 1, 0], [0, 0, 0, 0], [0.5])[0] == 1.0
    b = imbalance([1, 0, 1], [0, 1, 1], [0.25, 0.5])
    assert np.allclose(b, [1 - 0.25, 1 - 2 * 0.5])


@pytest.mark.parametrize("scheme", ["srs", "wei", "bcd", "sbr"])
def test_within_stratum_draws_ignore_other_strata(scheme):
    """Permuting other strata's units must not change this stratum's
    assignments (each stratum owns an independent child stream)."""
    cfg = make_scheme(scheme, pi=0.5, n_strata=2)
    s_a = np.array([0, 1, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0])
    s_b = np.array([0, 1, 1, 0, 1, 1, 0, 0, 1, 0, 1, 0])  # same multiset
    a1 = assign(s_a, cfg, np.random.default_rng(11)).a
    a2 = assign(s_b, cfg, np.random.default_rng(11)).a
    assert np.array_equal(a1[s_a == 0], a2[s_b == 0])
    assert np.array_equal(a1[s_a == 1], a2[s_b == 1])


@pytest.mark.parametrize("scheme", ["srs", "wei", "bcd", "sbr"])
def test_determinism(scheme):
    cfg = make_scheme(scheme, pi=0.5, n_strata=3)
    rng = np.random.default_rng(12)
    s = rng.integers(0, 3, size=300)
    a1 = assign(s, cfg, np.random.default_rng(13)).a
    a2 = assign(s, cfg, np.random.default_rng(13)).a
    assert np.array_equal(a1, a2)


def test_realized_imbalance_matches_definition():
    cfg = make_scheme("srs", pi=0.3, n_strata=2)
    rng = np.random.default_rng(14)
    s = rng.integers(0, 2, size=500)
    draw = assign_srs(s, cfg, rng)
    manual = [np.sum((draw.a - 0.3)[s == st]) for st in range(2)]
    assert np.allclose(draw.b_of, manual)
