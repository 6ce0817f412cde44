import math
import warnings

import numpy as np
import pytest

from amerbsde.fdoracle import bs_european
from amerbsde.hedging import delta0, price0, stopping_times
from amerbsde.lsm import (LSMMemoryError, MonomialBasis, RankDeficientWarning, basis_eval, basis_size,
                          lsm_delta0, lsm_exercise_flags, lsm_fit, lsm_memory_floats, nn_memory_floats,
                          regress)
from amerbsde.market import MarketParams, PayoffSpec, payoff_grad
from amerbsde.simulate import PathCube, generate_paths

MAX = PayoffSpec("max_call", 100.0)
GEO = PayoffSpec("geometric_call", 100.0)


def test_basis_enumeration():
    b = MonomialBasis(2, 2)
    assert b.exponent_list == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    np.testing.assert_allclose(b.eval(np.array([2.0, 3.0])), [1, 2, 3, 4, 6, 9])
    assert len(MonomialBasis(7, 4)) == 330 == basis_size(7, 4)
    z = basis_eval(MonomialBasis(3, 3), np.zeros(3))
    assert z[0] == 1.0 and np.all(z[1:] == 0.0)


@pytest.mark.parametrize("d,chi", [(1, 5), (3, 2), (4, 4)])
def test_basis_count(d, chi):
    assert len(MonomialBasis(d, chi)) == math.comb(d + chi, d)


def test_basis_overflow():
    with pytest.raises(OverflowError):
        MonomialBasis(1, 4).eval(np.array([1e100]))


def test_regression_residual_orthogonal(rng):
    s = 100 + 10 * rng.standard_normal((5000, 2))
    B = basis_eval(MonomialBasis(2, 4), s, 100.0)
    y = np.maximum(s.max(axis=1) - 100, 0) + rng.standard_normal(5000)
    c = regress(B, y)
    assert np.linalg.norm(B.T @ (B @ c - y)) <= 1e-8 * np.linalg.norm(y)


def test_rank_deficiency_warns():
    B = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.warns(RankDeficientWarning):
        regress(B, np.arange(10.0))


def test_memory_accounting_and_guard():
    assert lsm_memory_floats(100, 720000, 100, 4) == 100 * 720000 * 100 + math.comb(104, 4) * 720000 + 720000
    assert lsm_memory_floats(100, 720000, 100, 4) == pytest.approx(3.3e12, rel=0.01)
    assert nn_memory_floats(100, 10, 3) == 100 * 10 * 3 + 2 * (10 + 30)
    # zero-stride stand-in: the guard fires before any path data is touched
    S = np.broadcast_to(np.float64(100.0), (101, 720000, 100))
    mp = MarketParams(d=100, r=0.0, delta=0.02, sigma=0.25, rho=0.75, T=2.0, K=100.0, s0=100.0)
    with pytest.raises(LSMMemoryError):
        lsm_fit(PathCube(S, S[1:], 0.02, 0), mp, GEO, 4)


def test_deterministic_paths_no_early_exercise():
    mp = MarketParams(d=1, r=0.0, delta=0.0, sigma=0.0, rho=1.0, T=1.0, K=100.0, s0=110.0)
    paths = generate_paths(mp, 10, 50, 0)
    res = lsm_fit(paths, mp, GEO, 2)
    assert res.price == pytest.approx(10.0)
    d, _ = lsm_delta0(paths, res, mp, GEO)
    np.testing.assert_allclose(d, [1.0])


def test_immediate_exercise_delta_is_payoff_gradient():
    mp = MarketParams(d=2, r=0.05, delta=0.1, sigma=0.0, rho=0.0, T=1.0, K=100.0, s0=[130.0, 120.0])
    paths = generate_paths(mp, 5, 20, 0)
    res = lsm_fit(paths, mp, MAX, 2)
    assert np.all(res.n_stop == 0)
    d, _ = lsm_delta0(paths, res, mp, MAX)
    np.testing.assert_allclose(d, payoff_grad(MAX, mp.s0))


def test_forced_european_delta_matches_black_scholes():
    mp = MarketParams(d=1, r=0.0, delta=0.0, sigma=0.2, rho=1.0, T=1.0, K=100.0, s0=100.0)
    paths = generate_paths(mp, 50, 200000, 4)
    d, se = delta0(paths, np.full(paths.M, 50), GEO, 0.0, mp.s0)
    _, bs = bs_european(0.2, 0.0, 0.0, 100.0, 1.0, 100.0)
    assert abs(d[0] - bs) < 3 * se[0] + 2e-3  # Euler bias O(dt)


def test_max_call_price_reasonable():
    mp = MarketParams(d=2, r=0.05, delta=0.1, sigma=0.2, rho=0.3, T=1.0, K=100.0, s0=100.0)
    paths = generate_paths(mp, 20, 20000, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RankDeficientWarning)
        res = lsm_fit(paths, mp, MAX, 3)
    assert 8.5 < res.price < 10.5
    assert res.exercised.shape == (21, 20000)


def test_out_of_sample_rule_reproduces_in_sample_decisions():
    mp = MarketParams(d=2, r=0.05, delta=0.1, sigma=0.2, rho=0.3, T=1.0, K=100.0, s0=100.0)
    paths = generate_paths(mp, 10, 5000, 2)
    res = lsm_fit(paths, mp, MAX, 2)
    ex = lsm_exercise_flags(res, paths, mp, MAX)
    _, n_stop = stopping_times(ex, paths.dt)
    np.testing.assert_array_equal(n_stop, res.n_stop)
    fresh = generate_paths(mp, 10, 5000, 3)
    _, n_new = stopping_times(lsm_exercise_flags(res, fresh, mp, MAX), fresh.dt)
    p, se = price0(fresh, n_new, MAX, mp.r)
    assert p < res.price + 4 * se + 4 * res.se
    with pytest.raises(ValueError):
        lsm_exercise_flags(res, generate_paths(mp, 5, 10, 0), mp, MAX)
