import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amerbsde.market import (LN2, MarketParams, PayoffSpec, default_kappa, equicorrelation, grad_g,
                             payoff, payoff_g, payoff_grad, smoothed_payoff, softplus_gap)

GEO = PayoffSpec("geometric_call", 100.0)
MAX = PayoffSpec("max_call", 100.0)


def test_scalars_broadcast_and_equicorrelation():
    mp = MarketParams(d=3, r=0.05, delta=0.1, sigma=0.2, rho=0.3, T=1.0, K=100.0, s0=90.0)
    assert mp.sigma.shape == (3,) and np.all(mp.s0 == 90.0)
    np.testing.assert_allclose(mp.rho, equicorrelation(3, 0.3))
    np.testing.assert_allclose(mp.chol @ mp.chol.T, mp.rho, atol=1e-14)


@pytest.mark.parametrize("bad", [dict(T=0.0), dict(K=-1.0), dict(s0=0.0), dict(sigma=-0.1),
                                 dict(rho=np.array([[1.0, 0.2], [0.3, 1.0]])),
                                 dict(rho=np.array([[2.0, 0.0], [0.0, 1.0]]))])
def test_invalid_params_rejected(bad):
    kw = dict(d=2, r=0.0, delta=0.0, sigma=0.2, rho=0.0, T=1.0, K=100.0, s0=100.0)
    kw.update(bad)
    with pytest.raises(ValueError):
        MarketParams(**kw)


def test_payoff_values():
    s = np.array([[121.0, 100.0 * 100.0 / 121.0 * 100 / 100]])
    assert payoff_g(GEO, np.array([100.0, 100.0])) == pytest.approx(0.0, abs=1e-12)
    assert payoff(GEO, np.array([110.0, 110.0])) == pytest.approx(10.0)
    assert payoff(MAX, np.array([90.0, 120.0])) == pytest.approx(20.0)
    assert payoff(MAX, np.array([90.0, 95.0])) == 0.0
    assert payoff(GEO, s).shape == (1,)


def test_max_gradient_ties_pick_lowest_index():
    np.testing.assert_array_equal(grad_g(MAX, np.array([5.0, 5.0, 1.0])), [1.0, 0.0, 0.0])


def test_payoff_grad_zero_out_of_money():
    np.testing.assert_array_equal(payoff_grad(GEO, np.array([50.0, 60.0])), [0.0, 0.0])


@given(st.lists(st.floats(50.0, 150.0), min_size=1, max_size=6))
def test_geometric_gradient_matches_finite_differences(xs):
    s = np.array(xs)
    g = grad_g(GEO, s)
    h = 1e-6 * s
    for i in range(len(s)):
        e = np.zeros_like(s)
        e[i] = h[i]
        fd = (payoff_g(GEO, s + e) - payoff_g(GEO, s - e)) / (2 * h[i])
        assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_smoothing_examples():
    kappa = default_kappa(2.0, 100)
    v, grad = smoothed_payoff(GEO, np.array([100.0, 100.0]), kappa)
    assert v == pytest.approx(LN2 / kappa, rel=1e-12)
    np.testing.assert_allclose(grad, 0.5 * grad_g(GEO, np.array([100.0, 100.0])))


@given(st.floats(-50.0, 50.0), st.floats(0.1, 1000.0))
def test_smoothing_bound(g, kappa):
    gap = softplus_gap(kappa, g)
    assert gap <= LN2 / kappa
    # strictness holds whenever exp(-kappa |g|) is representable
    if kappa * abs(g) < 700:
        assert gap > 0


def test_smoothed_gradient_matches_finite_differences():
    kappa = 3.0
    s = np.array([101.0, 99.5, 100.2])
    _, grad = smoothed_payoff(GEO, s, kappa)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-5
        fd = (smoothed_payoff(GEO, s + e, kappa)[0] - smoothed_payoff(GEO, s - e, kappa)[0]) / 2e-5
        assert grad[i] == pytest.approx(fd, rel=1e-6)


def test_nonfinite_state_rejected():
    with pytest.raises(ValueError):
        payoff(GEO, np.array([np.nan, 1.0]))


def test_softplus_extremes_do_not_overflow():
    v, grad = smoothed_payoff(GEO, np.array([[1e4, 1e4], [1.0, 1.0]]), 1e3)
    assert np.all(np.isfinite(v)) and np.all(np.isfinite(grad))
    assert v[0] == pytest.approx(1e4 - 100.0) and v[1] == 0.0
    assert math.isfinite(float(softplus_gap(1e3, -1e6)))
