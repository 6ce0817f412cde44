import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import special_ortho_group

from amerbsde.fdoracle import solve_geometric
from amerbsde.market import MarketParams
from amerbsde.metrics import (MetricError, bias_anchors, bias_diagnostic, boundary_f1, exact_exercise_flags,
                              fd_continuation, oracle_on_paths, percent_error_delta, percent_error_point,
                              spacetime_errors, surface_f1)
from amerbsde.simulate import generate_paths
from amerbsde.training import ValueSurface

MP3 = MarketParams(d=3, r=0.0, delta=0.02, sigma=0.25, rho=0.75, T=1.0, K=100.0, s0=100.0)
MP1 = MarketParams(d=1, r=0.05, delta=0.1, sigma=0.2, rho=1.0, T=0.5, K=100.0, s0=100.0)


@pytest.fixture(scope="module")
def setup3():
    grid = solve_geometric(MP3, nodes=1025, steps=200)
    paths = generate_paths(MP3, 10, 400, 3)
    return grid, paths


def _oracle_surface(grid, paths, shift=0.0):
    sp, u, du = oracle_on_paths(grid, paths)
    N, M, d = paths.N, paths.M, paths.d
    Y = np.vstack([u + shift, np.zeros((1, M))])
    Z = np.zeros((N + 1, M, d))
    Z[:N] = (du * sp)[..., None] / (d * paths.S[:N])
    ex = np.zeros((N + 1, M), dtype=bool)
    ex[:N] = exact_exercise_flags(grid, paths)
    return ValueSurface(Y, Z, ex, Y)


def test_point_errors():
    assert percent_error_point(10.29, 10.2591) == pytest.approx(0.30119, abs=1e-4)
    assert percent_error_delta([3.0, 4.0], [3.0, 0.0]) == pytest.approx(400.0 / 3.0)
    with pytest.raises(MetricError):
        percent_error_point(1.0, 0.0)
    with pytest.raises(MetricError):
        percent_error_delta([1.0], [0.0])


@given(arrays(float, 4, elements=st.floats(-5, 5)), arrays(float, 4, elements=st.floats(0.5, 5)),
       st.integers(0, 2 ** 31))
def test_delta_error_rotation_invariant(z, z_exact, seed):
    Q = special_ortho_group.rvs(4, random_state=seed)
    assert percent_error_delta(Q @ z, Q @ z_exact) == pytest.approx(percent_error_delta(z, z_exact), rel=1e-9, abs=1e-9)


def test_f1_examples():
    p = np.array([1, 1, 1, 0, 0], dtype=bool)
    e = np.array([1, 1, 0, 1, 0], dtype=bool)
    assert boundary_f1(p, e) == pytest.approx(2 / 3)  # tp 2, fp 1, fn 1
    assert boundary_f1(e, e) == 1.0
    with pytest.raises(MetricError):
        boundary_f1(np.zeros(3, bool), np.zeros(3, bool))
    with pytest.raises(MetricError):
        boundary_f1(np.zeros(3, bool), np.zeros(4, bool))


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40), st.randoms())
def test_f1_permutation_invariant(pairs, rnd):
    p, e = map(np.array, zip(*pairs))
    if not (p.any() or e.any()):
        return
    order = list(range(len(p)))
    rnd.shuffle(order)
    assert boundary_f1(p[order], e[order]) == pytest.approx(boundary_f1(p, e))
    assert 0.0 <= boundary_f1(p, e) <= 1.0


def test_spacetime_errors_vanish_on_oracle(setup3):
    grid, paths = setup3
    err = spacetime_errors(_oracle_surface(grid, paths), grid, paths, MP3)
    assert err.abs_price < 1e-12 and err.abs_delta < 1e-12


def test_spacetime_errors_constant_shift(setup3):
    grid, paths = setup3
    err = spacetime_errors(_oracle_surface(grid, paths, 0.05), grid, paths, MP3)
    assert err.abs_price == pytest.approx(0.05)
    assert err.abs_delta < 1e-12


def test_surface_f1_perfect_on_oracle_flags(setup3):
    grid, paths = setup3
    sf = _oracle_surface(grid, paths)
    if not sf.exercised.any():
        pytest.skip("no exercised states in this sample")
    assert surface_f1(sf, grid, paths) == 1.0


def test_fd_continuation_zero_step_is_price():
    grid = solve_geometric(MP1, nodes=1025, steps=200)
    s = np.array([80.0, 95.0, 100.0])
    from amerbsde.fdoracle import interp_price_delta
    v, _, _ = interp_price_delta(grid, s, np.full(3, 0.25))
    np.testing.assert_allclose(fd_continuation(grid, MP1, s, 0.25, 1e-12), v, atol=1e-8)


def test_bias_diagnostic_oracle_self_check():
    grid = solve_geometric(MP1, nodes=2049, steps=500)
    N, n = 100, 33
    paths = generate_paths(MP1, N, 2000, 0)
    anchors = bias_anchors(paths, n, 7)
    assert anchors.shape == (7,) and np.all(np.diff(anchors) > 0)
    rep = bias_diagnostic(SimpleNamespace(N=N), MP1, grid, n, anchors, 0.5, M_prime=20000, v_source="oracle")
    assert np.all(rep.deviation <= 4 * rep.se + 5e-3)
    with pytest.raises(MetricError):
        bias_diagnostic(SimpleNamespace(N=N), MP3, grid, n, anchors, 0.5)
