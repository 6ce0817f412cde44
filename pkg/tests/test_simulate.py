import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amerbsde.market import MarketParams
from amerbsde.simulate import (CholeskyError, cholesky, dump_paths_csv, generate_paths, load_paths,
                               save_paths, standard_normals)


def mp_(d=3, **kw):
    base = dict(d=d, r=0.05, delta=0.1, sigma=0.2, rho=0.3, T=1.0, K=100.0, s0=100.0)
    base.update(kw)
    return MarketParams(**base)


@given(st.integers(1, 6), st.floats(-0.15, 0.95))
def test_cholesky_matches_numpy(d, rho):
    a = np.full((d, d), rho)
    np.fill_diagonal(a, 1.0)
    np.testing.assert_allclose(cholesky(a), np.linalg.cholesky(a), atol=1e-12)


def test_cholesky_semidefinite_and_indefinite():
    L = cholesky(np.ones((3, 3)))
    np.testing.assert_allclose(L @ L.T, np.ones((3, 3)), atol=1e-14)
    with pytest.raises(CholeskyError) as err:
        cholesky(np.array([[1.0, 0.9, 0.9], [0.9, 1.0, -0.9], [0.9, -0.9, 1.0]]))
    assert err.value.pivot == 2


def test_paths_independent_of_path_count():
    a = generate_paths(mp_(), 5, 3000, seed=7)
    b = generate_paths(mp_(), 5, 1100, seed=7)
    np.testing.assert_array_equal(a.S[:, :1100], b.S)
    c = generate_paths(mp_(), 5, 1100, seed=8)
    assert not np.array_equal(b.S, c.S)


def test_euler_recursion_and_zero_volatility():
    mp = mp_(sigma=0.0)
    p = generate_paths(mp, 10, 4, seed=0)
    expect = 100.0 * (1 + (0.05 - 0.1) * 0.1) ** np.arange(11)
    np.testing.assert_allclose(p.S[:, 0, 0], expect, rtol=1e-14)
    mp = mp_()
    p = generate_paths(mp, 4, 8, seed=1)
    step = p.S[:-1] * (1 + (mp.r - mp.delta) * p.dt + mp.sigma * p.dW)
    np.testing.assert_array_equal(step, p.S[1:])


def test_increment_covariance():
    mp = mp_(d=2, rho=0.6)
    p = generate_paths(mp, 2, 200000, seed=3)
    x = p.dW[0] / np.sqrt(p.dt)
    c = np.cov(x.T)
    np.testing.assert_allclose(c, mp.rho, atol=0.01)


def test_normals_are_standard():
    z = standard_normals(0, 1, 100000, 1)
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02


def test_path_io_roundtrip(tmp_path):
    p = generate_paths(mp_(d=2), 3, 5, seed=2)
    save_paths(p, tmp_path / "p.npz")
    q = load_paths(tmp_path / "p.npz")
    np.testing.assert_array_equal(p.S, q.S)
    assert q.dt == p.dt and q.seed == 2
    dump_paths_csv(p, tmp_path / "p.csv")
    raw = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    assert raw.shape == (4 * 5 * 2, 4)
    np.testing.assert_array_equal(raw[:, 3], p.S.reshape(-1))


def test_sub_path_restart():
    mp = mp_(d=1)
    start = np.array([[80.0], [120.0]])
    p = generate_paths(mp, 3, 2, seed=0, s_start=start)
    np.testing.assert_array_equal(p.S[0], start)
