"""1-D Crank-Nicolson American call solver (penalty method) and Black-Scholes closed form.

The grid is uniform on [0, S_max] with the strike on a node. Time runs in
time-to-expiry tau; the first Crank-Nicolson step is replaced by two
implicit-Euler half steps (Rannacher smoothing of the payoff kink).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .market import MarketParams

PENALTY = 1e6
PENALTY_TOL = 1e-8
PENALTY_MAXIT = 100
EXERCISE_TOL = 1e-6


class ReductionError(ValueError):
    pass


class PenaltyConvergenceError(RuntimeError):
    pass


def reduce_geometric(mp: MarketParams):
    """Effective (sigma', drift', s0') of the 1-D option on the geometric mean."""
    d = mp.d
    off = mp.rho[~np.eye(d, dtype=bool)]
    if d > 1 and not np.allclose(off, off[0], atol=1e-14, rtol=0):
        raise ReductionError("geometric reduction needs an equicorrelated rho")
    if not np.allclose(mp.sigma, mp.sigma[0], atol=0, rtol=1e-14):
        raise ReductionError("geometric reduction needs equal volatilities")
    if not np.allclose(mp.delta, mp.delta[0], atol=0, rtol=1e-14):
        raise ReductionError("geometric reduction needs equal dividend yields")
    rho = off[0] if d > 1 else 0.0
    sigma = float(mp.sigma[0])
    sigma_eff = math.sqrt((1.0 + (d - 1) * rho) / d) * sigma
    drift_eff = mp.r - float(mp.delta[0]) + 0.5 * (sigma_eff ** 2 - sigma ** 2)
    s0_eff = float(np.exp(np.mean(np.log(mp.s0))))
    return sigma_eff, drift_eff, s0_eff


def bs_european(sigma: float, drift: float, r: float, K: float, T: float, s):
    """European call with carry ``drift`` (dividend yield r - drift); returns (price, delta)."""
    if not (sigma > 0 and T > 0):
        raise ValueError("sigma and T must be positive")
    s = np.asarray(s, dtype=float)
    sq = sigma * math.sqrt(T)
    with np.errstate(divide="ignore"):
        d1 = (np.log(s / K) + (drift + 0.5 * sigma * sigma) * T) / sq
    d2 = d1 - sq
    carry = math.exp((drift - r) * T)
    price = s * carry * ndtr(d1) - K * math.exp(-r * T) * ndtr(d2)
    return price, carry * ndtr(d1)


@dataclass
class FDGrid:
    """Solution on a uniform (s, tau) grid. ``V[k]`` is the price at tau_k = k * dtau, i.e. t = T - tau_k."""

    s: np.ndarray
    tau: np.ndarray
    V: np.ndarray
    dV: np.ndarray
    sigma: float
    drift: float
    r: float
    K: float
    T: float
    american: bool = True

    def payoff(self, s):
        return np.maximum(np.asarray(s, dtype=float) - self.K, 0.0)

    def exercise_boundary(self, tol: float = EXERCISE_TOL) -> np.ndarray:
        """Critical price s*(tau_k): smallest in-the-money node from which V - payoff <= tol up to S_max."""
        gap = self.V - self.payoff(self.s)[None, :]
        itm = self.s > self.K
        out = np.full(len(self.tau), np.inf)
        for k in range(len(self.tau)):
            cont = (gap[k] > tol) | ~itm
            idx = np.flatnonzero(cont)
            last = idx[-1] if idx.size else -1
            if last + 1 < len(self.s):
                out[k] = self.s[last + 1]
        return out

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s", "V", "dV"])
            for k in range(len(self.tau)):
                t = self.T - self.tau[k]
                for j in range(len(self.s)):
                    w.writerow([repr(float(t)), repr(float(self.s[j])),
                                repr(float(self.V[k, j])), repr(float(self.dV[k, j]))])


def _operator_bands(s, ds, sigma, drift, r):
    """Tridiagonal coefficients of L V = 0.5 sigma^2 s^2 V_ss + drift s V_s - r V."""
    diff = 0.5 * sigma * sigma * s * s / (ds * ds)
    conv = 0.5 * drift * s / ds
    lower = diff - conv
    upper = diff + conv
    diag = -2.0 * diff - r
    return lower, diag, upper


def _apply(lower, diag, upper, V):
    out = diag * V
    out[1:] += lower[1:] * V[:-1]
    out[:-1] += upper[:-1] * V[1:]
    return out


def _upper_boundary(s_max, K, tau, r, q, american):
    euro = s_max * math.exp(-q * tau) - K * math.exp(-r * tau)
    return max(euro, s_max - K) if american else euro


def _implicit_step(lower, diag, upper, rhs, theta_dt, payoff, V_guess, american, bc_hi, context):
    """Solve (I - theta_dt L) V = rhs with Dirichlet ends and (optionally) the penalty constraint."""
    n = len(rhs)
    ab = np.zeros((3, n))
    ab[0, 1:] = -theta_dt * upper[:-1]
    ab[1] = 1.0 - theta_dt * diag
    ab[2, :-1] = -theta_dt * lower[1:]
    # Dirichlet rows
    ab[1, 0], ab[0, 1] = 1.0, 0.0
    ab[1, -1], ab[2, -2] = 1.0, 0.0
    rhs = rhs.copy()
    rhs[0], rhs[-1] = 0.0, bc_hi
    if not american:
        return solve_banded((1, 1), ab, rhs)
    V = V_guess
    active = V < payoff
    for _ in range(PENALTY_MAXIT):
        P = np.where(active, PENALTY, 0.0)
        P[0] = P[-1] = 0.0
        abp = ab.copy()
        abp[1] += P
        V_new = solve_banded((1, 1), abp, rhs + P * payoff)
        new_active = V_new < payoff
        change = np.max(np.abs(V_new - V) / np.maximum(1.0, np.abs(V_new)))
        V = V_new
        if np.array_equal(new_active, active) or change < PENALTY_TOL:
            return V
        active = new_active
    raise PenaltyConvergenceError(f"penalty iteration did not converge ({context})")


def solve_american_1d(sigma: float, drift: float, r: float, K: float, T: float,
                      nodes: int = 4097, steps: int = 1000, s_max: float | None = None,
                      american: bool = True) -> FDGrid:
    if nodes < 3 or steps < 1:
        raise ValueError("need nodes >= 3 and steps >= 1")
    s_max = 8.0 * K if s_max is None else s_max
    s = np.linspace(0.0, s_max, nodes)
    ds = s[1] - s[0]
    q = r - drift
    dtau = T / steps
    lower, diag, upper = _operator_bands(s, ds, sigma, drift, r)
    pay = np.maximum(s - K, 0.0)
    V = np.empty((steps + 1, nodes))
    V[0] = pay
    cur = pay.copy()
    for k in range(1, steps + 1):
        tau = k * dtau
        bc = _upper_boundary(s_max, K, tau, r, q, american)
        ctx = f"tau step {k}"
        if k == 1:
            half = 0.5 * dtau
            mid = _implicit_step(lower, diag, upper, cur, half, pay, cur, american,
                                 _upper_boundary(s_max, K, half, r, q, american), ctx)
            cur = _implicit_step(lower, diag, upper, mid, half, pay, mid, american, bc, ctx)
        else:
            rhs = cur + 0.5 * dtau * _apply(lower, diag, upper, cur)
            cur = _implicit_step(lower, diag, upper, rhs, 0.5 * dtau, pay, cur, american, bc, ctx)
        V[k] = cur
    dV = np.gradient(V, ds, axis=1, edge_order=2)
    return FDGrid(s, np.linspace(0.0, T, steps + 1), V, dV, sigma, drift, r, K, T, american)


def solve_geometric(mp: MarketParams, nodes: int = 4097, steps: int = 1000, american: bool = True) -> FDGrid:
    sigma_eff, drift_eff, _ = reduce_geometric(mp)
    return solve_american_1d(sigma_eff, drift_eff, mp.r, mp.K, mp.T, nodes, steps, american=american)


def interp_price_delta(grid: FDGrid, s, t):
    """Bilinear interpolation of (V, dV) at spot(s) ``s`` and calendar time(s) ``t``.

    Returns ``(price, delta, clamped)`` where ``clamped`` flags queries outside the s-span.
    """
    s = np.asarray(s, dtype=float)
    tau = grid.T - np.broadcast_to(np.asarray(t, dtype=float), s.shape)
    clamped = (s < grid.s[0]) | (s > grid.s[-1])
    sc = np.clip(s, grid.s[0], grid.s[-1])
    ds = grid.s[1] - grid.s[0]
    dtau = grid.tau[1] - grid.tau[0]
    js = np.clip(np.floor((sc - grid.s[0]) / ds).astype(int), 0, len(grid.s) - 2)
    ws = (sc - grid.s[js]) / ds
    kt = np.clip(np.floor(np.clip(tau, 0.0, grid.T) / dtau + 1e-9).astype(int), 0, len(grid.tau) - 2)
    wt = np.clip((np.clip(tau, 0.0, grid.T) - grid.tau[kt]) / dtau, 0.0, 1.0)

    def bil(A):
        a0 = A[kt, js] * (1 - ws) + A[kt, js + 1] * ws
        a1 = A[kt + 1, js] * (1 - ws) + A[kt + 1, js + 1] * ws
        return a0 * (1 - wt) + a1 * wt

    return bil(grid.V), bil(grid.dV), clamped


def exercised_exact(grid: FDGrid, s, t, tol: float = EXERCISE_TOL, boundary=None) -> np.ndarray:
    """FD exercise classification at (s, t): s at or beyond the critical price of the nearest tau-step."""
    bnd = grid.exercise_boundary(tol) if boundary is None else boundary
    tau = np.clip(grid.T - np.asarray(t, dtype=float), 0.0, grid.T)
    k = np.rint(tau / (grid.tau[1] - grid.tau[0])).astype(int)
    return np.asarray(s) >= bnd[k]
