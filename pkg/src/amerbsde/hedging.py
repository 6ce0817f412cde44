"""t = 0 estimators from stopping times and the discrete delta-hedging simulator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .fdoracle import FDGrid, exercised_exact, interp_price_delta, reduce_geometric
from .market import MarketParams, PayoffSpec, payoff, payoff_grad, smoothed_payoff
from .netcore import EnsembleModel
from .simulate import PathCube
from .training import ValueSurface


class HedgeError(RuntimeError):
    pass


def stopping_times(exercised: np.ndarray, dt: float):
    """First exercised timestep per path; never-exercised paths stop at N.

    ``exercised`` has shape (N+1, M). Returns ``(tau, n_stop)``.
    """
    ex = np.asarray(exercised, dtype=bool)
    N = ex.shape[0] - 1
    hit = ex.any(axis=0)
    n_stop = np.where(hit, np.argmax(ex, axis=0), N)
    return n_stop * dt, n_stop


def surface_stopping_times(surface: ValueSurface, dt: float):
    return stopping_times(surface.exercised, dt)


def _stopped_states(paths: PathCube, n_stop: np.ndarray) -> np.ndarray:
    return paths.S[n_stop, np.arange(paths.M)]


def price0(paths: PathCube, n_stop: np.ndarray, spec: PayoffSpec, r: float):
    """Mean discounted payoff at the stopping times and its standard error."""
    S_tau = _stopped_states(paths, n_stop)
    x = np.exp(-r * n_stop * paths.dt) * payoff(spec, S_tau)
    se = x.std(ddof=1) / math.sqrt(len(x)) if len(x) > 1 else 0.0
    return float(x.mean()), float(se)


def delta0(paths: PathCube, n_stop: np.ndarray, spec: PayoffSpec, r: float, s0):
    """Pathwise t = 0 delta, using dS_j/ds0_i = (S_j / s0_i) delta_ij. Returns (delta, se)."""
    S_tau = _stopped_states(paths, n_stop)
    s0 = np.broadcast_to(np.asarray(s0, dtype=float), (paths.d,))
    x = (np.exp(-r * n_stop * paths.dt)[:, None] * payoff_grad(spec, S_tau) * S_tau / s0)
    se = x.std(axis=0, ddof=1) / math.sqrt(len(x)) if len(x) > 1 else np.zeros(paths.d)
    return x.mean(axis=0), se


def model_exercise_flags(model: EnsembleModel, paths: PathCube, chunk: int = 65536) -> np.ndarray:
    """Exercise flags y^n <= f on every path state for n < N (row N stays False, as in the sweep)."""
    N, M = paths.N, paths.M
    ex = np.zeros((N + 1, M), dtype=bool)
    for n in range(N):
        S = paths.S[n]
        if n == 0 and np.all(np.ptp(S, axis=0) == 0.0):
            y = np.full(M, float(model.value(0, S[:1])[0]))
        else:
            y = np.concatenate([model.value(n, S[lo:lo + chunk]) for lo in range(0, M, chunk)])
        ex[n] = y <= payoff(model.payoff, S)
    return ex


# ----------------------------------------------------------------- providers

class SurfaceProvider:
    """Reads prices, deltas and exercise flags off a ValueSurface built on the same paths."""

    def __init__(self, surface: ValueSurface):
        self.surface = surface

    def query(self, n: int, S: np.ndarray, idx: np.ndarray):
        sf = self.surface
        return sf.Y[n, idx], sf.Z[n, idx], sf.exercised[n, idx]


class NetProvider:
    """Evaluates the trained network stack at arbitrary states."""

    def __init__(self, model: EnsembleModel, chunk: int = 65536):
        self.model = model
        self.chunk = chunk

    def query(self, n: int, S: np.ndarray, idx: np.ndarray):
        m = self.model
        f = payoff(m.payoff, S)
        if n == m.N:
            _, z = smoothed_payoff(m.payoff, S, m.kappa)
            return f, z, np.ones(len(S), dtype=bool)
        y = np.empty(len(S))
        z = np.empty_like(S)
        for lo in range(0, len(S), self.chunk):
            sl = slice(lo, lo + self.chunk)
            y[sl], z[sl] = m.value_and_delta(n, S[sl])
        return np.maximum(y, f), z, y <= f


class FDProvider:
    """FD oracle (1-D, or the geometric reduction in d dimensions) as price/delta provider."""

    def __init__(self, grid: FDGrid, mp: MarketParams, N: int):
        reduce_geometric(mp)  # guard
        self.grid, self.mp, self.N = grid, mp, N
        self.dt = mp.T / N
        self.boundary = grid.exercise_boundary()

    def query(self, n: int, S: np.ndarray, idx: np.ndarray):
        d = S.shape[1]
        sp = np.exp(np.mean(np.log(S), axis=1))
        t = n * self.dt
        v, du, _ = interp_price_delta(self.grid, sp, np.full(len(sp), t))
        delta = (du * sp)[:, None] / (d * S)
        if n == self.N:
            ex = np.ones(len(S), dtype=bool)
        else:
            ex = exercised_exact(self.grid, sp, t, boundary=self.boundary)
        return v, delta, ex


# ----------------------------------------------------------------- simulator

@dataclass
class HedgeReport:
    pnl: np.ndarray
    intervals: int
    bins: int = 50

    @property
    def mean(self) -> float:
        return float(self.pnl.mean())

    @property
    def std(self) -> float:
        return float(self.pnl.std(ddof=1)) if len(self.pnl) > 1 else 0.0

    def histogram(self):
        counts, edges = np.histogram(self.pnl, bins=self.bins)
        return edges, counts

    def to_dict(self) -> dict:
        edges, counts = self.histogram()
        return {"intervals": self.intervals, "paths": int(len(self.pnl)),
                "mean": self.mean, "std": self.std,
                "hist_edges": edges.tolist(), "hist_counts": counts.tolist()}

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def dump_hist_csv(self, path) -> None:
        edges, counts = self.histogram()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count"])
            for a, b, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([repr(float(a)), repr(float(b)), int(c)])


def _checked(provider, n, S, idx):
    try:
        v, z, ex = provider.query(n, S, idx)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise HedgeError(f"provider failed at timestep {n}: {exc}") from exc
    bad = ~(np.isfinite(v) & np.all(np.isfinite(z), axis=1))
    if bad.any():
        raise HedgeError(f"provider returned non-finite values at timestep {n}, path {int(idx[np.argmax(bad)])}")
    return v, z, np.asarray(ex, dtype=bool)


def hedge_simulate(provider, paths: PathCube, mp: MarketParams, spec: PayoffSpec, intervals: int,
                   bins: int = 50) -> HedgeReport:
    """Short one option, delta-hedge at ``intervals`` equally spaced dates.

    The bank account accrues at r over every simulation step and receives the
    dividend yield on the shares held. The exercise date comes from the
    provider's flags at every simulation step; the writer pays f(S) there and
    liquidates. Returns the relative P&L exp(-rT) Pi_T / v0 per path.
    """
    N, M = paths.N, paths.M
    if intervals < 1 or N % intervals:
        raise ValueError(f"intervals ({intervals}) must divide N ({N})")
    every = N // intervals
    dt = paths.dt
    growth = math.exp(mp.r * dt)
    all_idx = np.arange(M)

    v, shares, ex = _checked(provider, 0, paths.S[0], all_idx)
    v0 = float(v.mean())
    if not v0 > 0:
        raise HedgeError(f"non-positive initial price {v0}")
    bank = v0 - np.einsum("mi,mi->m", shares, paths.S[0])
    alive = ~ex
    pi = np.zeros(M)
    settle_n = np.zeros(M, dtype=int)
    # immediate exercise at t = 0
    pi[ex] = v0 - payoff(spec, paths.S[0, ex])

    for n in range(1, N + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        S_prev, S = paths.S[n - 1, idx], paths.S[n, idx]
        bank[idx] = bank[idx] * growth + np.einsum("mi,mi->m", shares[idx] * mp.delta * dt, S_prev)
        v_n, z_n, ex_n = _checked(provider, n, S, idx)
        if n == N:
            ex_n = np.ones_like(ex_n)
        stop = idx[ex_n]
        if stop.size:
            S_stop = paths.S[n, stop]
            pi[stop] = bank[stop] + np.einsum("mi,mi->m", shares[stop], S_stop) - payoff(spec, S_stop)
            settle_n[stop] = n
            alive[stop] = False
        if n % every == 0 and n < N:
            keep = ~ex_n
            k_idx = idx[keep]
            new = z_n[keep]
            bank[k_idx] -= np.einsum("mi,mi->m", new - shares[k_idx], paths.S[n, k_idx])
            shares[k_idx] = new

    pi_T = pi * np.exp(mp.r * (N - settle_n) * dt)
    rel = math.exp(-mp.r * mp.T) * pi_T / v0
    return HedgeReport(rel, intervals, bins)
