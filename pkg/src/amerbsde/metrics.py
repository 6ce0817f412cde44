"""Error metrics against the FD oracle, exercise-boundary f1 and the one-step bias diagnostic."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .fdoracle import FDGrid, exercised_exact, interp_price_delta, reduce_geometric
from .market import MarketParams
from .netcore import EnsembleModel
from .simulate import PathCube, generate_paths
from .training import ValueSurface, replay_targets

BIAS_ANCHORS = 21
BIAS_M_PRIME = 2000
BIAS_STREAM = 7
GH_NODES = 64


class MetricError(ValueError):
    pass


def percent_error_point(v: float, v_exact: float) -> float:
    if v_exact == 0:
        raise MetricError("exact price is zero")
    return abs(v - v_exact) / abs(v_exact) * 100.0


def percent_error_delta(z, z_exact) -> float:
    z, z_exact = np.asarray(z, dtype=float), np.asarray(z_exact, dtype=float)
    den = np.linalg.norm(z_exact)
    if den == 0:
        raise MetricError("exact delta has zero norm")
    return float(np.linalg.norm(z - z_exact) / den * 100.0)


def geometric_mean(S: np.ndarray) -> np.ndarray:
    return np.exp(np.mean(np.log(S), axis=-1))


@dataclass
class SpacetimeErrors:
    abs_price: float
    pct_price: float
    abs_delta: float
    pct_delta: float

    def to_dict(self) -> dict:
        return dict(abs_price=self.abs_price, pct_price=self.pct_price,
                    abs_delta=self.abs_delta, pct_delta=self.pct_delta)


def oracle_on_paths(grid: FDGrid, paths: PathCube, upto: int | None = None):
    """FD price u(s', t^n) and du/ds' on every path state with n < upto (default N)."""
    upto = paths.N if upto is None else upto
    sp = geometric_mean(paths.S[:upto])
    t = (paths.dt * np.arange(upto))[:, None] * np.ones_like(sp)
    u, du, _ = interp_price_delta(grid, sp, t)
    return sp, u, du


def spacetime_errors(surface: ValueSurface, grid: FDGrid, paths: PathCube, mp: MarketParams) -> SpacetimeErrors:
    """L1-aggregated price and s'-derivative errors over all (n, m) with n < N.

    The surface delta is reduced to du/ds' = sum_i s_i Z_i / s'.
    """
    reduce_geometric(mp)
    N = paths.N
    sp, u, du = oracle_on_paths(grid, paths)
    Y = surface.Y[:N]
    dus = np.einsum("nmi,nmi->nm", paths.S[:N], surface.Z[:N]) / sp
    ep = np.abs(Y - u)
    ed = np.abs(dus - du)
    return SpacetimeErrors(
        abs_price=float(ep.mean()),
        pct_price=float(ep.sum() / np.abs(u).sum() * 100.0),
        abs_delta=float(ed.mean()),
        pct_delta=float(ed.sum() / np.abs(du).sum() * 100.0),
    )


def boundary_f1(predicted, exact) -> float:
    p = np.asarray(predicted, dtype=bool).ravel()
    e = np.asarray(exact, dtype=bool).ravel()
    if p.shape != e.shape:
        raise MetricError("flag arrays differ in length")
    tp = int(np.sum(p & e))
    fp = int(np.sum(p & ~e))
    fn = int(np.sum(~p & e))
    if tp + fp + fn == 0:
        raise MetricError("f1 undefined: no positives in either labelling")
    return 2.0 * tp / (2.0 * tp + fp + fn)


def exact_exercise_flags(grid: FDGrid, paths: PathCube, upto: int | None = None) -> np.ndarray:
    upto = paths.N if upto is None else upto
    sp = geometric_mean(paths.S[:upto])
    t = (paths.dt * np.arange(upto))[:, None] * np.ones_like(sp)
    return exercised_exact(grid, sp, t)


def surface_f1(surface: ValueSurface, grid: FDGrid, paths: PathCube) -> float:
    N = paths.N
    return boundary_f1(surface.exercised[:N], exact_exercise_flags(grid, paths))


# ------------------------------------------------------------ bias diagnostic

def fd_continuation(grid: FDGrid, mp: MarketParams, s, t_next: float, dt: float) -> np.ndarray:
    """c(s) = E[exp(-r dt) V(S', t_next)] for one Euler step S' = s (1 + mu dt + sigma sqrt(dt) Z).

    Expectation by Gauss-Hermite quadrature on the 1-D FD price.
    """
    x, w = np.polynomial.hermite_e.hermegauss(GH_NODES)
    w = w / w.sum()
    s = np.asarray(s, dtype=float)
    sigma = float(mp.sigma[0])
    mu = mp.r - float(mp.delta[0])
    nxt = s[:, None] * (1.0 + mu * dt + sigma * math.sqrt(dt) * x[None, :])
    v, _, _ = interp_price_delta(grid, np.maximum(nxt, 0.0), np.full(nxt.shape, t_next))
    return math.exp(-mp.r * dt) * (v @ w)


@dataclass
class BiasReport:
    s: np.ndarray
    mean_v_next: np.ndarray
    se: np.ndarray
    c_exact: np.ndarray
    var_v_next: np.ndarray

    @property
    def deviation(self) -> np.ndarray:
        return np.abs(self.mean_v_next - self.c_exact)

    @property
    def sup_deviation(self) -> float:
        return float(self.deviation.max())

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "mean_v_next", "se", "c_exact"])
            for row in zip(self.s, self.mean_v_next, self.se, self.c_exact):
                w.writerow([repr(float(x)) for x in row])


def bias_anchors(paths: PathCube, n: int, count: int = BIAS_ANCHORS) -> np.ndarray:
    """Equally spaced 1-D states spanning the 1%..99% quantiles of S^n."""
    lo, hi = np.quantile(paths.S[n, :, 0], [0.01, 0.99])
    return np.linspace(lo, hi, count)


def bias_diagnostic(model: EnsembleModel, mp: MarketParams, grid: FDGrid, n: int, anchors,
                    theta: float, M_prime: int = BIAS_M_PRIME, seed: int = 0,
                    v_source: str = "model") -> BiasReport:
    """Compare E[exp(-r dt) v^{n+1}] from M' fresh successors per anchor with the FD continuation value.

    ``v_source='model'`` builds v^{n+1} from the trained stack via the target
    recursion on fresh paths; ``'oracle'`` uses the FD price itself (self-check).
    """
    if mp.d != 1:
        raise MetricError("bias diagnostic needs a 1-D problem")
    N = model.N
    dt = mp.T / N
    anchors = np.asarray(anchors, dtype=float)
    A = len(anchors)
    start = np.repeat(anchors, M_prime)[:, None]
    steps = N - n
    sub_mp = mp.replace(T=steps * dt)
    sub = generate_paths(sub_mp, steps, A * M_prime, seed, s_start=start, stream=BIAS_STREAM)
    if v_source == "oracle":
        v_next, _, _ = interp_price_delta(grid, sub.S[1, :, 0], np.full(A * M_prime, (n + 1) * dt))
    elif v_source == "model":
        v_next = replay_targets(model, sub, n, theta)["v"][1]
    else:
        raise ValueError(f"unknown v_source {v_source!r}")
    x = (math.exp(-mp.r * dt) * v_next).reshape(A, M_prime)
    mean = x.mean(axis=1)
    var = x.var(axis=1, ddof=1)
    se = np.sqrt(var / M_prime)
    c = fd_continuation(grid, mp, anchors, (n + 1) * dt, dt)
    return BiasReport(anchors, mean, se, c, var)
