"""Correlated Brownian increments and Euler-discretised GBM paths.

Normals come from numpy's counter-based Philox generator keyed by
``(seed, stream, block)``. Paths are drawn in fixed blocks of ``BLOCK`` paths,
so path ``m`` is the same regardless of how many paths are requested and the
blocks can be generated in any order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .market import MarketParams

BLOCK = 1024
PATH_STREAM = 0


class CholeskyError(ValueError):
    def __init__(self, pivot: int, value: float):
        super().__init__(f"correlation matrix not positive semi-definite: pivot {pivot} = {value:.3e}")
        self.pivot = pivot
        self.value = value


def cholesky(rho, tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular L with L L^T = rho. Semi-definite pivots (|p| <= tol) give zero columns."""
    a = np.asarray(rho, dtype=float)
    d = a.shape[0]
    L = np.zeros_like(a)
    for j in range(d):
        p = a[j, j] - L[j, :j] @ L[j, :j]
        if p < -tol:
            raise CholeskyError(j, p)
        if p <= tol:
            continue
        L[j, j] = np.sqrt(p)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def philox(seed: int, stream: int, index: int) -> np.random.Generator:
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF, ((int(stream) & 0xFFFFFFFF) << 32) | (int(index) & 0xFFFFFFFF))
    return np.random.Generator(np.random.Philox(key=np.array(key, dtype=np.uint64)))


@dataclass
class PathCube:
    """S has shape (N+1, M, d); dW has shape (N, M, d)."""

    S: np.ndarray
    dW: np.ndarray
    dt: float
    seed: int

    @property
    def N(self) -> int:
        return self.dW.shape[0]

    @property
    def M(self) -> int:
        return self.S.shape[1]

    @property
    def d(self) -> int:
        return self.S.shape[2]

    def subset(self, idx) -> "PathCube":
        return PathCube(self.S[:, idx], self.dW[:, idx], self.dt, self.seed)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)


def standard_normals(seed: int, N: int, M: int, d: int, stream: int = PATH_STREAM) -> np.ndarray:
    """i.i.d. N(0,1) array of shape (N, M, d), indexed by (n, m, i)."""
    out = np.empty((N, M, d))
    for b in range(-(-M // BLOCK)):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, M)
        z = philox(seed, stream, b).standard_normal((N, BLOCK, d))
        out[:, lo:hi] = z[:, : hi - lo]
    return out


def brownian_increments(mp: MarketParams, N: int, M: int, seed: int, stream: int = PATH_STREAM):
    dt = mp.T / N
    phi = standard_normals(seed, N, M, mp.d, stream)
    return np.einsum("nmj,ij->nmi", phi, mp.chol) * np.sqrt(dt)


def euler_paths(mp: MarketParams, dW: np.ndarray, s_start=None) -> np.ndarray:
    N, M, d = dW.shape
    dt = mp.T / N
    S = np.empty((N + 1, M, d))
    S[0] = mp.s0 if s_start is None else s_start
    growth = 1.0 + (mp.r - mp.delta) * dt
    for n in range(N):
        S[n + 1] = S[n] * (growth + mp.sigma * dW[n])
    return S


def generate_paths(mp: MarketParams, N: int, M: int, seed: int, s_start=None, stream: int = PATH_STREAM) -> PathCube:
    """Euler GBM paths S^{n+1} = (1 + (r - delta) dt) S^n + sigma S^n dW^n.

    ``s_start`` (shape (M, d) or (d,)) overrides the initial state; used when
    restarting sub-paths from interior states.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be >= 1")
    dW = brownian_increments(mp, N, M, seed, stream)
    return PathCube(euler_paths(mp, dW, s_start), dW, mp.T / N, int(seed))


def dump_paths_csv(paths: PathCube, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "m", "i", "S"])
        N1, M, d = paths.S.shape
        for n in range(N1):
            for m in range(M):
                for i in range(d):
                    w.writerow([n, m, i, repr(float(paths.S[n, m, i]))])


def save_paths(paths: PathCube, path) -> None:
    np.savez(path, S=paths.S, dW=paths.dW, dt=paths.dt, seed=paths.seed)


def load_paths(path) -> PathCube:
    z = np.load(path)
    return PathCube(z["S"], z["dW"], float(z["dt"]), int(z["seed"]))
