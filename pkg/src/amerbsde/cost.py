"""Memory and run-time accounting for the network sweep and the LSM baseline."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .lsm import basis_size, lsm_memory_floats, nn_memory_floats
from .market import MarketParams, PayoffSpec
from .training import TrainConfig, backward_sweep


def predicted_memory(N: int, M_total: int, d: int, chi: int) -> dict:
    """Floats to store for both methods, plus the LSM basis matrix on its own."""
    return {
        "nn_floats": nn_memory_floats(N, M_total, d),
        "lsm_floats": lsm_memory_floats(N, M_total, d, chi),
        "lsm_basis_floats": basis_size(d, chi) * M_total,
        "basis_size": basis_size(d, chi),
    }


def predicted_time_units(N: int, J: int, M: int, L: int, d: int, c1: float = 1.0, c2: float = 1.0) -> float:
    """(c1 N / (2J) + c2) N M L d_max^2 with d_max = d + 5, in arbitrary units."""
    return (c1 * N / (2 * J) + c2) * N * M * L * (d + 5) ** 2


@dataclass
class QuadraticFit:
    dims: list
    seconds: list
    coef: np.ndarray  # highest power first
    r2: float

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "seconds": list(self.seconds),
                "coef": self.coef.tolist(), "r2": self.r2}


def quadratic_fit(dims, seconds) -> QuadraticFit:
    x = np.asarray(dims, dtype=float)
    y = np.asarray(seconds, dtype=float)
    coef = np.polyfit(x, y, 2)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return QuadraticFit(list(dims), list(seconds), coef, r2)


def time_training(dims=(2, 4, 8, 16), N: int = 2, M: int = 20000, steps: int = 10, batch: int = 20000,
                  L: int = 7, repeats: int = 2, seed: int = 0) -> QuadraticFit:
    """Wall time of a geometric-call sweep at each d with (N, M, L) fixed; best of ``repeats``.

    Large batches keep the per-step matrix work ahead of interpreter overhead,
    which otherwise makes small-width timings look linear in d.
    """
    secs = []
    for d in dims:
        mp = MarketParams(d=d, r=0.0, delta=0.02, sigma=0.25, rho=0.75, T=2.0, K=100.0, s0=100.0)
        spec = PayoffSpec("geometric_call", 100.0)
        cfg = TrainConfig(N=N, J=min(4, N), M=M, C=1, steps=steps, batch=batch, L=L, seed=seed)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            backward_sweep(mp, spec, cfg)
            best = min(best, time.perf_counter() - t0)
        secs.append(best)
    return quadratic_fit(dims, secs)
