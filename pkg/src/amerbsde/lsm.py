"""Longstaff-Schwartz baseline with a degree-chi monomial basis."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lstsq

from .hedging import delta0, price0
from .market import MarketParams, PayoffSpec, payoff
from .simulate import PathCube

log = logging.getLogger(__name__)

# default guard: 2.5e9 float64 values (20 GB)
DEFAULT_MEMORY_LIMIT = 2.5e9


class LSMMemoryError(MemoryError):
    def __init__(self, predicted: float, limit: float):
        super().__init__(f"LSM would need {predicted:.3e} floats, above the guard of {limit:.3e}")
        self.predicted = predicted
        self.limit = limit


class RankDeficientWarning(UserWarning):
    pass


def basis_size(d: int, chi: int) -> int:
    return math.comb(d + chi, d)


def lsm_memory_floats(N: int, M: int, d: int, chi: int) -> int:
    """Paths (N M d) + basis matrix at one timestep + regression targets."""
    return N * M * d + basis_size(d, chi) * M + M


def nn_memory_floats(N: int, M: int, d: int) -> int:
    """Paths plus current-timestep outputs and parent features."""
    return N * M * d + 2 * (M + M * d)


@dataclass
class MonomialBasis:
    """All monomials s^a with |a| <= chi, in graded-lex order."""

    d: int
    chi: int
    exponent_list: list = field(init=False)
    _combos: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.d < 1 or self.chi < 0:
            raise ValueError("need d >= 1 and chi >= 0")
        combos = [c for k in range(self.chi + 1)
                  for c in itertools.combinations_with_replacement(range(self.d), k)]
        self._combos = combos
        self.exponent_list = [tuple(int(np.sum(np.array(c, dtype=int) == i)) for i in range(self.d))
                              for c in combos]

    def __len__(self) -> int:
        return len(self._combos)

    def eval(self, x) -> np.ndarray:
        """Basis matrix of shape (M, len(self)) for already-scaled inputs ``x`` (M, d) or (d,)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], len(self._combos)))
        pos = {}
        with np.errstate(over="ignore", invalid="ignore"):
            for j, c in enumerate(self._combos):
                pos[c] = j
                out[:, j] = 1.0 if not c else out[:, pos[c[:-1]]] * x[:, c[-1]]
        if not np.all(np.isfinite(out)):
            raise OverflowError("monomial basis overflowed")
        return out[0] if single else out


def basis_eval(basis: MonomialBasis, s, K: float = 1.0) -> np.ndarray:
    """Monomials of s / K."""
    return basis.eval(np.asarray(s, dtype=float) / K)


def regress(B: np.ndarray, y: np.ndarray, n: int | None = None) -> np.ndarray:
    """Least squares via column-pivoted QR (LAPACK gelsy); warns when rank-deficient."""
    cond = max(B.shape) * np.finfo(float).eps
    coef, _, rank, _ = lstsq(B, y, cond=cond, lapack_driver="gelsy")
    if rank < B.shape[1]:
        warnings.warn(f"rank-deficient regression at timestep {n}: rank {rank} < {B.shape[1]}",
                      RankDeficientWarning, stacklevel=2)
    return coef


@dataclass
class LSMResult:
    coefficients: list  # per timestep; None where nothing was regressed
    n_stop: np.ndarray
    exercised: np.ndarray  # (N+1, M) exercise decisions
    price: float
    se: float
    chi: int
    c0: float = math.nan  # continuation value at the initial state


    def tau(self, dt: float) -> np.ndarray:
        return self.n_stop * dt


def lsm_fit(paths: PathCube, mp: MarketParams, spec: PayoffSpec, chi: int,
            memory_limit: float = DEFAULT_MEMORY_LIMIT) -> LSMResult:
    """Backward induction regressing discounted cash flows on in-the-money paths."""
    N, M, d = paths.N, paths.M, paths.d
    need = lsm_memory_floats(N, M, d, chi)
    if need > memory_limit:
        raise LSMMemoryError(need, memory_limit)
    basis = MonomialBasis(d, chi)
    disc = math.exp(-mp.r * paths.dt)
    v = payoff(spec, paths.S[N])
    n_stop = np.full(M, N)
    ex = np.zeros((N + 1, M), dtype=bool)
    ex[N] = v > 0
    coefs: list = [None] * (N + 1)
    for n in range(N - 1, -1, -1):
        y = disc * v
        f = payoff(spec, paths.S[n])
        itm = f > 0
        if n == 0:
            # single initial state: continuation is the plain mean
            c0 = float(y.mean())
            ex_n = itm & (f >= c0)
        elif itm.sum() > 0:
            B = basis_eval(basis, paths.S[n, itm], mp.K)
            c = regress(B, y[itm], n)
            coefs[n] = c
            ex_n = np.zeros(M, dtype=bool)
            ex_n[itm] = f[itm] >= B @ c
        else:
            ex_n = np.zeros(M, dtype=bool)
        ex[n] = ex_n
        v = np.where(ex_n, f, y)
        n_stop[ex_n] = n
    p, se = price0(paths, n_stop, spec, mp.r)
    return LSMResult(coefs, n_stop, ex, p, se, chi, c0)


def lsm_exercise_flags(result: LSMResult, paths: PathCube, mp: MarketParams, spec: PayoffSpec) -> np.ndarray:
    """Apply a fitted exercise rule to other paths (an out-of-sample lower-bound estimator)."""
    N = len(result.coefficients) - 1
    if paths.N != N:
        raise ValueError(f"rule was fitted with N={N}, paths have N={paths.N}")
    basis = MonomialBasis(paths.d, result.chi)
    ex = np.zeros((N + 1, paths.M), dtype=bool)
    ex[N] = payoff(spec, paths.S[N]) > 0
    ex[0] = payoff(spec, paths.S[0]) >= result.c0
    for n in range(1, N):
        c = result.coefficients[n]
        if c is None:
            continue
        f = payoff(spec, paths.S[n])
        itm = f > 0
        ex[n, itm] = f[itm] >= basis_eval(basis, paths.S[n, itm], mp.K) @ c
    return ex


def lsm_delta0(paths: PathCube, result: LSMResult, mp: MarketParams, spec: PayoffSpec):
    return delta0(paths, result.n_stop, spec, mp.r, mp.s0)
