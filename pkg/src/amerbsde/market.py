"""Market/contract parameters and payoff functions.

All payoff helpers are vectorised over a leading sample axis: ``s`` has shape
``(M, d)`` (or ``(d,)`` for a single state) and scalar outputs have shape
``(M,)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-12


class PayoffKind(str, enum.Enum):
    GEOMETRIC_CALL = "geometric_call"
    MAX_CALL = "max_call"


@dataclass(frozen=True)
class PayoffSpec:
    kind: PayoffKind
    K: float

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        if not self.K > 0:
            raise ValueError(f"strike must be positive, got {self.K}")


@dataclass(frozen=True, eq=False)
class MarketParams:
    """Contract and market coefficients for a d-asset basket under GBM.

    ``delta``, ``sigma`` and ``s0`` are length-d arrays; ``rho`` is d x d.
    Scalars passed for the per-asset fields are broadcast.
    """

    d: int
    r: float
    delta: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    T: float
    K: float
    s0: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise ValueError("d must be >= 1")
        object.__setattr__(self, "d", d)

        def vec(x, name):
            a = np.broadcast_to(np.asarray(x, dtype=float), (d,)).copy()
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            a.flags.writeable = False
            return a

        object.__setattr__(self, "delta", vec(self.delta, "delta"))
        object.__setattr__(self, "sigma", vec(self.sigma, "sigma"))
        object.__setattr__(self, "s0", vec(self.s0, "s0"))
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim == 0:
            rho = equicorrelation(d, float(rho))
        rho = rho.copy()
        rho.flags.writeable = False
        object.__setattr__(self, "rho", rho)

        # sigma == 0 is allowed so that deterministic markets can be built in tests
        if np.any(self.sigma < 0):
            raise ValueError("volatilities must be non-negative")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.K > 0:
            raise ValueError("K must be positive")
        if np.any(self.s0 <= 0):
            raise ValueError("initial prices must be positive")
        if rho.shape != (d, d):
            raise ValueError(f"rho must be {d}x{d}, got {rho.shape}")
        if not np.allclose(rho, rho.T, atol=1e-14, rtol=0):
            raise ValueError("rho must be symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-14, rtol=0):
            raise ValueError("rho must have a unit diagonal")
        from .simulate import cholesky  # local import: simulate depends on market

        object.__setattr__(self, "_chol", cholesky(rho))

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    def replace(self, **changes) -> "MarketParams":
        kw = dict(d=self.d, r=self.r, delta=self.delta, sigma=self.sigma,
                  rho=self.rho, T=self.T, K=self.K, s0=self.s0)
        kw.update(changes)
        return MarketParams(**kw)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "r": self.r, "delta": self.delta.tolist(),
            "sigma": self.sigma.tolist(), "rho": self.rho.tolist(),
            "T": self.T, "K": self.K, "s0": self.s0.tolist(),
        }


def equicorrelation(d: int, rho: float) -> np.ndarray:
    m = np.full((d, d), float(rho))
    np.fill_diagonal(m, 1.0)
    return m


def _as_batch(s):
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    if not np.all(np.isfinite(s)):
        raise ValueError("payoff evaluated at non-finite state")
    return s, single


def _geometric_mean(s):
    return np.exp(np.mean(np.log(np.maximum(s, LOG_FLOOR)), axis=1))


def payoff_g(spec: PayoffSpec, s):
    """Un-floored payoff argument g(s); f(s) = max(g(s), 0)."""
    s, single = _as_batch(s)
    if spec.kind is PayoffKind.GEOMETRIC_CALL:
        g = _geometric_mean(s) - spec.K
    else:
        g = np.max(s, axis=1) - spec.K
    return g[0] if single else g


def grad_g(spec: PayoffSpec, s):
    s, single = _as_batch(s)
    if spec.kind is PayoffKind.GEOMETRIC_CALL:
        d = s.shape[1]
        gm = _geometric_mean(s)
        out = gm[:, None] / (d * np.maximum(s, LOG_FLOOR))
    else:
        out = np.zeros_like(s)
        # argmax returns the lowest index on ties
        out[np.arange(s.shape[0]), np.argmax(s, axis=1)] = 1.0
    return out[0] if single else out


def payoff(spec: PayoffSpec, s):
    return np.maximum(payoff_g(spec, s), 0.0)


def payoff_grad(spec: PayoffSpec, s):
    """Gradient of f = max(g, 0); zero out of the money (and at g == 0)."""
    g = np.atleast_1d(payoff_g(spec, s))
    gg = grad_g(spec, s)
    itm = (g > 0).astype(float)
    if gg.ndim == 1:
        return gg * itm[0]
    return gg * itm[:, None]


def softplus_gap(kappa: float, g):
    """(1/kappa) * ln(1 + exp(-kappa |g|)): the amount f_kappa exceeds f."""
    return np.log1p(np.exp(-kappa * np.abs(g))) / kappa


def smoothed_payoff(spec: PayoffSpec, s, kappa: float):
    """Softplus-smoothed payoff f_kappa = (1/kappa) ln(1 + e^{kappa g}) and its gradient."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    g = payoff_g(spec, s)
    value = np.maximum(g, 0.0) + softplus_gap(kappa, g)
    # logistic(kappa g), written to avoid overflow for either sign
    z = np.exp(-kappa * np.abs(g))
    sig = np.where(g >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    gg = grad_g(spec, s)
    grad = gg * (sig[..., None] if np.ndim(sig) else sig)
    return value, grad


def default_kappa(T: float, N: int) -> float:
    return 2.0 / (T / N)


def discount(r: float, t) -> np.ndarray:
    return np.exp(-r * np.asarray(t, dtype=float))


LN2 = math.log(2.0)
