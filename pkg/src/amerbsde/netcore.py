"""Recursive per-timestep networks and their differentiation kernel.

Each timestep n owns a remainder network F(s; Omega^n) and the price
approximation is

    y^n(s) = alpha^n * (y^{n+eta}(s) + eta * dt * F(s; Omega^n)),   y^N = f_kappa,

with eta = ((N - n - 1) mod J) + 1. F is

    z0 = (s, g(s), y^{n+eta}(s))       feature concatenation
    x0 = bnorm(z0; beta0, gamma0, mu0, sigma0)
    x_l = relu(bnorm(W_l x_{l-1}; ...))       l = 1..L (no linear bias)
    F = omega . x_L + b

The BSDE loss needs y and the directional derivative sum_i a_i dy/ds_i with
a_i = sigma_i S_i dW_i. Both come from one primal+tangent forward sweep; the
parameter gradient is a reverse sweep over the (primal, tangent) pair.
Normalisation statistics are treated as constants in every derivative, so
the ReLU masks are the only nonlinearity and everything stays per-sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market import MarketParams, PayoffSpec, grad_g, payoff_g, smoothed_payoff

EPS_BN = 1e-6
TRAIN = "train"
INFER = "infer"


class NonFiniteLossError(FloatingPointError):
    def __init__(self, index: int):
        super().__init__(f"non-finite BSDE residual at batch sample {index}")
        self.index = index


class MissingNetError(KeyError):
    pass


def eta_for(n: int, N: int, J: int) -> int:
    return (N - n - 1) % J + 1


def parent_chain(n: int, N: int, J: int) -> list[int]:
    """Timesteps whose remainder nets are visited when evaluating y^n, nearest first."""
    chain = []
    while n < N:
        chain.append(n)
        n += eta_for(n, N, J)
    return chain


def param_layout(d: int, width: int, L: int) -> list[tuple[str, tuple[int, ...]]]:
    dims = [d + 2] + [width] * L
    out = [(f"W{l}", (dims[l], dims[l - 1])) for l in range(1, L + 1)]
    out += [(f"gamma{l}", (dims[l],)) for l in range(1, L + 1)]
    out += [(f"beta{l}", (dims[l],)) for l in range(1, L + 1)]
    out += [("gamma0", (dims[0],)), ("beta0", (dims[0],)),
            ("omega", (dims[L],)), ("b", (1,)), ("alpha", (1,))]
    return out


def buffer_layout(d: int, width: int, L: int) -> list[tuple[str, tuple[int, ...]]]:
    out = [("mu0", (d + 2,)), ("sig0", (d + 2,))]
    for l in range(1, L + 1):
        out += [(f"mu{l}", (width,)), (f"sig{l}", (width,))]
    return out


def _views(flat: np.ndarray, layout) -> dict[str, np.ndarray]:
    views, off = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        views[name] = flat[off:off + size].reshape(shape)
        off += size
    return views


def _size(layout) -> int:
    return sum(int(np.prod(s)) for _, s in layout)


class TimestepNet:
    """Parameters Omega^n of one remainder network plus its normalisation buffers."""

    def __init__(self, d: int, width: int | None = None, L: int = 7, n: int = 0, eta: int = 1,
                 theta: np.ndarray | None = None, buffers: np.ndarray | None = None):
        self.d, self.L = int(d), int(L)
        self.width = int(width) if width is not None else self.d + 5
        self.n, self.eta = int(n), int(eta)
        self.layout = param_layout(self.d, self.width, self.L)
        self.buf_layout = buffer_layout(self.d, self.width, self.L)
        self.theta = np.zeros(_size(self.layout)) if theta is None else np.array(theta, dtype=float)
        self.buffers = np.zeros(_size(self.buf_layout)) if buffers is None else np.array(buffers, dtype=float)
        if self.theta.shape != (_size(self.layout),) or self.buffers.shape != (_size(self.buf_layout),):
            raise ValueError("parameter vector does not match network dimensions")
        self.p = _views(self.theta, self.layout)
        self.buf = _views(self.buffers, self.buf_layout)
        if theta is None:
            self.p["alpha"][:] = 1.0
            self.p["gamma0"][:] = 1.0
            for l in range(1, self.L + 1):
                self.p[f"gamma{l}"][:] = 1.0
        if buffers is None:
            self.buf["sig0"][:] = 1.0
            for l in range(1, self.L + 1):
                self.buf[f"sig{l}"][:] = 1.0

    @property
    def parent_index(self) -> int:
        return self.n + self.eta

    @property
    def dims(self) -> list[int]:
        return [self.d + 2] + [self.width] * self.L

    @property
    def alpha(self) -> float:
        return float(self.p["alpha"][0])

    @property
    def n_params(self) -> int:
        return self.theta.size

    def W(self, l):
        return self.p[f"W{l}"]

    def init_uniform(self, rng: np.random.Generator) -> "TimestepNet":
        """Fresh initialisation: W and omega uniform in +-1/sqrt(fan_in + fan_out), shifts 0, scales 1."""
        dims = self.dims
        for l in range(1, self.L + 1):
            lim = 1.0 / np.sqrt(dims[l] + dims[l - 1])
            self.W(l)[:] = rng.uniform(-lim, lim, size=(dims[l], dims[l - 1]))
            self.p[f"gamma{l}"][:] = 1.0
            self.p[f"beta{l}"][:] = 0.0
        lim = 1.0 / np.sqrt(1 + dims[-1])
        self.p["omega"][:] = rng.uniform(-lim, lim, size=dims[-1])
        self.p["gamma0"][:] = 1.0
        self.p["beta0"][:] = 0.0
        self.p["b"][:] = 0.0
        self.p["alpha"][:] = 1.0
        return self

    def copy(self, n: int | None = None, eta: int | None = None) -> "TimestepNet":
        return TimestepNet(self.d, self.width, self.L,
                           self.n if n is None else n, self.eta if eta is None else eta,
                           self.theta.copy(), self.buffers.copy())

    def running_stats(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.buf[f"mu{l}"], self.buf[f"sig{l}"]) for l in range(1, self.L + 1)]

    def update_running(self, stats, rate: float) -> None:
        for (mu, sig), (bm, bs) in zip(self.running_stats(), stats):
            mu *= 1.0 - rate
            mu += rate * bm
            sig *= 1.0 - rate
            sig += rate * bs

    def set_input_stats(self, z0: np.ndarray) -> None:
        self.buf["mu0"][:] = z0.mean(axis=0)
        self.buf["sig0"][:] = np.sqrt(z0.var(axis=0) + EPS_BN)


@dataclass
class FeatureBatch:
    """Per-sample network inputs: state, payoff argument, frozen parent value and gradient."""

    s: np.ndarray
    g: np.ndarray
    y_parent: np.ndarray
    grad_y_parent: np.ndarray
    grad_g: np.ndarray

    @classmethod
    def build(cls, spec: PayoffSpec, s, y_parent, grad_y_parent) -> "FeatureBatch":
        s = np.asarray(s, dtype=float)
        return cls(s, payoff_g(spec, s), np.asarray(y_parent, dtype=float),
                   np.asarray(grad_y_parent, dtype=float), grad_g(spec, s))

    def __len__(self):
        return self.s.shape[0]

    def take(self, idx) -> "FeatureBatch":
        return FeatureBatch(self.s[idx], self.g[idx], self.y_parent[idx],
                            self.grad_y_parent[idx], self.grad_g[idx])

    def z0(self) -> np.ndarray:
        return np.column_stack([self.s, self.g, self.y_parent])

    def z0_tangent(self, a: np.ndarray) -> np.ndarray:
        return np.column_stack([a, np.einsum("mi,mi->m", self.grad_g, a),
                                np.einsum("mi,mi->m", self.grad_y_parent, a)])


@dataclass
class ForwardCache:
    z0: np.ndarray
    x: list = field(default_factory=list)       # x_0 .. x_L
    zhat: list = field(default_factory=list)    # normalised pre-activations, l = 1..L
    inv_sig: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    stats: list = field(default_factory=list)   # (mu, sigma) actually used, l = 1..L
    z0dot: np.ndarray | None = None
    xdot: list = field(default_factory=list)
    zdot: list = field(default_factory=list)


def remainder_forward(net: TimestepNet, batch: FeatureBatch, mode: str = INFER,
                      tangent: np.ndarray | None = None, stats=None):
    """Evaluate F on a batch.

    ``mode`` selects batch statistics (TRAIN) or stored running averages (INFER)
    for the hidden normalisation layers; ``stats`` overrides both. If
    ``tangent`` (shape (B, d)) is given, the directional derivative of F along
    it is also returned. Returns ``(F, Fdot, cache)``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if mode == TRAIN and stats is None and len(batch) < 2:
        raise ValueError("train-mode normalisation needs at least 2 samples")
    p = net.p
    z0 = batch.z0()
    inv0 = 1.0 / net.buf["sig0"]
    x = p["gamma0"] * (z0 - net.buf["mu0"]) * inv0 + p["beta0"]
    cache = ForwardCache(z0=z0, x=[x])
    xd = None
    if tangent is not None:
        cache.z0dot = batch.z0_tangent(tangent)
        xd = cache.z0dot * (p["gamma0"] * inv0)
        cache.xdot.append(xd)
    running = net.running_stats()
    for l in range(1, net.L + 1):
        W = net.W(l)
        z = x @ W.T
        if stats is not None:
            mu, sig = stats[l - 1]
        elif mode == TRAIN:
            mu, sig = z.mean(axis=0), np.sqrt(z.var(axis=0) + EPS_BN)
        else:
            mu, sig = running[l - 1]
        inv = 1.0 / sig
        zhat = (z - mu) * inv
        h = p[f"gamma{l}"] * zhat + p[f"beta{l}"]
        mask = h > 0
        x = np.where(mask, h, 0.0)
        cache.stats.append((np.array(mu), np.array(sig)))
        cache.zhat.append(zhat)
        cache.inv_sig.append(inv)
        cache.masks.append(mask)
        cache.x.append(x)
        if xd is not None:
            zd = xd @ W.T
            cache.zdot.append(zd)
            xd = np.where(mask, zd * (p[f"gamma{l}"] * inv), 0.0)
            cache.xdot.append(xd)
    F = x @ p["omega"] + p["b"][0]
    Fdot = xd @ p["omega"] if xd is not None else None
    return F, Fdot, cache


def input_gradient(net: TimestepNet, batch: FeatureBatch, cache: ForwardCache) -> np.ndarray:
    """dF/ds including the feature paths through g(s) and y_parent(s)."""
    p = net.p
    B = cache.z0.shape[0]
    gx = np.broadcast_to(p["omega"], (B, net.width))
    for l in range(net.L, 0, -1):
        gz = np.where(cache.masks[l - 1], gx, 0.0) * (p[f"gamma{l}"] * cache.inv_sig[l - 1])
        gx = gz @ net.W(l)
    gz0 = gx * (p["gamma0"] / net.buf["sig0"])
    d = net.d
    return gz0[:, :d] + batch.grad_g * gz0[:, d:d + 1] + batch.grad_y_parent * gz0[:, d + 1:d + 2]


def timestep_value_and_delta(net: TimestepNet, batch: FeatureBatch, dt: float, mode: str = INFER, stats=None):
    """y^n and grad y^n for one member given frozen parent features."""
    F, _, cache = remainder_forward(net, batch, mode, stats=stats)
    dF = input_gradient(net, batch, cache)
    a, h = net.alpha, net.eta * dt
    return a * (batch.y_parent + h * F), a * (batch.grad_y_parent + h * dF)


def bsde_residual_parts(mp: MarketParams, batch: FeatureBatch, dW: np.ndarray) -> np.ndarray:
    """a_i = sigma_i S_i dW_i, the direction of the delta term in the residual."""
    return mp.sigma * batch.s * dW


def loss_and_param_grads(net: TimestepNet, batch: FeatureBatch, dW: np.ndarray, v_next: np.ndarray,
                         mp: MarketParams, dt: float, mode: str = TRAIN, stats=None):
    """Sum of squared BSDE residuals and its gradient with respect to the flat parameter vector.

    R_m = (1 + r dt) y^n(S_m) + sum_i sigma_i S_mi dy^n/ds_i(S_m) dW_mi - v^{n+1}_m.
    Returns ``(loss, grads, residual, cache)``; ``cache.stats`` holds the
    normalisation statistics used (batch statistics in TRAIN mode).
    """
    p = net.p
    a = bsde_residual_parts(mp, batch, dW)
    F, Fd, cache = remainder_forward(net, batch, mode, tangent=a, stats=stats)
    alpha, h = net.alpha, net.eta * dt
    growth = 1.0 + mp.r * dt
    parent_dir = np.einsum("mi,mi->m", batch.grad_y_parent, a)
    inner = growth * (batch.y_parent + h * F) + parent_dir + h * Fd
    R = alpha * inner - v_next
    if not np.all(np.isfinite(R)):
        raise NonFiniteLossError(int(np.flatnonzero(~np.isfinite(R))[0]))
    loss = float(R @ R)

    grads = np.zeros_like(net.theta)
    g = _views(grads, net.layout)
    c = 2.0 * R
    g["alpha"][0] = c @ inner
    gF = c * (growth * alpha * h)
    gFd = c * (alpha * h)
    xL, xdL = cache.x[-1], cache.xdot[-1]
    g["omega"][:] = gF @ xL + gFd @ xdL
    g["b"][0] = gF.sum()
    gx = np.outer(gF, p["omega"])
    gxd = np.outer(gFd, p["omega"])
    for l in range(net.L, 0, -1):
        mask, inv = cache.masks[l - 1], cache.inv_sig[l - 1]
        gh = np.where(mask, gx, 0.0)
        ghd = np.where(mask, gxd, 0.0)
        zd = cache.zdot[l - 1]
        g[f"gamma{l}"][:] = np.einsum("mj,mj->j", gh, cache.zhat[l - 1]) + np.einsum("mj,mj->j", ghd, zd) * inv
        g[f"beta{l}"][:] = gh.sum(axis=0)
        scale = p[f"gamma{l}"] * inv
        gz, gzd = gh * scale, ghd * scale
        xp, xdp = cache.x[l - 1], cache.xdot[l - 1]
        g[f"W{l}"][:] = gz.T @ xp + gzd.T @ xdp
        W = net.W(l)
        gx, gxd = gz @ W, gzd @ W
    inv0 = 1.0 / net.buf["sig0"]
    g["gamma0"][:] = (np.einsum("mj,mj->j", gx, cache.z0 - net.buf["mu0"])
                      + np.einsum("mj,mj->j", gxd, cache.z0dot)) * inv0
    g["beta0"][:] = gx.sum(axis=0)
    return loss, grads, R, cache


def loss_only(net: TimestepNet, batch: FeatureBatch, dW, v_next, mp: MarketParams, dt: float,
              mode: str = INFER, stats=None) -> float:
    a = bsde_residual_parts(mp, batch, dW)
    F, Fd, _ = remainder_forward(net, batch, mode, tangent=a, stats=stats)
    h = net.eta * dt
    y = net.alpha * (batch.y_parent + h * F)
    u = net.alpha * (np.einsum("mi,mi->m", batch.grad_y_parent, a) + h * Fd)
    R = (1.0 + mp.r * dt) * y + u - v_next
    return float(R @ R)


class EnsembleModel:
    """C members, each holding one TimestepNet per timestep n = 0..N-1.

    Parents are ensemble averages: member c at timestep n computes
    alpha_c (ybar^{n+eta} + eta dt F_c), where ybar^{n+eta} is the mean over
    members of the parent timestep. The backward sweep stores exactly this
    mean in its price/delta arrays, so features seen in training and values
    produced here agree.
    """

    def __init__(self, mp: MarketParams, payoff: PayoffSpec, N: int, J: int, kappa: float,
                 C: int = 1, L: int = 7, width: int | None = None, seed: int = 0):
        self.mp, self.payoff = mp, payoff
        self.N, self.J, self.C, self.L = int(N), int(J), int(C), int(L)
        self.width = int(width) if width is not None else mp.d + 5
        self.kappa = float(kappa)
        self.seed = int(seed)
        self.members: list[dict[int, TimestepNet]] = [dict() for _ in range(self.C)]
        self.visits = 0  # remainder-level visits, for recursion-depth instrumentation

    @property
    def dt(self) -> float:
        return self.mp.T / self.N

    def eta(self, n: int) -> int:
        return eta_for(n, self.N, self.J)

    def net(self, member: int, n: int) -> TimestepNet:
        try:
            return self.members[member][n]
        except KeyError:
            raise MissingNetError(f"member {member} has no trained net for timestep {n}") from None

    def is_complete(self) -> bool:
        return all(set(m) == set(range(self.N)) for m in self.members)

    def level(self, n: int, s: np.ndarray, y_parent, grad_parent, member: int | None = None):
        """One recursion level: ensemble mean (or one member) of y^n given parent values."""
        batch = FeatureBatch.build(self.payoff, s, y_parent, grad_parent)
        members = range(self.C) if member is None else [member]
        ys, gs = [], []
        for c in members:
            y, gy = timestep_value_and_delta(self.net(c, n), batch, self.dt)
            ys.append(y)
            gs.append(gy)
        self.visits += 1
        return np.mean(ys, axis=0), np.mean(gs, axis=0)

    def value_and_delta(self, n: int, s, member: int | None = None):
        """y^n(s) and its input-gradient by walking parent links to the smoothed payoff."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        y, gy = smoothed_payoff(self.payoff, s, self.kappa)
        chain = parent_chain(n, self.N, self.J)
        for k, lvl in enumerate(reversed(chain)):
            last = k == len(chain) - 1
            y, gy = self.level(lvl, s, y, gy, member if last else None)
        return y, gy

    def value(self, n: int, s, member: int | None = None) -> np.ndarray:
        return self.value_and_delta(n, s, member)[0]
