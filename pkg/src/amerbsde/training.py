"""Backward sweep: train one network per timestep and ensemble member, from expiry to t = 0."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .market import MarketParams, PayoffSpec, payoff, smoothed_payoff
from .netcore import (INFER, TRAIN, EnsembleModel, FeatureBatch, TimestepNet,
                      loss_and_param_grads, remainder_forward)
from .simulate import PathCube, generate_paths, philox

log = logging.getLogger(__name__)

INIT_STREAM = 1
SHUFFLE_STREAM = 2
EVAL_CHUNK = 65536


@dataclass
class TrainConfig:
    N: int = 100
    J: int = 4
    M: int = 240000
    C: int = 3
    steps: int = 600
    batch: int = 400
    theta: float = 0.5
    L: int = 7
    width: int | None = None  # None -> d + 5
    kappa: float | None = None  # None -> 2 / dt
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch > self.M:
            raise ValueError("batch must not exceed M")
        if self.N < 1 or self.J < 1 or self.C < 1 or self.L < 1:
            raise ValueError("N, J, C and L must be >= 1")
        if self.J > self.N:
            raise ValueError("J must not exceed N")

    def kappa_for(self, T: float) -> float:
        return self.kappa if self.kappa is not None else 2.0 / (T / self.N)

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(s: int) -> float:
    return 0.01 * 0.001 ** max(min((s - 150) / 350, 1.0), 0.0)


def bn_rate_schedule(s: int) -> float:
    return (0.01 ** max(min(s / 350, 1.0), 0.0) - 0.01) / 0.99


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, beta1, beta2, eps)


def clip_by_global_norm(grads: np.ndarray, clip_norm: float) -> np.ndarray:
    norm = float(np.sqrt(grads @ grads))
    if clip_norm is not None and norm > clip_norm:
        return grads * (clip_norm / norm)
    return grads


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              clip_norm: float | None = None) -> None:
    """In-place Adam update with bias correction, after global-norm clipping."""
    if params.shape != grads.shape:
        raise ValueError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient passed to Adam")
    g = clip_by_global_norm(grads, clip_norm)
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    params -= lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class ValueSurface:
    """Prices Y[n, m], deltas Z[n, m, i], exercise flags and BSDE targets v[n, m]."""

    Y: np.ndarray
    Z: np.ndarray
    exercised: np.ndarray
    v: np.ndarray

    @property
    def N(self) -> int:
        return self.Y.shape[0] - 1

    def dump_csv(self, path) -> None:
        N1, M = self.Y.shape
        d = self.Z.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "m", "Y"] + [f"Z{i + 1}" for i in range(d)] + ["exercised"])
            for n in range(N1):
                for m in range(M):
                    w.writerow([n, m, repr(float(self.Y[n, m]))]
                               + [repr(float(z)) for z in self.Z[n, m]] + [int(self.exercised[n, m])])

    @classmethod
    def load_csv(cls, path) -> "ValueSurface":
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = raw[:, 0].astype(int)
        m = raw[:, 1].astype(int)
        N1, M = n.max() + 1, m.max() + 1
        d = raw.shape[1] - 4
        Y = np.zeros((N1, M))
        Z = np.zeros((N1, M, d))
        ex = np.zeros((N1, M), dtype=bool)
        Y[n, m] = raw[:, 2]
        Z[n, m] = raw[:, 3:3 + d]
        ex[n, m] = raw[:, -1] > 0.5
        return cls(Y, Z, ex, np.full((N1, M), np.nan))


def make_v_targets(Y_next, exercised_next, f_next, v_after, theta: float, r: float, dt: float) -> np.ndarray:
    """Blended target at timestep n+1.

    Continued samples: theta * Y[n+1] + (1 - theta) * exp(-r dt) * v[n+2];
    exercised samples: f(S^{n+1}).
    """
    blended = theta * Y_next + (1.0 - theta) * math.exp(-r * dt) * v_after
    return np.where(exercised_next, f_next, blended)


@dataclass
class TimestepLog:
    rows: list = field(default_factory=list)  # (member, n, step, loss, lr)

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["member", "n", "step", "loss", "lr"])
            w.writerows(self.rows)


class TrainingError(RuntimeError):
    pass


def _degenerate(s: np.ndarray) -> bool:
    return bool(np.all(np.ptp(s, axis=0) == 0.0))


def init_net(model: EnsembleModel, member: int, n: int) -> TimestepNet:
    """Weight reuse from the member's most recently trained net (n+1); fresh init at n = N-1."""
    eta = model.eta(n)
    if n + 1 < model.N:
        return model.net(member, n + 1).copy(n=n, eta=eta)
    net = TimestepNet(model.mp.d, model.width, model.L, n=n, eta=eta)
    return net.init_uniform(philox(model.seed, INIT_STREAM, member))


def train_timestep(model: EnsembleModel, member: int, n: int, S_n: np.ndarray, dW_n: np.ndarray,
                   y_parent: np.ndarray, grad_parent: np.ndarray, v_next: np.ndarray,
                   cfg: TrainConfig, log_rows: list | None = None) -> TimestepNet:
    """Minimise the BSDE least-squares residual at timestep n for one member.

    Inputs are that member's samples: states S^n, increments dW^n, frozen
    parent features and targets v^{n+1}.
    """
    mp = model.mp
    dt = model.dt
    batch_all = FeatureBatch.build(model.payoff, S_n, y_parent, grad_parent)
    net = init_net(model, member, n)
    M = len(batch_all)
    mode = TRAIN
    if _degenerate(S_n):
        # All samples sit on one point (t = 0): batch statistics are zero-variance,
        # so keep the normalisation inherited from the reused net and train in INFER mode.
        mode = INFER
        if n + 1 >= model.N:
            # no parent net to inherit from (N = 1): centre on the point, unit scale
            net.buf["mu0"][:] = batch_all.z0()[0]
            net.buf["sig0"][:] = 1.0
            _, _, cache = remainder_forward(net, batch_all.take([0, 0]), TRAIN)
            for l, (mu, _) in enumerate(cache.stats, start=1):
                net.buf[f"mu{l}"][:] = mu
                net.buf[f"sig{l}"][:] = 1.0
    else:
        net.set_input_stats(batch_all.z0())
    rng = philox(model.seed, SHUFFLE_STREAM, member * (model.N + 1) + n)
    state = AdamState.zeros(net.n_params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    order = rng.permutation(M)
    pos = 0
    bsz = min(cfg.batch, M)
    for step in range(cfg.steps):
        if pos + bsz > M:
            order = rng.permutation(M)
            pos = 0
        idx = order[pos:pos + bsz]
        pos += bsz
        lr = lr_schedule(step)
        try:
            loss, grads, _, cache = loss_and_param_grads(
                net, batch_all.take(idx), dW_n[idx], v_next[idx], mp, dt, mode=mode)
            if mode == TRAIN:
                net.update_running(cache.stats, bn_rate_schedule(step))
            adam_step(net.theta, grads, state, lr, cfg.clip_norm)
        except (FloatingPointError, ValueError) as exc:
            raise TrainingError(f"member {member}, timestep {n}, step {step}: {exc}") from exc
        if log_rows is not None:
            log_rows.append((member, n, step, loss, lr))
    return net


def terminal_surface(paths: PathCube, spec: PayoffSpec, kappa: float) -> ValueSurface:
    N1, M, d = paths.S.shape
    Y = np.empty((N1, M))
    Z = np.empty((N1, M, d))
    for nu in range(N1):
        Y[nu], Z[nu] = smoothed_payoff(spec, paths.S[nu], kappa)
    ex = np.zeros((N1, M), dtype=bool)
    v = np.full((N1, M), np.nan)
    v[-1] = payoff(spec, paths.S[-1])
    return ValueSurface(Y, Z, ex, v)


def ensemble_level(model: EnsembleModel, n: int, S: np.ndarray, Y: np.ndarray, Z: np.ndarray):
    """Overwrite (Y, Z) at one time slice with the ensemble y^n, using them as parent features."""
    out_y = np.empty_like(Y)
    out_z = np.empty_like(Z)
    for lo in range(0, S.shape[0], EVAL_CHUNK):
        sl = slice(lo, lo + EVAL_CHUNK)
        out_y[sl], out_z[sl] = model.level(n, S[sl], Y[sl], Z[sl])
    return out_y, out_z


def backward_sweep(mp: MarketParams, spec: PayoffSpec, cfg: TrainConfig, paths: PathCube | None = None,
                   workers: int = 1, log_rows: list | None = None):
    """Train the full network stack and fill the value surface on all C*M paths.

    Returns ``(model, surface, paths)``. Member c trains on paths
    [c*M, (c+1)*M); all evaluations run on every path.
    """
    N, J, C, M = cfg.N, cfg.J, cfg.C, cfg.M
    if paths is None:
        paths = generate_paths(mp, N, C * M, cfg.seed)
    if paths.N != N or paths.M != C * M:
        raise ValueError("path cube does not match (N, C*M)")
    dt = mp.T / N
    kappa = cfg.kappa_for(mp.T)
    model = EnsembleModel(mp, spec, N, J, kappa, C=C, L=cfg.L, width=cfg.width, seed=cfg.seed)
    surf = terminal_surface(paths, spec, kappa)
    S, dW = paths.S, paths.dW
    disc = math.exp(-mp.r * dt)
    surf.exercised[N] = surf.Y[N] <= surf.v[N]

    def train_member(c, n):
        sl = slice(c * M, (c + 1) * M)
        rows = [] if log_rows is not None else None
        net = train_timestep(model, c, n, S[n, sl], dW[n, sl], surf.Y[n, sl], surf.Z[n, sl],
                             surf.v[n + 1, sl], cfg, rows)
        return net, rows

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 and C > 1 else None
    try:
        for n in range(N - 1, -1, -1):
            if pool is None:
                results = [train_member(c, n) for c in range(C)]
            else:
                results = list(pool.map(lambda c: train_member(c, n), range(C)))
            # barrier: every member finished timestep n
            for c, (net, rows) in enumerate(results):
                model.members[c][n] = net
                if rows is not None:
                    log_rows.extend(rows)
            slices = range(n + 1) if (N - n) % J == 0 else [n]
            for nu in slices:
                surf.Y[nu], surf.Z[nu] = ensemble_level(model, n, S[nu], surf.Y[nu], surf.Z[nu])
            f_n = payoff(spec, S[n])
            surf.exercised[n] = surf.Y[n] <= f_n
            surf.v[n] = np.where(surf.exercised[n], f_n,
                                 cfg.theta * surf.Y[n] + (1.0 - cfg.theta) * disc * surf.v[n + 1])
            log.debug("timestep %d done, exercised fraction %.4f", n, surf.exercised[n].mean())
    finally:
        if pool is not None:
            pool.shutdown()
    for nu in range(N + 1):
        surf.Y[nu] = np.maximum(surf.Y[nu], payoff(spec, S[nu]))
    return model, surf, paths


def replay_targets(model: EnsembleModel, sub: PathCube, n0: int, theta: float) -> dict:
    """Re-run the exercise/target recursion of a trained model on fresh paths starting at timestep n0.

    ``sub.S[k]`` is the state at timestep n0 + k. Returns the raw (unclamped)
    prices, exercise flags and targets on the sub-cube, indexed by k.
    """
    N = model.N
    K = N - n0
    if sub.N != K:
        raise ValueError("sub-cube length must equal N - n0")
    spec, r, dt = model.payoff, model.mp.r, model.dt
    Y = np.full((K + 1, sub.M), np.nan)
    ex = np.zeros((K + 1, sub.M), dtype=bool)
    v = np.full((K + 1, sub.M), np.nan)
    v[K] = payoff(spec, sub.S[K])
    for k in range(K - 1, 0, -1):
        n = n0 + k
        Y[k] = model.value(n, sub.S[k])
        f_k = payoff(spec, sub.S[k])
        ex[k] = Y[k] <= f_k
        v[k] = make_v_targets(Y[k], ex[k], f_k, v[k + 1], theta, r, dt)
    return {"Y": Y, "exercised": ex, "v": v}
