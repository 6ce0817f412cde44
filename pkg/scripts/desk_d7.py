"""Desk-scale d = 7 geometric basket call: price, delta, f1 and a network-provider hedge.

    python3 scripts/desk_d7.py [--s0 90 100 110] [--M 30000] [--hedge-paths 5000]
"""

import argparse
import json
import time

import numpy as np

from amerbsde.fdoracle import interp_price_delta, reduce_geometric, solve_geometric
from amerbsde.hedging import NetProvider, delta0, hedge_simulate, price0, stopping_times
from amerbsde.market import MarketParams, PayoffSpec
from amerbsde.metrics import percent_error_delta, percent_error_point, spacetime_errors, surface_f1
from amerbsde.simulate import generate_paths
from amerbsde.training import TrainConfig, backward_sweep


def market(s0: float) -> MarketParams:
    return MarketParams(d=7, r=0.0, delta=0.02, sigma=0.25, rho=0.75, T=2.0, K=100.0, s0=s0)


def run(s0: float, M: int, steps: int, hedge_paths: int, seed: int = 0) -> dict:
    mp, spec = market(s0), PayoffSpec("geometric_call", 100.0)
    grid = solve_geometric(mp)
    _, _, s_eff = reduce_geometric(mp)
    u, du, _ = interp_price_delta(grid, s_eff, 0.0)
    fd_delta = float(du) * s_eff / (mp.d * mp.s0)
    cfg = TrainConfig(N=50, J=4, M=M, C=1, steps=steps, batch=400, seed=seed)
    t0 = time.perf_counter()
    model, surf, paths = backward_sweep(mp, spec, cfg)
    train_s = time.perf_counter() - t0
    _, n_stop = stopping_times(surf.exercised, paths.dt)
    p, se = price0(paths, n_stop, spec, mp.r)
    dl, _ = delta0(paths, n_stop, spec, mp.r, mp.s0)
    out = {
        "s0": s0, "fd_price": float(u), "price0": p, "price0_se": se, "Y0": float(surf.Y[0, 0]),
        "price_err_pct": percent_error_point(p, float(u)),
        "delta_err_pct": percent_error_delta(dl, fd_delta),
        "Z0_err_pct": percent_error_delta(surf.Z[0, 0], fd_delta),
        "f1": surface_f1(surf, grid, paths),
        "spacetime": spacetime_errors(surf, grid, paths, mp).to_dict(),
        "train_s": train_s,
    }
    if hedge_paths:
        hp = generate_paths(mp, cfg.N, hedge_paths, seed, stream=3)
        rep = hedge_simulate(NetProvider(model), hp, mp, spec, cfg.N)
        out["hedge_mean"], out["hedge_std"] = rep.mean, rep.std
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--s0", type=float, nargs="+", default=[90.0, 100.0, 110.0])
    ap.add_argument("--M", type=int, default=30000)
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--hedge-paths", type=int, default=5000)
    args = ap.parse_args()
    for s0 in args.s0:
        print(json.dumps(run(s0, args.M, args.steps, args.hedge_paths)), flush=True)


if __name__ == "__main__":
    main()
