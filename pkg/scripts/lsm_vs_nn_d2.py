"""Two-asset max call: LSM price against the reference, and both stopping rules applied out of sample
to one shared set of fresh paths.

    python3 scripts/lsm_vs_nn_d2.py [--N 50] [--M 30000] [--shared 100000]
"""

import argparse
import json
import time

import numpy as np

from amerbsde.hedging import model_exercise_flags, stopping_times
from amerbsde.lsm import lsm_exercise_flags, lsm_fit
from amerbsde.market import MarketParams, PayoffSpec, payoff
from amerbsde.simulate import generate_paths
from amerbsde.training import TrainConfig, backward_sweep

REFERENCE = 9.6333
MP = MarketParams(d=2, r=0.05, delta=0.1, sigma=0.2, rho=0.3, T=1.0, K=100.0, s0=100.0)
SPEC = PayoffSpec("max_call", 100.0)


def compare(N: int, M: int, shared: int, lsm_paths: int = 100000, steps: int = 600, seed: int = 0) -> dict:
    t0 = time.perf_counter()
    model, surf, _ = backward_sweep(MP, SPEC, TrainConfig(N=N, J=4, M=M, C=1, steps=steps, seed=seed))
    train_s = time.perf_counter() - t0
    rule = lsm_fit(generate_paths(MP, N, lsm_paths, seed + 1), MP, SPEC, 4)
    paths = generate_paths(MP, N, shared, seed + 2)
    idx = np.arange(paths.M)
    cash = []
    for ex in (lsm_exercise_flags(rule, paths, MP, SPEC), model_exercise_flags(model, paths)):
        _, n_stop = stopping_times(ex, paths.dt)
        cash.append(np.exp(-MP.r * paths.dt * n_stop) * payoff(SPEC, paths.S[n_stop, idx]))
    sq = np.sqrt(paths.M)
    diff = cash[0] - cash[1]
    return {"N": N, "lsm_in_sample": rule.price, "lsm": float(cash[0].mean()), "lsm_se": float(cash[0].std(ddof=1) / sq),
            "nn": float(cash[1].mean()), "nn_se": float(cash[1].std(ddof=1) / sq), "Y0": float(surf.Y[0, 0]),
            "diff_se": float(diff.std(ddof=1) / sq), "train_s": train_s}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=50)
    ap.add_argument("--M", type=int, default=30000)
    ap.add_argument("--shared", type=int, default=100000)
    args = ap.parse_args()
    paths = generate_paths(MP, 100, 100000, 0)
    res = lsm_fit(paths, MP, SPEC, 4)
    print(json.dumps({"lsm_N100": res.price, "se": res.se, "err_pct": abs(res.price - REFERENCE) / REFERENCE * 100}))
    print(json.dumps(compare(args.N, args.M, args.shared)), flush=True)


if __name__ == "__main__":
    main()
