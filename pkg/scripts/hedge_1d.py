"""Delta hedging a 1-D American call with the FD oracle as price/delta provider.

    python3 scripts/hedge_1d.py [--paths 50000] [--intervals 25 50 100]
"""

import argparse
import json

from amerbsde.fdoracle import solve_geometric
from amerbsde.hedging import FDProvider, hedge_simulate
from amerbsde.market import MarketParams, PayoffSpec
from amerbsde.simulate import generate_paths

MP = MarketParams(d=1, r=0.05, delta=0.1, sigma=0.2, rho=1.0, T=0.5, K=100.0, s0=100.0)
SPEC = PayoffSpec("geometric_call", 100.0)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=50000)
    ap.add_argument("--intervals", type=int, nargs="+", default=[25, 50, 100])
    ap.add_argument("--N", type=int, default=100)
    args = ap.parse_args()
    grid = solve_geometric(MP)
    paths = generate_paths(MP, args.N, args.paths, 1)
    for k in args.intervals:
        rep = hedge_simulate(FDProvider(grid, MP, args.N), paths, MP, SPEC, k)
        print(json.dumps({"intervals": k, "mean": rep.mean, "std": rep.std}))


if __name__ == "__main__":
    main()
