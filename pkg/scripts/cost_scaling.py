"""Training wall time against dimension, with a quadratic fit, plus the LSM memory prediction.

    python3 scripts/cost_scaling.py [--dims 2 4 8 16] [--repeats 3]
"""

import argparse
import json

from amerbsde.cost import predicted_memory, time_training


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--repeats", type=int, default=2)
    args = ap.parse_args()
    print(json.dumps(predicted_memory(100, 720000, 100, 4)))
    print(json.dumps(time_training(args.dims, repeats=args.repeats).to_dict()))


if __name__ == "__main__":
    main()
