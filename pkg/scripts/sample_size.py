"""Sampled-LP prices and objective as the learning sample grows.

    python scripts/sample_size.py --out results/sample_size.csv
"""

import argparse
import logging

import numpy as np

from trafficshape.evaluation import sweep_sample_size
from trafficshape.traffic import GeneratorConfig, generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--m", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=20, help="random samples per size")
    ap.add_argument("--grid", default="25,50,100,200,400,600,800,1000,1200,1400,1600,1800,2000")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="sample_size.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    sessions, spec = generate_corpus(GeneratorConfig(n=args.n, m=args.m, seed=args.seed))
    grid = [int(x) for x in args.grid.split(",")]
    result = sweep_sample_size(sessions, spec, grid, seeds=list(range(args.seeds)), jobs=args.jobs)
    result.write_csv(args.out)
    ref = np.abs(result.extras["hindsight_prices"]).max()
    print("hindsight prices", dict(zip(spec.names, np.round(result.extras["hindsight_prices"], 4))))
    for size, dist, obj in zip(grid, result.median("price_distance"), result.median("objective_per_session")):
        print(f"n_hat={size:5d}  objective/session {obj:.4f}  median price distance {dist / ref:.3%}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
