"""Competitive, online and delivery ratios against the learning fraction.

    python scripts/sweep_epsilon.py --out results/epsilon.csv --trials 20
"""

import argparse
import logging

import numpy as np

from trafficshape.evaluation import sweep_epsilon
from trafficshape.traffic import GeneratorConfig, generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--m", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=10, help="random stream orders per epsilon")
    ap.add_argument("--nu", default="1.05", help="number, 'feasibility' or 'objective'")
    ap.add_argument("--grid", default="0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="epsilon.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    sessions, spec = generate_corpus(GeneratorConfig(n=args.n, m=args.m, seed=args.seed))
    nu = args.nu if args.nu in ("feasibility", "objective") else float(args.nu)
    grid = [float(x) for x in args.grid.split(",")]
    result = sweep_epsilon(sessions, spec, grid, nu_rule=nu, seeds=list(range(args.trials)),
                           matcher="auto", jobs=args.jobs)
    result.write_csv(args.out)
    q = result.quartiles("competitive_ratio")
    for eps, med, (lo, hi) in zip(grid, result.median("competitive_ratio"), q):
        print(f"eps={eps:.2f}  competitive ratio {med:.4f}  [{lo:.4f}, {hi:.4f}]")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
