"""Hindsight dwell-time per session as one target is scaled by theta.

    python scripts/tradeoff.py --constraint publisher_a --out results/tradeoff.csv
"""

import argparse
import logging

from trafficshape.evaluation import sweep_tradeoff
from trafficshape.traffic import GeneratorConfig, generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--m", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--constraint", default="publisher_a")
    ap.add_argument("--grid", default="0,0.25,0.5,0.75,1,1.25,1.5,1.75,2,2.5")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="tradeoff.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    sessions, spec = generate_corpus(GeneratorConfig(n=args.n, m=args.m, seed=args.seed))
    grid = [float(x) for x in args.grid.split(",")]
    result = sweep_tradeoff(sessions, spec, grid, constraint=args.constraint, jobs=args.jobs)
    result.write_csv(args.out)
    print(f"theta_max = {result.extras['theta_max']:.3f}")
    for p in result.points:
        flag = "  infeasible" if p.metrics["infeasible"] else ""
        print(f"theta={p.axis_value:5.2f}  objective/session {p.metrics['objective_per_session']:.4f}{flag}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
