"""Independent synthetic streams: violation frequency and competitive ratio.

    python scripts/replicate_trials.py --nu feasibility --trials 500
"""

import argparse
import logging

import numpy as np

from trafficshape.evaluation import replicate, resolve_nu
from trafficshape.traffic import GeneratorConfig, calibrate_targets


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--epsilon", type=float, default=0.2)
    ap.add_argument("--nu", default="feasibility", help="number, 'feasibility' or 'objective'")
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--target-fraction", type=float, default=0.6)
    ap.add_argument("--target-lift", type=float, default=0.0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    cfg = GeneratorConfig(m=args.m, n=args.n, target_fraction=args.target_fraction,
                          target_lift=args.target_lift, calibration_seed=9001)
    nu = resolve_nu(args.nu if args.nu in ("feasibility", "objective") else float(args.nu), args.epsilon)
    reps = replicate(cfg, calibrate_targets(cfg), args.epsilon, nu, seeds=range(1, args.trials + 1),
                     jobs=args.jobs)
    cr = np.array([r.competitive_ratio for r in reps])
    serving = np.array([min(r.delivery_ratio_serving_only) for r in reps])
    credited = np.array([min(r.delivery_ratio_with_learning) for r in reps])
    print(f"eps={args.epsilon} nu={nu:.3f} trials={args.trials}")
    print(f"competitive ratio: median {np.median(cr):.4f}, IQR [{np.percentile(cr, 25):.4f}, "
          f"{np.percentile(cr, 75):.4f}]")
    print(f"any target missed (serving only): {np.mean(serving < 1):.3f}")
    print(f"any target missed (with learning): {np.mean(credited < 1):.3f}")
    print(f"worst delivery ratio: serving only {serving.min():.3f}, with learning {credited.min():.3f}")


if __name__ == "__main__":
    main()
