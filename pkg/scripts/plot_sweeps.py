"""Plot the tidy sweep CSVs (needs matplotlib, which the package does not depend on).

    python scripts/plot_sweeps.py results/epsilon.csv --metric competitive_ratio
"""

import argparse
import csv
from collections import defaultdict

import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("--metric", action="append", help="metric to plot (repeatable; default all)")
    ap.add_argument("--out", help="image path; shows a window when omitted")
    args = ap.parse_args()
    import matplotlib.pyplot as plt

    series = defaultdict(lambda: defaultdict(list))
    with open(args.csv) as fh:
        for row in csv.DictReader(fh):
            series[row["metric"]][float(row["axis_value"])].append(float(row["value"]))
            axis = row["axis"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for metric in args.metric or sorted(series):
        xs = sorted(series[metric])
        vals = [np.array(series[metric][x]) for x in xs]
        med = [np.nanmedian(v) for v in vals]
        lo = [np.nanpercentile(v, 25) for v in vals]
        hi = [np.nanpercentile(v, 75) for v in vals]
        ax.plot(xs, med, marker="o", label=metric)
        ax.fill_between(xs, lo, hi, alpha=0.2)
    ax.set_xlabel(axis)
    ax.legend(fontsize=7)
    fig.tight_layout()
    if args.out:
        fig.savefig(args.out, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
