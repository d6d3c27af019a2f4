"""Fitted exponent b of g(B*) ~ a L^-b + c as the region width grows.

    python scripts/crossover.py [--out crossover.csv]
"""

import argparse
import csv
import sys

import numpy as np

from critsense.global_metric import SensingRegion
from critsense.probe_optimizer import fit_scaling, minimize_g
from critsense.spin_lattice import ProbeConfig

WIDTHS = (0.002, 0.005, 0.01, 0.02, 0.05, 0.07, 0.1, 0.2, 0.5)
SIZES = (64, 128, 256, 512, 1024)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="-")
    args = p.parse_args(argv)
    rows = []
    for dh in WIDTHS:
        g = [minimize_g(ProbeConfig(L), SensingRegion.single(0.0, dh)).g_star for L in SIZES]
        fit = fit_scaling(np.array(SIZES), np.array(g))
        rows.append((dh, fit.a, fit.b, fit.c, fit.residual))
        print(f"dh_z={dh:<6} b={fit.b:.3f}", file=sys.stderr)
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh)
    w.writerow(("dh_z", "a", "b", "c", "residual"))
    w.writerows([[f"{x:.12g}" for x in r] for r in rows])
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
