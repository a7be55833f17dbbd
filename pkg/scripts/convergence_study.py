"""Grid refinement study of the forward solver on a manufactured solution.

Usage: python3 scripts/convergence_study.py [--k 0.3] [--levels 4] [--out study.csv]
"""

import argparse
import csv

import numpy as np
import sympy as sp

from stackwave.domain import Discretization, Grid, ProblemConfig
from stackwave.wavesolver import solve_forward

y, t = sp.symbols("y t")


def manufactured(k):
    u = sp.sin(2 * t + 1) * sp.sin(sp.pi * y) + y * sp.cos(t)
    a = (1 - k**2 * y**2) / (1 + k * t) ** 2
    c = -2 * k * y / (1 + k * t)
    f = sp.diff(u, t, 2) - sp.diff(a * sp.diff(u, y), y) + c * sp.diff(u, y, t)
    return (sp.lambdify((y, t), e, "numpy") for e in (f, u, sp.diff(u, t)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=float, default=0.3)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--out", default="")
    args = ap.parse_args()

    f, u, ut = manufactured(args.k)
    rows = []
    prev = None
    for level in range(args.levels):
        ny = 16 * 2**level
        disc = Discretization(ProblemConfig(k=args.k, T=args.T), Grid(ny, 4 * ny))
        Y, T = np.meshgrid(disc.y, disc.t)
        exact = u(Y, T) * np.ones_like(Y)
        src = f(Y, T) * np.ones_like(Y)
        V = solve_forward(disc, exact[:, -1], src, exact[0], ut(disc.y, 0 * disc.y) * np.ones_like(disc.y))
        err = float(np.max(np.abs(V.values - exact)))
        order = float(np.log2(prev / err)) if prev else float("nan")
        rows.append({"ny": ny, "nt": disc.nt, "max_error": err, "order": order})
        print(f"ny={ny:4d} nt={disc.nt:5d} error={err:.3e} order={order:.3f}")
        prev = err
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
