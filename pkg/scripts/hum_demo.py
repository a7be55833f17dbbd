"""Recover a leader control for a self-generated reachable target.

A known leader drives the Nash pipeline to a terminal pair; the dual
minimisation then has to find a leader hitting that pair again, exactly
(conjugate residual) or within balls of relative radius ``--rho``
(accelerated proximal gradient).

Usage: python3 scripts/hum_demo.py [--ny 32] [--T 7.5] [--rho 0.05]
"""

import argparse
import time

import numpy as np

from stackwave.domain import Discretization, Grid, ProblemConfig, min_control_time
from stackwave.leader import LeaderOperator, TargetSpec, duality_report, solve_base_pair, solve_leader
from stackwave.nash import solve_optimality_system
from stackwave.wavesolver import terminal_pair


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=float, default=0.3)
    ap.add_argument("--T", type=float, default=7.5)
    ap.add_argument("--sigma", type=float, default=10.0)
    ap.add_argument("--ny", type=int, default=32)
    ap.add_argument("--rho", type=float, default=0.0)
    args = ap.parse_args()

    cfg = ProblemConfig(k=args.k, T=args.T, sigma=args.sigma)
    disc = Discretization(cfg, Grid.for_config(cfg, args.ny))
    print(f"grid {disc.ny}x{disc.nt}, T={args.T} (minimum control time {min_control_time(args.k):.4f})")

    wbar = disc.mask1 * np.sin(2 * np.pi * disc.t / args.T) * np.exp(-disc.t)
    v2 = np.tile(0.3 * np.sin(np.pi * disc.y), (disc.nt + 1, 1))
    v, _ = solve_optimality_system(disc, wbar, v2, tol=1e-12)
    tp = terminal_pair(disc, v)
    pos, vel = tp.position.copy(), tp.velocity.copy()
    pos[[0, -1]] = vel[[0, -1]] = 0.0
    n0, n1 = disc.norm(pos, "L2"), disc.norm(vel, "HM1")
    target = TargetSpec(pos, vel, rho0=args.rho * n0, rho1=args.rho * n1)

    op = LeaderOperator(disc)
    base = solve_base_pair(disc, v2)
    mode = "prox" if args.rho > 0 else "cg"
    t0 = time.perf_counter()
    sol = solve_leader(disc, target, v2=v2, mode=mode, tol=1e-9 if args.rho else 1e-3,
                       max_iter=100000 if args.rho else 200, op=op, base=base)
    elapsed = time.perf_counter() - t0
    rep = duality_report(disc, op, sol, target)
    print(f"{mode}: {sol.iterations} iterations in {elapsed:.1f} s, coupling {op.coupling}")
    print(f"relative residuals: {sol.residual_l2 / n0:.3e} (L2), {sol.residual_hm1 / n1:.3e} (H-1)")
    print(f"J(w1*) = {rep['primal']:.6e}, -Theta(f*) = {rep['dual']:.6e}, gap {rep['relative_gap']:.2e}")
    print(f"J(generating leader) = {0.5 * disc.sigma_inner(wbar, wbar, 'sigma1'):.6e}")


if __name__ == "__main__":
    main()
