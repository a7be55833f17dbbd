"""Invariant checks shared by the ``validate`` / ``oracle-check`` commands and the tests.

Each check returns a scalar defect; :func:`run_all` compares it with a
threshold.  All randomness comes from the seeded generator passed in.
"""

from __future__ import annotations

import math

import numpy as np

from .domain import Discretization, Grid, ProblemConfig, min_control_time
from .leader import DualVariable, LeaderOperator, TargetSpec, eval_Theta, solve_base_pair, solve_leader
from .nash import FollowerProblem, eval_J2, grad_J2_w2, solve_follower
from .oracle import assemble, dense_A, dense_follower, dense_leader_kkt, dense_theta, transpose_defect
from .wavesolver import (
    boundary_sensitivity,
    flux_trace,
    solve_backward_adjoint,
    solve_forward,
    terminal_pair,
)


def _interior_random(rng, n):
    f = rng.standard_normal(n)
    f[0] = f[-1] = 0.0
    return f


def random_dual(disc, rng) -> DualVariable:
    return DualVariable(_interior_random(rng, disc.ny + 1), _interior_random(rng, disc.ny + 1))


def dot_product_defect(disc: Discretization, rng) -> float:
    """Relative defect of the forward/backward duality identity on one random instance."""
    nt, ny = disc.nt, disc.ny
    b = rng.standard_normal(nt + 1)
    F = rng.standard_normal((nt + 1, ny + 1))
    F[-1] = 0.0
    F[:, [0, -1]] = 0.0
    v0 = _interior_random(rng, ny + 1)
    v1 = rng.standard_normal(ny + 1)
    v1[0] = 0.0
    w = rng.standard_normal((nt + 1, ny + 1))
    fT = _interior_random(rng, ny + 1)
    gT = _interior_random(rng, ny + 1)

    V = solve_forward(disc, b, F, v0, v1)
    tp = terminal_pair(disc, V)
    lhs = disc.spacetime_inner(V, w) + disc.l2_inner(tp.velocity, fT) - disc.l2_inner(tp.position, gT)
    p = solve_backward_adjoint(disc, w, fT, gT)
    pv = p.values.copy()
    pv[-1] = 0.0
    rhs = (
        disc.spacetime_inner(F, pv)
        + float(np.dot(boundary_sensitivity(disc, p), b))
        + float(np.dot(p.v0_sensitivity, v0))
        + float(np.dot(p.v1_sensitivity, v1))
    )
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def follower_gradient_defect(disc: Discretization, rng, eps=1e-4) -> float:
    w1 = rng.standard_normal(disc.nt + 1)
    w2 = rng.standard_normal(disc.nt + 1)
    v2 = rng.standard_normal((disc.nt + 1, disc.ny + 1))
    h = disc.mask2 * rng.standard_normal(disc.nt + 1)
    g = grad_J2_w2(disc, w1, w2, v2)
    exact = disc.sigma_inner(g, h, "sigma2")
    fd = (eval_J2(disc, w1, w2 + eps * h, v2) - eval_J2(disc, w1, w2 - eps * h, v2)) / (2 * eps)
    return abs(fd - exact) / max(abs(exact), 1e-300)


def follower_formula_defect(disc: Discretization, rng) -> float:
    """``|sigma w2 - trace(p)|`` on Sigma_2 at the computed follower, relative to the trace."""
    w1 = rng.standard_normal(disc.nt + 1)
    v2 = rng.standard_normal((disc.nt + 1, disc.ny + 1))
    sol = solve_follower(disc, FollowerProblem(w1, v2, tol=1e-12))
    theta = flux_trace(disc, sol.p).values
    res = disc.sigma_norm(disc.config.sigma * sol.w2.values - theta, "sigma2")
    return res / max(disc.sigma_norm(theta, "sigma2"), 1e-300)


def pairing_defect(op: LeaderOperator, rng) -> float:
    """``<<A w, f>> - (A* f, w)`` for one random pair, relative."""
    disc = op.disc
    w = disc.mask1 * rng.standard_normal(disc.nt + 1)
    f = random_dual(disc, rng)
    xi0, xi1, _ = op.apply_A(w)
    lhs = disc.pairing(xi0, f.f0) + disc.l2_inner(xi1, f.f1)
    ws, _, _ = op.apply_Astar(f)
    rhs = disc.sigma_inner(ws, w, "sigma1")
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def green_identity_defect(op: LeaderOperator, rng) -> float:
    """``(alpha g, psi)_Q`` against ``-(1/sigma) (trace q, trace phi)_{Sigma_2}``."""
    disc = op.disc
    w = disc.mask1 * rng.standard_normal(disc.nt + 1)
    f = random_dual(disc, rng)
    sol = solve_follower(disc, FollowerProblem(w, None, tol=1e-12))
    _, phi, psi = op.apply_Astar(f)
    lhs = disc.spacetime_inner(disc.alpha_t[:, None] * sol.v.values, psi.values)
    rhs = -disc.sigma_inner(flux_trace(disc, sol.p), flux_trace(disc, phi), "sigma2") / disc.config.sigma
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def lambda_symmetry_defect(op: LeaderOperator, rng):
    """Returns ``(relative asymmetry, smallest normalised (Lambda x, x))``."""
    n = 2 * op.m
    x, z = rng.standard_normal(n), rng.standard_normal(n)
    lx, lz = op.apply_Lambda(x), op.apply_Lambda(z)
    a, b = op.inner(lx, z), op.inner(x, lz)
    scale = math.sqrt(op.inner(lx, lx) * op.inner(z, z))
    quad = min(op.inner(lx, x) / op.inner(x, x), op.inner(lz, z) / op.inner(z, z))
    return abs(a - b) / scale, quad


def pairing_forms_defect(disc, rng) -> float:
    u = _interior_random(rng, disc.ny + 1)
    h = _interior_random(rng, disc.ny + 1)
    a, b = disc.pairing(u, h), disc.pairing(u, h, form="green")
    return abs(a - b) / max(abs(a), 1e-300)


def oracle_horizon(k, ny, nt, fraction=0.95):
    """Longest horizon admitted at unit CFL number on a tiny grid."""
    return fraction * nt / ny / (1 + k)


def oracle_cases(ks=(0.0, 0.3, 0.6), sigmas=(1.0, 10.0), grids=((6, 16), (8, 24))):
    for k in ks:
        for sigma in sigmas:
            for ny, nt in grids:
                yield k, sigma, ny, nt


def oracle_agreement(k, sigma, ny, nt, seed=0, leader=True):
    """Dense-vs-iterative defects for one tiny configuration."""
    cfg = ProblemConfig(k=k, T=oracle_horizon(k, ny, nt), sigma=sigma)
    ds = assemble(cfg, Grid(ny, nt, cfl=1.0))
    disc = ds.disc
    rng = np.random.default_rng(seed)
    out = {"transpose": transpose_defect(ds)}

    w1 = rng.standard_normal(nt + 1)
    v2 = rng.standard_normal((nt + 1, ny + 1))
    wd = dense_follower(ds, w1, v2)
    wi = solve_follower(disc, FollowerProblem(w1, v2, tol=1e-13)).w2.values
    out["follower"] = float(np.max(np.abs(wd - wi)) / np.max(np.abs(wd)))

    op = LeaderOperator(disc, coupling="krylov", tol=1e-13)
    A = dense_A(ds)
    s1 = np.flatnonzero(disc.mask1)
    worst = 0.0
    for col in range(0, A.shape[1], max(1, A.shape[1] // 6)):
        e = np.zeros(nt + 1)
        e[s1[col]] = 1.0
        xi0, xi1, _ = op.apply_A(e)
        got = np.concatenate([xi0[1:-1], xi1[1:-1]])
        worst = max(worst, float(np.max(np.abs(got - A[:, col])) / np.max(np.abs(A))))
    out["A_columns"] = worst

    target = TargetSpec(np.sin(np.pi * disc.y), np.zeros(ny + 1))
    base = solve_base_pair(disc, v2)
    f = random_dual(disc, rng)
    t_it = eval_Theta(op, f, target, base)
    t_de = dense_theta(ds, f, target, v2)
    out["theta"] = abs(t_it - t_de) / abs(t_de)

    if leader:
        wk, fk = dense_leader_kkt(ds, target, v2)
        sol = solve_leader(disc, target, v2=v2, mode="cg", tol=1e-11, max_iter=500, op=op, base=base)
        out["leader_w1"] = float(np.max(np.abs(sol.w1_star.values - wk)) / np.max(np.abs(wk)))
        primal = 0.5 * disc.sigma_inner(wk, wk, "sigma1")
        out["kkt_gap"] = abs(primal + dense_theta(ds, fk, target, v2)) / primal
    return out


ORACLE_LIMITS = {
    "transpose": 1e-14,
    "follower": 1e-8,
    "A_columns": 1e-8,
    "theta": 1e-9,
    "leader_w1": 1e-6,
    "kkt_gap": 1e-6,
}


def oracle_checks(cfg=None, cases=None):
    checks = []
    seed = cfg["seed"] if cfg is not None else 0
    for k, sigma, ny, nt in cases if cases is not None else oracle_cases():
        res = oracle_agreement(k, sigma, ny, nt, seed=seed)
        for name, val in res.items():
            lim = ORACLE_LIMITS[name]
            checks.append({
                "name": f"oracle.{name}[k={k},sigma={sigma},ny={ny},nt={nt}]",
                "value": val,
                "threshold": lim,
                "passed": bool(val <= lim),
            })
    return checks


def control_time_defect(k) -> float:
    from .cli import decimal_min_control_time

    ref = decimal_min_control_time(k)
    return abs(min_control_time(k) - ref) / ref


def run_all(cfg, disc: Discretization, n_random=5):
    """The invariant suite on the configured problem (plus tiny oracle grids)."""
    rng = np.random.default_rng(cfg["seed"] if cfg is not None else 0)
    checks = []

    def add(name, value, threshold, ok=None):
        checks.append({
            "name": name,
            "value": float(value),
            "threshold": float(threshold),
            "passed": bool(value <= threshold if ok is None else ok),
        })

    add("dot_product", max(dot_product_defect(disc, rng) for _ in range(n_random)), 1e-12)
    add("follower_gradient_fd", max(follower_gradient_defect(disc, rng) for _ in range(3)), 1e-6)
    add("follower_formula", follower_formula_defect(disc, rng), 1e-9)
    add("pairing_forms", pairing_forms_defect(disc, rng), 1e-12)
    op = LeaderOperator(disc, coupling=cfg["solver.coupling"] if cfg is not None else "auto")
    add("adjoint_pairing", max(pairing_defect(op, rng) for _ in range(n_random)), 1e-8)
    add("green_identity", max(green_identity_defect(op, rng) for _ in range(3)), 1e-8)
    asym, quad = lambda_symmetry_defect(op, rng)
    add("lambda_symmetry", asym, 1e-8)
    add("lambda_psd", -quad, 1e-10)
    ks = (0.1, 0.3, 0.5, 0.9)
    add("min_control_time", max(control_time_defect(k) for k in ks), 1e-12)
    checks.extend(oracle_checks(cfg, cases=[(disc.config.k, disc.config.sigma, 6, 16)]))
    return checks
