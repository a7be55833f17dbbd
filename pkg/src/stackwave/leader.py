"""Leader control by duality.

The leader minimises ``J(w1) = 1/2 |w1|^2_{Sigma_1}`` subject to the terminal
pair reaching an L2 x H^-1 ball around ``(v0_target, v1_target)``.  The map
``A w1 = (g'(T) + delta g(T), -g(T))`` sends a leader to the terminal pair of
the Nash system with zero tracking target; its adjoint is the trace of the
coupled backward/forward pair ``(phi, psi)``.  The dual functional

    Theta(f) = 1/2 |A* f|^2 - <c0, f0> - (c1, f1) + rho1 |f0|_{H0^1} + rho0 |f1|_{L2}

is minimised over ``f = (f0, f1)``; the optimal leader is ``w1 = A* f``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Discretization, _values
from .krylov import NotConverged, conjugate_gradient, conjugate_residual, power_iteration
from .nash import FollowerProblem, follower_operator, solve_follower, solve_optimality_system
from .wavesolver import (
    SpaceTimeField,
    TerminalPair,
    TimeSignal,
    flux_trace,
    solve_backward_adjoint,
    solve_forward,
    terminal_pair,
)

log = logging.getLogger(__name__)


class PicardDivergence(NotConverged):
    def __init__(self, message, contraction):
        super().__init__(message)
        self.contraction = contraction


class LeaderNotConverged(NotConverged):
    pass


@dataclass
class DualVariable:
    f0: np.ndarray
    f1: np.ndarray

    def __post_init__(self):
        self.f0 = np.array(self.f0, dtype=float)
        self.f1 = np.array(self.f1, dtype=float)
        if abs(self.f0[0]) > 0 or abs(self.f0[-1]) > 0:
            raise ValueError("f0 must vanish at both endpoints")
        self.f1[0] = self.f1[-1] = 0.0

    @classmethod
    def zeros(cls, disc):
        return cls(np.zeros(disc.ny + 1), np.zeros(disc.ny + 1))


@dataclass
class TargetSpec:
    v0_target: np.ndarray
    v1_target: np.ndarray
    rho0: float = 0.0
    rho1: float = 0.0

    def __post_init__(self):
        if self.rho0 < 0 or self.rho1 < 0:
            raise ValueError("ball radii must be non-negative")
        self.v0_target = _interior(self.v0_target)
        self.v1_target = _interior(self.v1_target)


@dataclass
class BasePair:
    v0_field: SpaceTimeField
    p0_field: SpaceTimeField
    terminal: TerminalPair


@dataclass
class LeaderSolution:
    f_star: DualVariable
    w1_star: TimeSignal
    theta_value: float
    primal_value: float
    residual_l2: float
    residual_hm1: float
    iterations: int
    history: list = field(default_factory=list)
    terminal: TerminalPair | None = None


def _interior(f):
    f = np.array(_values(f), dtype=float)
    f[0] = f[-1] = 0.0
    return f


def solve_base_pair(disc: Discretization, v2=None, tol=1e-12) -> BasePair:
    """Nash system with no leader: the trajectory the follower produces alone."""
    sol = solve_follower(disc, FollowerProblem(np.zeros(disc.nt + 1), v2, tol=tol))
    return BasePair(sol.v, sol.p, terminal_pair(disc, sol.v))


class LeaderOperator:
    """``A``, ``A*`` and the normal operator ``Lambda = R A A*`` on one discretisation.

    ``coupling`` selects how the ``(phi, psi)`` pair inside ``A*`` is
    resolved: ``picard`` (relaxed fixed point on the Sigma_2 trace),
    ``krylov`` (CG on the same trace equation) or ``auto`` (Picard, switching
    to Krylov for the rest of the run if Picard fails to contract).
    """

    def __init__(self, disc: Discretization, coupling="auto", tol=1e-12, picard_tol=1e-11,
                 omega=1.0, max_sweeps=200):
        self.disc = disc
        self.coupling = coupling
        self.tol = tol
        self.picard_tol = picard_tol
        self.omega = omega
        self.max_sweeps = max_sweeps
        self.n_apply = 0
        self.n_adjoint = 0
        m = disc.ny - 1
        self.m = m
        self._dense = None

    # -- the two maps ---------------------------------------------------------
    def apply_A(self, w1):
        """Returns the pair ``(g'(T) + delta g(T), -g(T))`` as grid functions."""
        self.n_apply += 1
        disc = self.disc
        w1 = disc.mask1 * _values(w1)
        if not np.any(w1):
            z = np.zeros(disc.ny + 1)
            return z, z.copy(), SpaceTimeField(np.zeros((disc.nt + 1, disc.ny + 1)))
        sol = solve_follower(disc, FollowerProblem(w1, None, tol=self.tol))
        tp = terminal_pair(disc, sol.v)
        xi0 = _interior(tp.velocity + disc.config.delta * tp.position)
        xi1 = _interior(-tp.position)
        return xi0, xi1, sol.v

    def apply_Astar(self, f: DualVariable, method=None):
        """Returns ``(-trace(phi) on Sigma_1, phi, psi)``."""
        self.n_adjoint += 1
        disc = self.disc
        method = method or self.coupling
        f0 = _interior(f.f0)
        f1 = _interior(f.f1)
        f1_eff = f1 - disc.config.delta * f0
        if not (np.any(f0) or np.any(f1)):
            zf = SpaceTimeField(np.zeros((disc.nt + 1, disc.ny + 1)))
            return TimeSignal(np.zeros(disc.nt + 1), "sigma1"), zf, SpaceTimeField(zf.values.copy())
        if method in ("picard", "auto"):
            try:
                y = self._picard_trace(f0, f1_eff)
            except PicardDivergence as err:
                if method == "picard":
                    raise
                log.info("Picard coupling failed (contraction %.3f); switching to Krylov", err.contraction)
                self.coupling = "krylov"
                y = self._krylov_trace(f0, f1_eff)
        elif method == "krylov":
            y = self._krylov_trace(f0, f1_eff)
        else:
            raise ValueError(f"unknown coupling {method!r}")
        psi = solve_forward(disc, bc=disc.compose_boundary(None, y))
        phi = solve_backward_adjoint(disc, disc.alpha_t[:, None] * psi.values, f0, f1_eff)
        w = -disc.mask1 * flux_trace(disc, phi).values
        return TimeSignal(w, "sigma1"), phi, psi

    def _krylov_trace(self, f0, f1):
        disc = self.disc
        theta_f = flux_trace(disc, solve_backward_adjoint(disc, None, f0, f1)).values
        rhs = disc.mask2 * theta_f

        def inner(a, b):
            return disc.sigma_inner(a, b, "sigma2")

        res = conjugate_gradient(follower_operator(disc), rhs, inner, tol=self.tol, max_iter=500)
        if not res.converged:
            raise NotConverged("Krylov solve of the adjoint coupling did not converge", res.residual_history[-1])
        return disc.mask2 * res.x

    def _picard_trace(self, f0, f1):
        disc = self.disc
        sigma = disc.config.sigma
        omega = self.omega
        halved = False
        y = np.zeros(disc.nt + 1)
        psi_vals = np.zeros((disc.nt + 1, disc.ny + 1))
        prev_step = None
        sweep = 0
        while sweep < self.max_sweeps:
            sweep += 1
            phi = solve_backward_adjoint(disc, disc.alpha_t[:, None] * psi_vals, f0, f1)
            new = disc.mask2 * flux_trace(disc, phi).values / sigma
            step = omega * (new - y)
            y = y + step
            nstep = disc.sigma_norm(step, "sigma2")
            size = disc.sigma_norm(y, "sigma2")
            if nstep <= self.picard_tol * size or size == 0.0:
                return y
            if prev_step is not None and sweep >= 4:
                rate = nstep / prev_step
                if rate > 0.9:
                    if halved:
                        raise PicardDivergence(
                            f"Picard coupling not contracting (estimate {rate:.3f} after halving omega); "
                            "increase sigma or use the Krylov coupling",
                            rate,
                        )
                    omega *= 0.5
                    halved = True
                    y = np.zeros(disc.nt + 1)
                    psi_vals[:] = 0.0
                    prev_step = None
                    sweep = 0
                    continue
            prev_step = nstep
            psi_vals = solve_forward(disc, bc=disc.compose_boundary(None, y)).values
        raise PicardDivergence(f"Picard coupling did not reach tolerance in {self.max_sweeps} sweeps", 1.0)

    # -- coordinates for the dual problem ------------------------------------
    def pack(self, f: DualVariable) -> np.ndarray:
        return np.concatenate([f.f0[1:-1], f.f1[1:-1]])

    def unpack(self, x) -> DualVariable:
        m = self.m
        z = np.zeros(self.disc.ny + 1)
        f0, f1 = z.copy(), z.copy()
        f0[1:-1] = x[:m]
        f1[1:-1] = x[m:]
        return DualVariable(f0, f1)

    def riesz(self, xi0, xi1) -> np.ndarray:
        """Dual element (H^-1 x L2) to its representative in H0^1 x L2."""
        return np.concatenate([self.disc.green(xi0)[1:-1], xi1[1:-1]])

    def inner(self, x, z) -> float:
        d = self.disc
        m = self.m
        a0 = np.concatenate([[0.0], x[:m], [0.0]])
        b0 = np.concatenate([[0.0], z[:m], [0.0]])
        return d.h01_inner(a0, b0) + d.dy * float(np.dot(x[m:], z[m:]))

    def norms(self, x):
        d = self.disc
        m = self.m
        f0 = np.concatenate([[0.0], x[:m], [0.0]])
        return math.sqrt(max(d.h01_inner(f0, f0), 0.0)), math.sqrt(d.dy * float(np.dot(x[m:], x[m:])))

    def apply_Lambda(self, x) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ x
        w, _, _ = self.apply_Astar(self.unpack(x))
        xi0, xi1, _ = self.apply_A(w.values)
        return self.riesz(xi0, xi1)

    def assemble(self) -> np.ndarray:
        """Cache ``Lambda`` as a dense matrix (one column per dual coordinate)."""
        if self._dense is None:
            n = 2 * self.m
            cols = [self.apply_Lambda(np.eye(n)[i]) for i in range(n)]
            self._dense = np.column_stack(cols)
        return self._dense


def _dual_rhs(disc, target: TargetSpec, base: BasePair, gT=None):
    c0 = target.v1_target - _interior(base.terminal.velocity)
    if disc.config.delta > 0 and gT is not None:
        c0 = c0 + disc.config.delta * _interior(gT)
    c1 = _interior(base.terminal.position) - target.v0_target
    return c0, c1


def eval_Theta(op: LeaderOperator, f: DualVariable, target: TargetSpec, base: BasePair, gT=None) -> float:
    disc = op.disc
    if disc.config.delta > 0 and gT is None:
        raise ValueError("delta > 0 needs g(T) of the current leader iterate")
    w, _, _ = op.apply_Astar(f)
    c0, c1 = _dual_rhs(disc, target, base, gT)
    f0, f1 = _interior(f.f0), _interior(f.f1)
    val = 0.5 * disc.sigma_inner(w, w, "sigma1") - disc.pairing(c0, f0) - disc.l2_inner(c1, f1)
    return val + target.rho1 * disc.norm(f0, "H01") + target.rho0 * disc.norm(f1, "L2")


def _shrink(z, tau_rho, norm):
    n = norm(z)
    if n <= tau_rho:
        return np.zeros_like(z)
    return (1.0 - tau_rho / n) * z


def minimize_Theta(op: LeaderOperator, target: TargetSpec, base: BasePair, mode="auto", tol=1e-6,
                   max_iter=200, gT=None, callback=None):
    """Minimise the dual functional.

    ``cg``: conjugate-residual Krylov iteration on ``Lambda f = b`` (rho = 0);
    stops when both terminal residuals are below ``tol`` relative to the
    targets.  ``prox``: accelerated proximal gradient with block shrinkage
    (rho > 0) on the assembled operator.  Returns ``(f, history, iterations)``.
    """
    disc = op.disc
    rho_pos = target.rho0 > 0 or target.rho1 > 0
    if mode == "auto":
        mode = "prox" if rho_pos else "cg"
    c0, c1 = _dual_rhs(disc, target, base, gT)
    b = op.riesz(c0, c1)
    m = op.m

    if mode == "cg":
        if rho_pos:
            raise ValueError("cg mode requires rho0 = rho1 = 0")
        s0 = disc.norm(target.v0_target, "L2") or 1.0
        s1 = disc.norm(target.v1_target, "HM1") or 1.0

        def stop(r):
            r1, r0 = op.norms(r)  # r = R(residual): H0^1 norm of green(r0) is the H^-1 norm
            return r0 / s0 <= tol and r1 / s1 <= tol

        res = conjugate_residual(op.apply_Lambda, b, op.inner, tol=0.0, max_iter=max_iter,
                                 callback=callback, stop=stop)
        return op.unpack(res.x), res.residual_history, res.iterations, res.converged

    if mode != "prox":
        raise ValueError(f"unknown mode {mode!r}")
    L = op.assemble()
    rng = np.random.default_rng(0)
    lmax = power_iteration(op.apply_Lambda, rng.standard_normal(2 * m), op.inner, n_iter=500, tol=1e-10)
    tau = 1.0 / (1.05 * lmax)

    def h0norm(z):
        return op.norms(np.concatenate([z, np.zeros(m)]))[0]

    def l2norm(z):
        return op.norms(np.concatenate([np.zeros(m), z]))[1]

    def prox(z):
        return np.concatenate([_shrink(z[:m], tau * target.rho1, h0norm), _shrink(z[m:], tau * target.rho0, l2norm)])

    bnorm = math.sqrt(op.inner(b, b)) or 1.0
    x = np.zeros(2 * m)
    yk = x.copy()
    tk = 1.0
    hist = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_new = prox(yk - tau * (L @ yk - b))
        fp = math.sqrt(op.inner(x_new - yk, x_new - yk)) / (tau * bnorm)
        hist.append(fp)
        if callback is not None:
            callback(it, x_new, fp)
        # gradient-based adaptive restart
        if op.inner(yk - x_new, x_new - x) > 0:
            tk = 1.0
            yk = x_new.copy()
        else:
            t_new = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
            yk = x_new + ((tk - 1) / t_new) * (x_new - x)
            tk = t_new
        x = x_new
        if fp <= tol:
            converged = True
            break
    return op.unpack(x), hist, it, converged


def recover_leader(op: LeaderOperator, f_star: DualVariable) -> TimeSignal:
    return op.apply_Astar(f_star)[0]


def terminal_residuals(disc, tp: TerminalPair, target: TargetSpec):
    r_pos = _interior(tp.position) - target.v0_target
    r_vel = _interior(tp.velocity) - target.v1_target
    return disc.norm(r_pos, "L2"), disc.norm(r_vel, "HM1")


def solve_leader(disc: Discretization, target: TargetSpec, v2=None, mode="auto", tol=1e-6, max_iter=200,
                 coupling="auto", op: LeaderOperator | None = None, base: BasePair | None = None,
                 outer_iter=10) -> LeaderSolution:
    """Full pipeline: baseline, dual minimisation, leader recovery and closure run."""
    op = op or LeaderOperator(disc, coupling=coupling)
    base = base or solve_base_pair(disc, v2)
    gT = np.zeros(disc.ny + 1) if disc.config.delta > 0 else None
    for _ in range(outer_iter if disc.config.delta > 0 else 1):
        f, hist, iters, converged = minimize_Theta(op, target, base, mode=mode, tol=tol, max_iter=max_iter, gT=gT)
        w1 = recover_leader(op, f)
        if gT is None:
            break
        _, xi1, _ = op.apply_A(w1.values)
        g_new = -xi1
        if disc.norm(g_new - gT) <= 1e-10 * max(disc.norm(g_new), 1e-300):
            gT = g_new
            break
        gT = g_new
    if not converged:
        raise LeaderNotConverged(f"dual minimisation stopped after {iters} iterations", hist[-1] if hist else None, iters)
    v, _ = solve_optimality_system(disc, w1.values, v2, tol=1e-12)
    tp = terminal_pair(disc, v)
    r_l2, r_hm1 = terminal_residuals(disc, tp, target)
    theta = eval_Theta(op, f, target, base, gT)
    primal = 0.5 * disc.sigma_inner(w1, w1, "sigma1")
    return LeaderSolution(f, w1, theta, primal, r_l2, r_hm1, iters, hist, tp)


def check_variational_inequality(disc, op: LeaderOperator, f_star: DualVariable, target: TargetSpec,
                                 v2=None, n_samples=100, seed=0, terminal: TerminalPair | None = None):
    """Most negative value of the optimality inequality over sampled ``f_hat``.

    Returns ``(worst, scale)``; the achieved terminal pair is recomputed
    through the full Nash pipeline unless supplied.
    """
    if terminal is None:
        w1 = recover_leader(op, f_star)
        v, _ = solve_optimality_system(disc, w1.values, v2, tol=1e-12)
        terminal = terminal_pair(disc, v)
    dvel = _interior(terminal.velocity) - target.v1_target
    dpos = _interior(terminal.position) - target.v0_target
    f0, f1 = _interior(f_star.f0), _interior(f_star.f1)
    n0, n1 = disc.norm(f0, "H01"), disc.norm(f1, "L2")
    rng = np.random.default_rng(seed)
    s0 = max(n0, 1e-3)
    s1 = max(n1, 1e-3)
    samples = [np.zeros_like(f0), 2 * f0], [np.zeros_like(f1), 2 * f1]
    cand0, cand1 = list(samples[0]), list(samples[1])
    while len(cand0) < n_samples:
        scale = 10.0 ** rng.uniform(-3, 0.5)
        h0 = _interior(rng.standard_normal(disc.ny + 1))
        h1 = _interior(rng.standard_normal(disc.ny + 1))
        h0 *= scale * s0 / max(disc.norm(h0, "H01"), 1e-300)
        h1 *= scale * s1 / max(disc.norm(h1, "L2"), 1e-300)
        cand0.append(f0 + h0)
        cand1.append(f1 + h1)
    worst = math.inf
    big = 0.0
    for g0, g1 in zip(cand0, cand1):
        terms = vi_terms(disc, dvel, dpos, (f0, f1), (g0, g1), target)
        worst = min(worst, sum(terms))
        big = max(big, sum(abs(t) for t in terms))
    return worst, big


def vi_terms(disc, dvel, dpos, f, f_hat, target: TargetSpec):
    """The four terms of the optimality inequality at ``f`` tested against ``f_hat``."""
    f0, f1 = f
    g0, g1 = f_hat
    return (
        disc.pairing(dvel, g0 - f0),
        -disc.l2_inner(dpos, g1 - f1),
        target.rho1 * (disc.norm(g0, "H01") - disc.norm(f0, "H01")),
        target.rho0 * (disc.norm(g1, "L2") - disc.norm(f1, "L2")),
    )


def duality_report(disc, op: LeaderOperator, sol: LeaderSolution, target: TargetSpec, slack=1e-6):
    """Primal ``J(w1*)``, dual ``-Theta(f*)`` and their gap."""
    s0 = disc.norm(target.v0_target, "L2") or 1.0
    s1 = disc.norm(target.v1_target, "HM1") or 1.0
    feasible = sol.residual_l2 <= target.rho0 + slack * s0 and sol.residual_hm1 <= target.rho1 + slack * s1
    primal = sol.primal_value
    dual = -sol.theta_value
    gap = primal - dual
    return {
        "primal": primal,
        "dual": dual,
        "gap": gap,
        "relative_gap": gap / abs(primal) if primal else 0.0,
        "feasible": bool(feasible),
    }
