"""Follower (Nash) response to a fixed leader control.

For a leader ``w1`` the follower minimises

    J2(w1, w2) = 1/2 (alpha (v - v2), v - v2)_Q + sigma/2 |w2|^2_{Sigma_2}

which is strictly convex in ``w2``.  The minimiser is computed by CG on the
reduced normal operator ``sigma I + K2* M_alpha K2``; at convergence the
follower formula ``sigma w2 = trace(p)`` holds on Sigma_2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Discretization, _values
from .krylov import NotConverged, conjugate_gradient
from .wavesolver import SpaceTimeField, TimeSignal, flux_trace, solve_backward_adjoint, solve_forward


class FollowerNotConverged(NotConverged):
    pass


@dataclass
class FollowerProblem:
    w1: np.ndarray
    v2_target: np.ndarray | None = None
    tol: float = 1e-10
    max_iter: int = 500

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class NashSolution:
    w2: TimeSignal
    v: SpaceTimeField
    p: SpaceTimeField
    grad_norm: float
    iterations: int
    grad_norm_initial: float = 0.0
    history: list = field(default_factory=list)


def _target(disc, v2):
    if v2 is None:
        return np.zeros((disc.nt + 1, disc.ny + 1))
    v2 = np.asarray(_values(v2), dtype=float)
    if not np.all(np.isfinite(v2)):
        raise ValueError("non-finite tracking target")
    return v2


def state(disc: Discretization, w1=None, w2=None) -> SpaceTimeField:
    return solve_forward(disc, bc=disc.compose_boundary(w1, w2))


def adjoint_state(disc: Discretization, v, v2=None) -> SpaceTimeField:
    """``p'' + L* p = alpha (v - v2)`` with ``p(T) = p'(T) = 0``."""
    return solve_backward_adjoint(disc, disc.alpha_t[:, None] * (_values(v) - _target(disc, v2)))


def eval_J2(disc: Discretization, w1, w2, v2=None) -> float:
    v = state(disc, w1, w2)
    e = v.values - _target(disc, v2)
    track = 0.5 * disc.spacetime_inner(disc.alpha_t[:, None] * e, e)
    return track + 0.5 * disc.config.sigma * disc.sigma_inner(w2, w2, "sigma2")


def eval_J(disc: Discretization, w1) -> float:
    return 0.5 * disc.sigma_inner(w1, w1, "sigma1")


def grad_J2_w2(disc: Discretization, w1, w2, v2=None) -> TimeSignal:
    """Gradient of the discrete J2 in the L2(Sigma_2) product: ``sigma w2 - trace(p)``."""
    v = state(disc, w1, w2)
    p = adjoint_state(disc, v, v2)
    g = disc.mask2 * (disc.config.sigma * _values(w2) - flux_trace(disc, p).values)
    return TimeSignal(g, "sigma2")


def follower_operator(disc: Discretization):
    """``h -> sigma h - trace(backward(alpha K2 h))`` restricted to Sigma_2."""
    sigma = disc.config.sigma
    m2 = disc.mask2

    def apply(h):
        g = state(disc, None, h)
        q = adjoint_state(disc, g)
        return m2 * (sigma * h - flux_trace(disc, q).values)

    return apply


def solve_follower(disc: Discretization, problem: FollowerProblem) -> NashSolution:
    v2 = _target(disc, problem.v2_target)
    w1 = disc.mask1 * _values(problem.w1)
    if not np.all(np.isfinite(w1)):
        raise ValueError("non-finite leader control")
    m2 = disc.mask2
    base = state(disc, w1, None)
    rhs = m2 * flux_trace(disc, adjoint_state(disc, base, v2)).values

    def inner(a, b):
        return disc.sigma_inner(a, b, "sigma2")

    res = conjugate_gradient(follower_operator(disc), rhs, inner, tol=problem.tol, max_iter=problem.max_iter)
    w2 = m2 * res.x
    v = state(disc, w1, w2)
    p = adjoint_state(disc, v, v2)
    grad = m2 * (disc.config.sigma * w2 - flux_trace(disc, p).values)
    gnorm = math.sqrt(inner(grad, grad))
    g0 = res.residual_history[0]
    if not res.converged:
        raise FollowerNotConverged(
            f"follower CG stopped after {res.iterations} iterations with gradient norm {gnorm:.3e}",
            gnorm,
            res.iterations,
        )
    return NashSolution(TimeSignal(w2, "sigma2"), v, p, gnorm, res.iterations, g0, res.residual_history)


def follower_map(disc: Discretization, w1, v2=None, tol=1e-10, max_iter=500) -> TimeSignal:
    return solve_follower(disc, FollowerProblem(w1, v2, tol, max_iter)).w2


def solve_optimality_system(disc: Discretization, w1, v2=None, method="cg", tol=1e-10, max_iter=500, omega=1.0):
    """Coupled state/adjoint pair ``(v, p)`` of the Nash optimality system.

    ``method="cg"`` goes through :func:`solve_follower`; ``method="picard"``
    iterates the coupling ``w2 <- (1-omega) w2 + omega trace(p)/sigma`` and is
    kept as an independent cross-check (it contracts only for large sigma).
    """
    if method == "cg":
        sol = solve_follower(disc, FollowerProblem(w1, v2, tol, max_iter))
        return sol.v, sol.p
    if method != "picard":
        raise ValueError(f"unknown method {method!r}")
    w2, _, v, p = picard_follower(disc, w1, v2, tol=tol, max_sweeps=max_iter, omega=omega)
    return v, p


def picard_follower(disc, w1, v2=None, tol=1e-10, max_sweeps=200, omega=1.0):
    sigma = disc.config.sigma
    m2 = disc.mask2
    w1 = disc.mask1 * _values(w1)
    w2 = np.zeros(disc.nt + 1)
    for sweep in range(1, max_sweeps + 1):
        v = state(disc, w1, w2)
        p = adjoint_state(disc, v, v2)
        new = m2 * flux_trace(disc, p).values / sigma
        step = omega * (new - w2)
        w2 = w2 + step
        size = disc.sigma_norm(w2, "sigma2")
        if disc.sigma_norm(step, "sigma2") <= tol * max(size, 1e-300) or size == 0.0:
            v = state(disc, w1, w2)
            return w2, sweep, v, adjoint_state(disc, v, v2)
    raise FollowerNotConverged(f"Picard coupling did not converge in {max_sweeps} sweeps", None, max_sweeps)
