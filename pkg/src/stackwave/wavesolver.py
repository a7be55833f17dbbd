"""Explicit second-order solver on the cylinder and its exact discrete adjoint.

The backward solver is not a discretisation of the continuous adjoint
operator: it is the transpose of the assembled forward step, taken with
respect to the trapezoidal space-time inner product.  Every duality
identity between forward and backward solves therefore holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .domain import Discretization, _values


class SolverError(RuntimeError):
    pass


@dataclass
class SpaceTimeField:
    """Values on the ``(nt+1) x (ny+1)`` grid, one row per time level.

    Fields produced by :func:`solve_backward_adjoint` also carry the adjoint
    load at ``y = 1`` and the sensitivities to the forward initial data;
    the boundary load is what makes :func:`flux_trace` second-order accurate.
    """

    values: np.ndarray
    boundary_load: np.ndarray | None = None
    v0_sensitivity: np.ndarray | None = None
    v1_sensitivity: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass
class TimeSignal:
    """Samples of a boundary signal at the time nodes.

    ``support`` is one of ``sigma1``, ``sigma2`` or ``sigma0`` (whole boundary).
    """

    values: np.ndarray
    support: str = "sigma0"

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass
class TerminalPair:
    position: np.ndarray
    velocity: np.ndarray


def _finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise SolverError(f"non-finite entries in {name}")
    return arr


def _signal(disc, b):
    if b is None:
        return np.zeros(disc.nt + 1)
    b = np.array(_values(b), dtype=float)
    if b.shape != (disc.nt + 1,):
        raise SolverError(f"boundary signal must have {disc.nt + 1} samples, got {b.shape}")
    return _finite("boundary signal", b)


def _field(disc, F):
    if F is None:
        return np.zeros((disc.nt + 1, disc.ny + 1))
    F = np.array(_values(F), dtype=float)
    if F.shape != (disc.nt + 1, disc.ny + 1):
        raise SolverError(f"field must have shape {(disc.nt + 1, disc.ny + 1)}, got {F.shape}")
    return _finite("field", F)


def _grid_fn(disc, f):
    if f is None:
        return np.zeros(disc.ny + 1)
    f = np.array(_values(f), dtype=float)
    if f.shape != (disc.ny + 1,):
        raise SolverError(f"grid function must have {disc.ny + 1} entries, got {f.shape}")
    return _finite("grid function", f)


def solve_forward(disc: Discretization, bc=None, source=None, v0=None, v1=None) -> SpaceTimeField:
    """Solve ``v'' + L v = source`` with ``v(0,t) = 0`` and ``v(1,t) = bc(t)``.

    ``v0`` supplies interior initial positions (its end values are replaced
    by the boundary data).  ``v1`` is the initial velocity; its last entry is
    used as the boundary velocity in the starting step, its first is ignored.
    """
    b = _signal(disc, bc)
    F = _field(disc, source)
    u0 = _grid_fn(disc, v0)
    w1 = _grid_fn(disc, v1)
    w1[0] = 0.0
    V = _kernels.forward(b, F, u0, w1, disc.a_half, disc.c_node, disc.dy, disc.dt)
    return SpaceTimeField(V)


def solve_backward_adjoint(disc: Discretization, source=None, pT=None, pT_prime=None) -> SpaceTimeField:
    """Adjoint field for the load ``source`` and terminal data ``(pT, pT_prime)``.

    The returned ``p`` satisfies, for every forward solution ``V`` driven by
    ``(bc, F, v0, v1)``,

        (V, source)_Q + <vel_T(V), pT> - (pos_T(V), pT_prime)
            = (F, p)_Q + (bc, -flux_trace(p))_Sigma + v0/v1 terms,

    where ``vel_T``/``pos_T`` are the terminal pair and ``( , )_Q`` the
    trapezoidal space-time product over rows ``0 .. nt-1``.  The last row
    of ``p`` holds ``pT``.
    """
    w = _field(disc, source)
    fT = _grid_fn(disc, pT)
    gT = _grid_fn(disc, pT_prime)
    dy, dt = disc.dy, disc.dt
    om = disc.time_weights

    r = om[:, None] * dy * w[:, 1:-1]
    r[-1] += dy * (1.5 / dt) * fT[1:-1] - dy * gT[1:-1]
    r[-2] += -dy * (2.0 / dt) * fT[1:-1]
    r[-3] += dy * (0.5 / dt) * fT[1:-1]
    lam = _kernels.backward(np.ascontiguousarray(r), disc.a_half, disc.c_node, dy, dt)

    nt, ny = disc.nt, disc.ny
    p = np.zeros((nt + 1, ny + 1))
    p[0, 1:-1] = 0.5 * dt**2 * lam[1] / (om[0] * dy)
    p[1:nt, 1:-1] = lam[2:] / (om[1:nt, None] * dy)
    p[nt, 1:-1] = fT[1:-1]

    v1_sens = np.zeros(ny + 1)
    ct = np.zeros(ny - 1)
    _kernels._apply_Ct(disc.c_node[0], lam[1], dy, ct)
    v1_sens[1:-1] = dt * lam[1] - 0.5 * dt**2 * ct
    v1_sens[-1] = -0.5 * dt**2 * disc.c_node[0, ny - 1] / (2 * dy) * lam[1, -1]
    v0_sens = np.zeros(ny + 1)
    v0_sens[1:-1] = lam[0]
    return SpaceTimeField(p, boundary_load=w[:, -1].copy(), v0_sensitivity=v0_sens, v1_sensitivity=v1_sens)


def boundary_sensitivity(disc: Discretization, field: SpaceTimeField) -> np.ndarray:
    """Euclidean gradient of the adjoint functional with respect to ``bc``.

    Transpose of the Dirichlet injection at ``j = ny``: only the column next
    to the boundary and the boundary load enter.
    """
    P = _values(field)
    if np.max(np.abs(P[:, -1])) > 0:
        raise SolverError("flux trace needs a field vanishing at y = 1")
    nt, ny = disc.nt, disc.ny
    dy, dt, om = disc.dy, disc.dt, disc.time_weights
    lam_hat = om[:nt] * dy * P[:nt, ny - 1]  # multiplier of the step producing level n+1
    d_b = disc.a_half[:, ny - 1] / dy**2
    c_b = disc.c_node[:, ny - 1] / (2 * dy)

    g = np.zeros(nt + 1)
    load = getattr(field, "boundary_load", None)
    if load is not None:
        g += om * 0.5 * dy * load
    g[:nt] += d_b[:nt] * lam_hat
    g[2:] -= c_b[1:nt] * lam_hat[1:nt] / (2 * dt)
    g[: nt - 1] += c_b[1:nt] * lam_hat[1:nt] / (2 * dt)
    return g


def flux_trace(disc: Discretization, field: SpaceTimeField, weight: str = "inv_alpha_sq") -> TimeSignal:
    """Adjoint-consistent conormal trace ``(beta/alpha) p_y`` at ``y = 1``.

    ``inv_alpha_sq`` is the trace entering the follower formula and ``A*``;
    ``inv_alpha_4`` divides it once more by ``alpha^2``.
    """
    theta = -boundary_sensitivity(disc, field) / disc.time_weights
    if weight == "inv_alpha_4":
        theta = theta / disc.alpha_t**2
    elif weight != "inv_alpha_sq":
        raise ValueError(f"unknown trace weight {weight!r}")
    return TimeSignal(theta)


def flux_trace_fd(disc: Discretization, field: SpaceTimeField) -> TimeSignal:
    """One-sided second-order finite-difference conormal trace (diagnostic)."""
    P = _values(field)
    ny = disc.ny
    a_bdry = (1.0 - disc.config.k**2) / disc.alpha_t**2
    p_y = (3 * P[:, ny] - 4 * P[:, ny - 1] + P[:, ny - 2]) / (2 * disc.dy)
    return TimeSignal(a_bdry * p_y)


def terminal_pair(disc: Discretization, field) -> TerminalPair:
    V = _values(field)
    if V.shape[0] < 3:
        raise SolverError("terminal velocity needs at least three time levels")
    vel = (3 * V[-1] - 4 * V[-2] + V[-3]) / (2 * disc.dt)
    return TerminalPair(position=V[-1].copy(), velocity=vel)


def energy(disc: Discretization, field) -> np.ndarray:
    """Discrete ``1/2 |v'|^2 + 1/2 |v_y|^2`` at interior time levels (k = 0 check)."""
    V = _values(field)
    vt = (V[2:] - V[:-2]) / (2 * disc.dt)
    vy = np.diff(V[1:-1], axis=1) / disc.dy
    kin = 0.5 * vt**2 @ disc.l2_weights
    pot = 0.5 * disc.dy * np.sum(vy**2, axis=1)
    return kin + pot
