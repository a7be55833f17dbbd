"""Dense reference implementations for tiny grids.

Every matrix here is assembled column by column from unit impulses pushed
through the production solvers, so the oracle certifies the iterative
algorithms (CG, Picard, dual minimisation) rather than the stencils.
Linear systems are solved directly; ill-conditioned ones are reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .domain import Discretization, Grid, ProblemConfig, _values
from .leader import DualVariable, TargetSpec
from .wavesolver import flux_trace, solve_backward_adjoint, solve_forward

MAX_CELLS = 5000
COND_LIMIT = 1e13


class OracleError(RuntimeError):
    pass


@dataclass
class DenseSystem:
    """Explicit matrices of one discretisation.

    ``forward_matrix`` maps the stacked input ``[bc, source, v0, v1]`` to the
    row-major field; ``trace_matrix`` maps a space-time load to the flux trace
    of its adjoint field; the terminal matrices extract position and
    velocity at ``t = T`` from a field.
    """

    disc: Discretization
    forward_matrix: np.ndarray
    trace_matrix: np.ndarray
    terminal_position: np.ndarray
    terminal_velocity: np.ndarray

    @property
    def n_field(self):
        return (self.disc.nt + 1) * (self.disc.ny + 1)

    def input_slices(self):
        nb = self.disc.nt + 1
        nf = self.n_field
        ng = self.disc.ny + 1
        return {
            "bc": slice(0, nb),
            "source": slice(nb, nb + nf),
            "v0": slice(nb + nf, nb + nf + ng),
            "v1": slice(nb + nf + ng, nb + nf + 2 * ng),
        }

    @property
    def bc_matrix(self):
        return self.forward_matrix[:, self.input_slices()["bc"]]

    @property
    def field_weights(self):
        return self.disc.spacetime_weights.ravel()


def assemble(config: ProblemConfig | Discretization, grid: Grid | None = None) -> DenseSystem:
    disc = config if isinstance(config, Discretization) else Discretization(config, grid)
    ny, nt = disc.ny, disc.nt
    if ny * nt > MAX_CELLS:
        raise OracleError(f"dense assembly limited to ny*nt <= {MAX_CELLS}, got {ny * nt}")
    nb, ng = nt + 1, ny + 1
    nf = nb * ng
    cols = []
    for i in range(nb):
        e = np.zeros(nb)
        e[i] = 1.0
        cols.append(solve_forward(disc, bc=e).values.ravel())
    for i in range(nf):
        e = np.zeros(nf)
        e[i] = 1.0
        cols.append(solve_forward(disc, source=e.reshape(nb, ng)).values.ravel())
    for key in ("v0", "v1"):
        for i in range(ng):
            e = np.zeros(ng)
            e[i] = 1.0
            cols.append(solve_forward(disc, **{key: e}).values.ravel())
    fwd = np.column_stack(cols)

    trace = np.zeros((nb, nf))
    for i in range(nf):
        e = np.zeros(nf)
        e[i] = 1.0
        trace[:, i] = flux_trace(disc, solve_backward_adjoint(disc, e.reshape(nb, ng))).values

    pos = np.zeros((ng, nf))
    vel = np.zeros((ng, nf))
    for j in range(ng):
        pos[j, nt * ng + j] = 1.0
        vel[j, nt * ng + j] = 1.5 / disc.dt
        vel[j, (nt - 1) * ng + j] = -2.0 / disc.dt
        vel[j, (nt - 2) * ng + j] = 0.5 / disc.dt
    return DenseSystem(disc, fwd, trace, pos, vel)


def transpose_defect(ds: DenseSystem) -> float:
    """Relative size of ``K^T W + Omega T``: zero when the adjoint is the exact transpose."""
    lhs = ds.bc_matrix.T * ds.field_weights[None, :]
    rhs = -ds.disc.time_weights[:, None] * ds.trace_matrix
    return float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)))


def _solve(M, rhs, what):
    c = np.linalg.cond(M)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise OracleError(f"{what} is singular to working precision (condition number {c:.3e})")
    return np.linalg.solve(M, rhs)


def _follower_system(ds: DenseSystem):
    """Hessian and coupling of J2 restricted to the Sigma_2 support."""
    disc = ds.disc
    s2 = np.flatnonzero(disc.mask2)
    K2 = ds.bc_matrix[:, s2]
    Wa = ds.field_weights * np.repeat(disc.alpha_t, disc.ny + 1)
    H = K2.T @ (Wa[:, None] * K2) + disc.config.sigma * np.diag(disc.time_weights[s2])
    return s2, K2, Wa, H


def dense_follower(ds: DenseSystem, w1, v2=None) -> np.ndarray:
    """Follower control by a direct solve of the normal equations."""
    disc = ds.disc
    s2, K2, Wa, H = _follower_system(ds)
    base = ds.bc_matrix @ (disc.mask1 * _values(w1))
    if v2 is not None:
        base = base - _values(v2).ravel()
    w2 = np.zeros(disc.nt + 1)
    w2[s2] = _solve(H, -K2.T @ (Wa * base), "follower normal matrix")
    return w2


def dense_nash_field(ds: DenseSystem, w1, v2=None) -> np.ndarray:
    disc = ds.disc
    w2 = dense_follower(ds, w1, v2)
    bc = disc.compose_boundary(w1, w2)
    return (ds.bc_matrix @ bc).reshape(disc.nt + 1, disc.ny + 1)


def dense_A(ds: DenseSystem) -> np.ndarray:
    """Matrix of ``A`` from the Sigma_1 support to stacked interior ``(xi0, xi1)``."""
    disc = ds.disc
    s1 = np.flatnonzero(disc.mask1)
    s2, K2, Wa, H = _follower_system(ds)
    K1 = ds.bc_matrix[:, s1]
    F = -_solve(H, K2.T @ (Wa[:, None] * K1), "follower normal matrix")
    G = K1 + K2 @ F
    pos = ds.terminal_position @ G
    vel = ds.terminal_velocity @ G
    xi0 = vel + disc.config.delta * pos
    return np.vstack([xi0[1:-1], -pos[1:-1]])


def dense_Astar(ds: DenseSystem, A=None) -> np.ndarray:
    """Adjoint of ``A`` for the Sigma_1 quadrature and the L2-form pairing."""
    disc = ds.disc
    A = dense_A(ds) if A is None else A
    s1 = np.flatnonzero(disc.mask1)
    return (A.T * disc.dy) / disc.time_weights[s1][:, None]


def _expand(disc, w_s1):
    w = np.zeros(disc.nt + 1)
    w[np.flatnonzero(disc.mask1)] = w_s1
    return w


def _pack(f: DualVariable):
    return np.concatenate([f.f0[1:-1], f.f1[1:-1]])


def _unpack(disc, x):
    m = disc.ny - 1
    z = np.zeros(disc.ny + 1)
    f0, f1 = z.copy(), z.copy()
    f0[1:-1], f1[1:-1] = x[:m], x[m:]
    return DualVariable(f0, f1)


def dense_base_terminal(ds: DenseSystem, v2=None):
    V = dense_nash_field(ds, np.zeros(ds.disc.nt + 1), v2).ravel()
    return ds.terminal_position @ V, ds.terminal_velocity @ V


def _dual_data(ds, target, v2):
    disc = ds.disc
    pos, vel = dense_base_terminal(ds, v2)
    c0 = (target.v1_target - vel)[1:-1]
    c1 = (pos - target.v0_target)[1:-1]
    return np.concatenate([c0, c1])


def dense_theta(ds: DenseSystem, f: DualVariable, target: TargetSpec, v2=None) -> float:
    disc = ds.disc
    if disc.config.delta > 0:
        raise OracleError("the dense oracle covers delta = 0 only")
    x = _pack(f)
    w = dense_Astar(ds) @ x
    s1 = np.flatnonzero(disc.mask1)
    c = _dual_data(ds, target, v2)
    val = 0.5 * float(np.dot(disc.time_weights[s1] * w, w)) - disc.dy * float(np.dot(c, x))
    return val + target.rho1 * disc.norm(f.f0, "H01") + target.rho0 * disc.norm(f.f1, "L2")


def dense_leader_kkt(ds: DenseSystem, target: TargetSpec, v2=None, tol=1e-12, max_iter=2_000_000):
    """Optimal leader and dual variable by direct linear algebra.

    ``rho = 0``: the equality-constrained KKT system.  ``rho > 0``: proximal
    gradient on the explicit dual matrix run to ``tol``.  Returns
    ``(w1, f)``.
    """
    disc = ds.disc
    if disc.config.delta > 0:
        raise OracleError("the dense oracle covers delta = 0 only")
    m = disc.ny - 1
    A = dense_A(ds)
    As = dense_Astar(ds, A)
    c = _dual_data(ds, target, v2)
    s1 = np.flatnonzero(disc.mask1)
    if target.rho0 == 0 and target.rho1 == 0:
        n = A.shape[1]
        Om = np.diag(disc.time_weights[s1])
        K = np.block([[Om, A.T], [A, np.zeros((2 * m, 2 * m))]])
        sol = _solve(K, np.concatenate([np.zeros(n), c]), "leader KKT matrix")
        w, mu = sol[:n], sol[n:]
        return _expand(disc, w), _unpack(disc, -mu / disc.dy)

    # Gram matrix of the H0^1 x L2 coordinates and the explicit dual operator
    S = (2 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)) / disc.dy
    G = linalg.block_diag(S, disc.dy * np.eye(m))
    R = linalg.block_diag(np.linalg.solve(S, disc.dy * np.eye(m)), np.eye(m))
    Lam = R @ A @ As
    b = R @ c
    lmax = float(linalg.eigh(G @ Lam, G, eigvals_only=True)[-1]) if m > 0 else 0.0
    tau = 1.0 / lmax

    def gnorm(z, block):
        Gb = S if block == 0 else disc.dy * np.eye(m)
        return math.sqrt(max(float(z @ Gb @ z), 0.0))

    def shrink(z, r, block):
        n = gnorm(z, block)
        return np.zeros_like(z) if n <= r else (1.0 - r / n) * z

    def prox(z):
        return np.concatenate([shrink(z[:m], tau * target.rho1, 0), shrink(z[m:], tau * target.rho0, 1)])

    bn = math.sqrt(float(b @ G @ b)) or 1.0
    x = np.zeros(2 * m)
    y = x.copy()
    t = 1.0
    for _ in range(max_iter):
        x_new = prox(y - tau * (Lam @ y - b))
        d = x_new - y
        if math.sqrt(max(float(d @ G @ d), 0.0)) / (tau * bn) <= tol:
            x = x_new
            break
        if float((y - x_new) @ G @ (x_new - x)) > 0:
            t, y = 1.0, x_new.copy()
        else:
            t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            y = x_new + ((t - 1) / t_new) * (x_new - x)
            t = t_new
        x = x_new
    else:
        raise OracleError(f"dense proximal iteration did not reach {tol:g} in {max_iter} steps")
    return _expand(disc, As @ x), _unpack(disc, x)
