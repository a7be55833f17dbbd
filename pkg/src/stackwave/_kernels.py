"""Compiled time-stepping loops.

Interior unknowns are ``j = 1 .. ny-1``.  For ``n >= 1`` the step reads

    P_n u^{n+1} - A_n u^n + Q_n u^{n-1} = F^n + (boundary terms)

with ``P_n = I/dt^2 + C_n/(2 dt)``, ``A_n = 2I/dt^2 + D_n`` and
``Q_n = I/dt^2 - C_n/(2 dt)``; ``D_n`` is the conservative divergence stencil
and ``C_n`` the centred first difference weighted by gamma/alpha.  The first
step is the Taylor start ``u^1 = u^0 + dt v1 + dt^2/2 (F^0 + D_0 V^0 - C_0 V1)``.

``backward`` applies the transpose of the whole block lower-triangular
system; it returns the multipliers ``lam[j]`` of the equation that produced
``u^j`` (``lam[0]`` is the sensitivity to ``u^0``).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _thomas(lower, diag, upper, rhs, out):
    # lower[i] couples x[i-1], upper[i] couples x[i+1]; scratch is reused
    m = rhs.shape[0]
    cp = np.empty(m)
    dp = np.empty(m)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, m):
        den = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / den
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den
    out[m - 1] = dp[m - 1]
    for i in range(m - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]


@njit(cache=True)
def forward(b, F, u0, v1, a_half, c, dy, dt):
    nt = b.shape[0] - 1
    ny = u0.shape[0] - 1
    m = ny - 1
    V = np.zeros((nt + 1, ny + 1))
    for n in range(nt + 1):
        V[n, ny] = b[n]
    for j in range(1, ny):
        V[0, j] = u0[j]

    dy2 = dy * dy
    dt2 = dt * dt
    for j in range(1, ny):
        lap = (a_half[0, j] * (V[0, j + 1] - V[0, j]) - a_half[0, j - 1] * (V[0, j] - V[0, j - 1])) / dy2
        v1m = v1[j - 1] if j > 1 else 0.0
        conv = c[0, j] * (v1[j + 1] - v1m) / (2.0 * dy)
        V[1, j] = V[0, j] + dt * v1[j] + 0.5 * dt2 * (F[0, j] + lap - conv)

    lower = np.empty(m)
    diag = np.full(m, 1.0 / dt2)
    upper = np.empty(m)
    rhs = np.empty(m)
    sol = np.empty(m)
    s = 1.0 / (4.0 * dy * dt)
    for n in range(1, nt):
        for j in range(1, ny):
            i = j - 1
            lap = (a_half[n, j] * (V[n, j + 1] - V[n, j]) - a_half[n, j - 1] * (V[n, j] - V[n, j - 1])) / dy2
            rhs[i] = (
                (2.0 * V[n, j] - V[n - 1, j]) / dt2
                + lap
                + F[n, j]
                + c[n, j] * (V[n - 1, j + 1] - V[n - 1, j - 1]) * s
            )
            upper[i] = c[n, j] * s
            lower[i] = -c[n, j] * s
        rhs[m - 1] -= c[n, ny - 1] * s * b[n + 1]
        upper[m - 1] = 0.0
        lower[0] = 0.0
        _thomas(lower, diag, upper, rhs, sol)
        for i in range(m):
            V[n + 1, i + 1] = sol[i]
    return V


@njit(cache=True)
def _apply_D(a_row, lam, dy2, out):
    # symmetric Dirichlet divergence stencil on interior vectors
    m = lam.shape[0]
    for i in range(m):
        left = lam[i - 1] if i > 0 else 0.0
        right = lam[i + 1] if i < m - 1 else 0.0
        out[i] = (a_row[i + 1] * (right - lam[i]) - a_row[i] * (lam[i] - left)) / dy2


@njit(cache=True)
def _apply_Ct(c_row, lam, dy, out):
    # transpose of the centred convective difference (interior rows only)
    m = lam.shape[0]
    for i in range(m):
        left = c_row[i] * lam[i - 1] if i > 0 else 0.0
        right = c_row[i + 2] * lam[i + 1] if i < m - 1 else 0.0
        out[i] = (left - right) / (2.0 * dy)


@njit(cache=True)
def backward(r, a_half, c, dy, dt):
    """Solve the transposed system for the Euclidean load ``r`` (interior)."""
    nt = r.shape[0] - 1
    m = r.shape[1]
    lam = np.zeros((nt + 1, m))
    dy2 = dy * dy
    dt2 = dt * dt
    s = 1.0 / (4.0 * dy * dt)

    lower = np.empty(m)
    diag = np.full(m, 1.0 / dt2)
    upper = np.empty(m)
    rhs = np.empty(m)
    work = np.empty(m)
    sol = np.empty(m)

    for j in range(nt, 0, -1):
        for i in range(m):
            rhs[i] = r[j, i]
        if j <= nt - 1:
            _apply_D(a_half[j], lam[j + 1], dy2, work)
            for i in range(m):
                rhs[i] += 2.0 * lam[j + 1, i] / dt2 + work[i]
        if j + 2 <= nt:
            # -Q_{j+1}^T lam^{j+2} = -lam/dt^2 + C^T lam/(2 dt)
            _apply_Ct(c[j + 1], lam[j + 2], dy, work)
            for i in range(m):
                rhs[i] += -lam[j + 2, i] / dt2 + work[i] / (2.0 * dt)
        if j >= 2:
            # P_{j-1}^T: lower couples lam[i-1] with c_{i-1}, upper lam[i+1] with -c_{i+1}
            cr = c[j - 1]
            for i in range(m):
                lower[i] = cr[i] * s if i > 0 else 0.0
                upper[i] = -cr[i + 2] * s if i < m - 1 else 0.0
            _thomas(lower, diag, upper, rhs, sol)
            for i in range(m):
                lam[j, i] = sol[i]
        else:
            for i in range(m):
                lam[j, i] = rhs[i]

    # sensitivity to u^0: r^0 + B_0^T lam^1 - Q_1^T lam^2
    _apply_D(a_half[0], lam[1], dy2, work)
    for i in range(m):
        lam[0, i] = r[0, i] + lam[1, i] + 0.5 * dt2 * work[i]
    if nt >= 2:
        _apply_Ct(c[1], lam[2], dy, work)
        for i in range(m):
            lam[0, i] += -lam[2, i] / dt2 + work[i] / (2.0 * dt)
    return lam
