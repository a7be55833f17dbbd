"""Moving-endpoint geometry, coefficients and the discrete function spaces.

The physical string occupies ``0 < x < alpha(t) = 1 + k t``.  The change of
variables ``y = x / alpha(t)`` maps it onto the fixed cylinder ``(0, 1) x (0, T)``
where the state solves ``v'' - [(beta/alpha) v_y]_y + (gamma/alpha) v'_y = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded


class DomainError(ValueError):
    """Raised for inputs outside the admissible geometry."""


class SplitMode(str, Enum):
    OVERLAP = "overlap"
    TIME_PARTITION = "time_partition"


@dataclass(frozen=True)
class ControlSplit:
    """How the moving-endpoint boundary is shared between leader and follower.

    ``OVERLAP``: both controls act on the whole boundary and the imposed value
    is ``w1 + w2``.  ``TIME_PARTITION``: the leader acts on ``t < t_split``
    and the follower on ``t >= t_split``.
    """

    mode: SplitMode = SplitMode.OVERLAP
    t_split: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))
        if self.mode is SplitMode.TIME_PARTITION and self.t_split is None:
            raise DomainError("time_partition split requires t_split")


@dataclass(frozen=True)
class ProblemConfig:
    k: float = 0.3
    T: float = 1.0
    sigma: float = 10.0
    delta: float = 0.0
    rho0: float = 0.0
    rho1: float = 0.0
    split: ControlSplit = field(default_factory=ControlSplit)

    def __post_init__(self):
        # k = 0 (fixed string) is admitted as the cylindrical limit.
        if not 0.0 <= self.k < 1.0:
            raise DomainError(f"endpoint speed must satisfy 0 <= k < 1, got {self.k}")
        if self.T <= 0:
            raise DomainError(f"T must be positive, got {self.T}")
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.delta < 0 or self.rho0 < 0 or self.rho1 < 0:
            raise DomainError("delta, rho0 and rho1 must be non-negative")
        if self.split.mode is SplitMode.TIME_PARTITION and not 0 < self.split.t_split < self.T:
            raise DomainError("t_split must lie strictly inside (0, T)")


@dataclass(frozen=True)
class Grid:
    """Uniform space-time mesh: ``y_j = j/ny`` and ``t_n = n T/nt``."""

    ny: int
    nt: int
    cfl: float = 0.5

    def __post_init__(self):
        if self.ny < 4 or self.nt < 4:
            raise DomainError("grid needs ny >= 4 and nt >= 4")
        if not 0 < self.cfl <= 1:
            raise DomainError("cfl must lie in (0, 1]")

    @classmethod
    def for_config(cls, config: ProblemConfig, ny: int, cfl: float = 0.5) -> Grid:
        """Smallest ``nt`` satisfying the stability bound for ``config``."""
        nt = math.ceil(config.T * (1 + config.k) * ny / cfl - 1e-9)
        return cls(ny=ny, nt=max(nt, 4), cfl=cfl)


def _scalar(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def alpha(t, k):
    return _scalar(1.0 + k * np.asarray(t, dtype=float))


def beta(y, t, k):
    return _scalar((1.0 - k**2 * np.asarray(y, dtype=float) ** 2) / alpha(t, k))


def gamma(y, k):
    return _scalar(-2.0 * k * np.asarray(y, dtype=float))


def min_control_time(k: float) -> float:
    """Lower bound on the horizon ``T`` required for approximate controllability."""
    if not 0 < k < 1:
        raise DomainError(f"min_control_time needs 0 < k < 1, got {k}")
    return math.expm1(2 * k * (1 + k) / (1 - k)) / k


def check_time_horizon(config: ProblemConfig) -> bool:
    return config.k > 0 and config.T > min_control_time(config.k)


def map_to_cylinder(x, t, k):
    x = np.asarray(x, dtype=float)
    a = alpha(t, k)
    if np.any(x < 0) or np.any(x > a * (1 + 1e-15)):
        raise DomainError("x outside the moving interval (0, alpha(t))")
    return x / a, t


def map_to_moving(y, t, k):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y > 1):
        raise DomainError("y outside (0, 1)")
    return y * alpha(t, k), t


def transform_initial_data(u0, u1, k, du0=None):
    """Initial data on the cylinder: ``v0 = u0`` and ``v1 = u1 + k y u0'``.

    ``du0`` may supply the exact derivative; otherwise a second-order
    finite difference on the uniform grid is used.
    """
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    y = np.linspace(0.0, 1.0, u0.size)
    if du0 is None:
        du0 = np.gradient(u0, y[1] - y[0], edge_order=2)
    return u0.copy(), u1 + k * y * np.asarray(du0, dtype=float)


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


class Discretization:
    """A problem configuration bound to a grid.

    Holds the sampled coefficients used by the solvers together with the
    discrete L2 / H0^1 / H^-1 structure.  H0^1 uses the first-difference
    quadratic form and H^-1 the inverse 3-point Dirichlet Laplacian, so the
    two are exact duals and the Riesz maps are exact.
    """

    def __init__(self, config: ProblemConfig, grid: Grid):
        self.config = config
        self.grid = grid
        self.ny, self.nt = grid.ny, grid.nt
        self.dy = 1.0 / grid.ny
        self.dt = config.T / grid.nt
        k = config.k
        if self.dt > grid.cfl * self.dy / (1 + k) * (1 + 1e-12):
            raise DomainError(
                f"CFL violated: dt={self.dt:.4g} > cfl*dy/(1+k)={grid.cfl * self.dy / (1 + k):.4g}; "
                f"use nt >= {Grid.for_config(config, grid.ny, grid.cfl).nt}"
            )
        self.y = np.linspace(0.0, 1.0, grid.ny + 1)
        self.t = np.linspace(0.0, config.T, grid.nt + 1)
        self.alpha_t = alpha(self.t, k)
        y_half = 0.5 * (self.y[:-1] + self.y[1:])
        # beta/alpha at half nodes and gamma/alpha at nodes, one row per time level
        self.a_half = (1.0 - k**2 * y_half[None, :] ** 2) / self.alpha_t[:, None] ** 2
        self.c_node = -2.0 * k * self.y[None, :] / self.alpha_t[:, None]

        self.l2_weights = trapezoid_weights(grid.ny, self.dy)
        self.time_weights = trapezoid_weights(grid.nt, self.dt)
        self.mask1, self.mask2 = self._split_masks()

        m = grid.ny - 1
        # banded Dirichlet stiffness (1/dy) tridiag(-1, 2, -1), upper form
        ab = np.zeros((2, m))
        ab[0, 1:] = -1.0 / self.dy
        ab[1, :] = 2.0 / self.dy
        self._stiff_band = ab
        self._stiff_chol = cholesky_banded(ab)

    # -- control geometry -------------------------------------------------
    def _split_masks(self):
        split = self.config.split
        ones = np.ones(self.nt + 1)
        if split.mode is SplitMode.OVERLAP:
            return ones, ones.copy()
        first = (self.t < split.t_split).astype(float)
        return first, 1.0 - first

    def mask(self, piece: str) -> np.ndarray:
        return {"sigma1": self.mask1, "sigma2": self.mask2, "sigma0": np.ones(self.nt + 1)}[piece]

    def compose_boundary(self, w1=None, w2=None) -> np.ndarray:
        """Dirichlet value imposed at y = 1 by the two controls."""
        b = np.zeros(self.nt + 1)
        if w1 is not None:
            b += self.mask1 * _values(w1)
        if w2 is not None:
            b += self.mask2 * _values(w2)
        return b

    # -- quadrature -------------------------------------------------------
    def sigma_inner(self, a, b, piece: str = "sigma0") -> float:
        return float(np.dot(self.time_weights * self.mask(piece) * _values(a), _values(b)))

    def sigma_norm(self, a, piece: str = "sigma0") -> float:
        return math.sqrt(max(self.sigma_inner(a, a, piece), 0.0))

    @property
    def spacetime_weights(self) -> np.ndarray:
        return self.time_weights[:, None] * self.l2_weights[None, :]

    def spacetime_inner(self, u, w) -> float:
        return float(np.sum(self.spacetime_weights * _values(u) * _values(w)))

    # -- spatial spaces ---------------------------------------------------
    def _check(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape != (self.ny + 1,):
            raise DomainError(f"expected a grid function of length {self.ny + 1}, got {f.shape}")
        return f

    def l2_inner(self, f, h) -> float:
        return float(np.dot(self.l2_weights * self._check(f), self._check(h)))

    def h01_inner(self, f, h) -> float:
        df = np.diff(self._check(f))
        dh = np.diff(self._check(h))
        return float(np.dot(df, dh) / self.dy)

    def h01_apply(self, f) -> np.ndarray:
        """Discrete ``-f''`` with homogeneous Dirichlet rows."""
        f = self._check(f)
        out = np.zeros_like(f)
        out[1:-1] = (2 * f[1:-1] - f[:-2] - f[2:]) / self.dy**2
        return out

    def green(self, u) -> np.ndarray:
        """Inverse Dirichlet Laplacian: the H^-1 -> H0^1 Riesz map."""
        u = self._check(u)
        out = np.zeros_like(u)
        out[1:-1] = cho_solve_banded((self._stiff_chol, False), self.dy * u[1:-1])
        return out

    def hm1_inner(self, u, h) -> float:
        return self.l2_inner(self.green(u), h)

    def pairing(self, u, h, form: str = "l2") -> float:
        """Duality pairing of an H^-1 element with an H0^1 element.

        ``form="green"`` evaluates ``(green(u), h)_{H0^1}``; the two forms agree.
        """
        if form == "green":
            return self.h01_inner(self.green(u), h)
        if form != "l2":
            raise ValueError(f"unknown pairing form {form!r}")
        return self.l2_inner(u, h)

    def norm(self, f, which: str = "L2") -> float:
        f = self._check(f)
        which = which.upper()
        if which == "L2":
            val = self.l2_inner(f, f)
        elif which in ("H01", "H1"):
            val = self.h01_inner(f, f)
        elif which in ("HM1", "H-1"):
            val = self.hm1_inner(f, f)
        else:
            raise ValueError(f"unknown norm {which!r}")
        return math.sqrt(max(val, 0.0))


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)
