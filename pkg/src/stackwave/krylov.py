"""Krylov solvers for symmetric operators in a user-supplied inner product."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class NotConverged(RuntimeError):
    def __init__(self, message, last_residual=None, iterations=None):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    residual_history: list = field(default_factory=list)
    converged: bool = True


def conjugate_gradient(apply, b, inner, tol=1e-10, max_iter=500, x0=None, callback=None):
    """CG for ``apply(x) = b`` with ``apply`` self-adjoint positive definite in ``inner``.

    Stops when the recursive residual falls below ``tol`` times the initial one.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply(x) if x0 is not None else b.copy()
    rr = inner(r, r)
    r0 = math.sqrt(max(rr, 0.0))
    hist = [r0]
    if r0 == 0.0:
        return KrylovResult(x, 0, hist)
    d = r.copy()
    for it in range(1, max_iter + 1):
        Ad = apply(d)
        dAd = inner(d, Ad)
        if dAd <= 0:
            raise NotConverged("operator is not positive definite along the search direction", hist[-1], it)
        step = rr / dAd
        x += step * d
        r -= step * Ad
        rr_new = inner(r, r)
        hist.append(math.sqrt(max(rr_new, 0.0)))
        if callback is not None:
            callback(it, x, hist[-1])
        if hist[-1] <= tol * r0:
            return KrylovResult(x, it, hist)
        d = r + (rr_new / rr) * d
        rr = rr_new
    return KrylovResult(x, max_iter, hist, converged=False)


def conjugate_residual(apply, b, inner, tol=1e-10, max_iter=500, callback=None, stop=None):
    """Conjugate-residual variant of CG for symmetric positive semidefinite ``apply``.

    Same Krylov space and cost as CG (one operator application per step) but
    the residual norm decreases monotonically.  ``stop(r)`` may replace the
    relative-residual test.
    """
    x = np.zeros_like(b)
    r = b.copy()
    r0 = math.sqrt(max(inner(r, r), 0.0))
    hist = [r0]
    if r0 == 0.0:
        return KrylovResult(x, 0, hist)
    Ar = apply(r)
    d, Ad = r.copy(), Ar.copy()
    rAr = inner(r, Ar)
    for it in range(1, max_iter + 1):
        AdAd = inner(Ad, Ad)
        if AdAd <= 0 or rAr <= 0:
            # residual orthogonal to the range of the operator: best achievable
            return KrylovResult(x, it - 1, hist, converged=False)
        step = rAr / AdAd
        x += step * d
        r -= step * Ad
        hist.append(math.sqrt(max(inner(r, r), 0.0)))
        if callback is not None:
            callback(it, x, hist[-1])
        if (stop(r) if stop is not None else hist[-1] <= tol * r0):
            return KrylovResult(x, it, hist)
        Ar = apply(r)
        rAr_new = inner(r, Ar)
        coef = rAr_new / rAr
        d = r + coef * d
        Ad = Ar + coef * Ad
        rAr = rAr_new
    return KrylovResult(x, max_iter, hist, converged=False)


def power_iteration(apply: Callable, x0, inner, n_iter=50, tol=1e-6):
    """Largest eigenvalue of a self-adjoint positive semidefinite operator."""
    x = x0 / math.sqrt(inner(x0, x0))
    lam = 0.0
    for _ in range(n_iter):
        y = apply(x)
        lam_new = inner(x, y)
        ny = math.sqrt(max(inner(y, y), 0.0))
        if ny == 0:
            return 0.0
        x = y / ny
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam
