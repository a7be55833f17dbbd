import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from stackwave.domain import DomainError
from stackwave.validation import dot_product_defect
from stackwave.wavesolver import (
    SolverError,
    SpaceTimeField,
    energy,
    flux_trace,
    flux_trace_fd,
    solve_backward_adjoint,
    solve_forward,
    terminal_pair,
)

from conftest import make_disc

_y, _t = sp.symbols("y t")


def manufactured(expr, k):
    """Source, exact solution and initial velocity for the transformed operator."""
    a = (1 - k**2 * _y**2) / (1 + k * _t) ** 2
    c = -2 * k * _y / (1 + k * _t)
    res = sp.diff(expr, _t, 2) - sp.diff(a * sp.diff(expr, _y), _y) + c * sp.diff(expr, _y, _t)
    lam = lambda e: sp.lambdify((_y, _t), e, "numpy")  # noqa: E731
    return lam(res), lam(expr), lam(sp.diff(expr, _t))


def mms_errors(expr, k, sizes):
    f, ex, dex = manufactured(expr, k)
    errs = []
    for ny in sizes:
        d = make_disc(k=k, ny=ny, nt=4 * ny)
        Y, T = np.meshgrid(d.y, d.t)
        E = ex(Y, T) * np.ones_like(Y)
        F = f(Y, T) * np.ones_like(Y)
        V = solve_forward(d, E[:, -1], F, E[0], dex(d.y, 0 * d.y) * np.ones_like(d.y))
        errs.append(np.max(np.abs(V.values - E)))
    return np.array(errs)


def orders(errs):
    return np.log2(errs[:-1] / errs[1:])


def test_zero_data_zero_field(disc):
    assert not solve_forward(disc).values.any()
    assert not solve_backward_adjoint(disc).values.any()
    assert not flux_trace(disc, solve_backward_adjoint(disc)).values.any()
    tp = terminal_pair(disc, solve_forward(disc))
    assert not tp.position.any() and not tp.velocity.any()


def test_standing_wave():
    d = make_disc(k=0.0, ny=64, nt=256)
    V = solve_forward(d, v0=np.sin(np.pi * d.y))
    Y, T = np.meshgrid(d.y, d.t)
    assert np.max(np.abs(V.values - np.cos(np.pi * T) * np.sin(np.pi * Y))) < 1e-3
    tp = terminal_pair(d, V)
    assert np.max(np.abs(tp.position + np.sin(np.pi * d.y))) < 1e-3
    assert np.max(np.abs(tp.velocity)) < 1e-2


def test_boundary_rows():
    d = make_disc()
    b = np.sin(3 * d.t)
    V = solve_forward(d, bc=b, v0=np.sin(np.pi * d.y))
    np.testing.assert_array_equal(V.values[:, -1], b)
    np.testing.assert_array_equal(V.values[:, 0], 0.0)


@pytest.mark.parametrize("k", [0.3, 0.6])
def test_polynomial_manufactured_order(k):
    errs = mms_errors(_t**2 * _y * (1 - _y), k, [16, 32, 64])
    assert np.all(orders(errs) >= 1.9)


def test_polynomial_exact_at_rest():
    # t^2 y(1-y) is reproduced exactly by the k = 0 scheme
    errs = mms_errors(_t**2 * _y * (1 - _y), 0.0, [16])
    assert errs[0] < 1e-12


def test_terminal_velocity_exact_on_linear():
    d = make_disc()
    v1 = np.sin(np.pi * d.y)
    tp = terminal_pair(d, np.outer(d.t, v1))
    np.testing.assert_allclose(tp.velocity, v1, atol=1e-12)
    with pytest.raises(SolverError):
        terminal_pair(d, np.zeros((2, d.ny + 1)))


def test_energy_conservation_at_rest():
    d = make_disc(k=0.0, T=4.0, ny=128, nt=1024)
    e = energy(d, solve_forward(d, v0=np.sin(np.pi * d.y) + 0.5 * np.sin(3 * np.pi * d.y)))
    assert np.max(np.abs(e - e[0])) / e[0] <= 0.01


@pytest.mark.parametrize("k", [0.0, 0.3, 0.6])
def test_dot_product(k, rng):
    d = make_disc(k=k, ny=24, nt=96)
    assert max(dot_product_defect(d, rng) for _ in range(5)) < 1e-12


@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_superposition(seed, a, b):
    d = make_disc(ny=12)
    rng = np.random.default_rng(seed)
    args = [
        (rng.standard_normal(d.nt + 1), rng.standard_normal((d.nt + 1, d.ny + 1)), rng.standard_normal(d.ny + 1),
         rng.standard_normal(d.ny + 1))
        for _ in range(2)
    ]
    V1 = solve_forward(d, *args[0]).values
    V2 = solve_forward(d, *args[1]).values
    mix = [a * x + b * y for x, y in zip(*args)]
    V = solve_forward(d, *mix).values
    scale = max(np.max(np.abs(a * V1)), np.max(np.abs(b * V2)), 1e-300)
    assert np.max(np.abs(V - a * V1 - b * V2)) <= 1e-13 * scale * 10


def test_trace_against_dense_transpose(rng):
    from stackwave.oracle import assemble

    d = make_disc(k=0.0, ny=8, nt=24)
    ds = assemble(d)
    v = solve_forward(d, bc=rng.standard_normal(d.nt + 1))
    w = d.alpha_t[:, None] * (v.values - rng.standard_normal(v.shape))
    theta = flux_trace(d, solve_backward_adjoint(d, w)).values
    dense = ds.trace_matrix @ w.ravel()
    np.testing.assert_allclose(theta, dense, atol=1e-10 * np.max(np.abs(dense)))


def test_discrete_green_identity(rng):
    d = make_disc(k=0.4, ny=24, nt=96)
    what = rng.standard_normal(d.nt + 1)
    vhat = solve_forward(d, bc=what)
    w = rng.standard_normal((d.nt + 1, d.ny + 1))
    p = solve_backward_adjoint(d, w)
    lhs = d.spacetime_inner(w, vhat)
    rhs = -d.sigma_inner(flux_trace(d, p), what)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_trace_weights(disc, rng):
    p = solve_backward_adjoint(disc, rng.standard_normal((disc.nt + 1, disc.ny + 1)))
    a = flux_trace(disc, p, "inv_alpha_sq").values
    b = flux_trace(disc, p, "inv_alpha_4").values
    np.testing.assert_allclose(b * disc.alpha_t**2, a, rtol=1e-14)
    with pytest.raises(ValueError):
        flux_trace(disc, p, "inv_alpha")
    bad = SpaceTimeField(np.ones((disc.nt + 1, disc.ny + 1)))
    with pytest.raises(SolverError):
        flux_trace(disc, bad)


@pytest.mark.parametrize("k", [0.3, 0.6])
def test_trace_matches_fd_diagnostic(k):
    # away from the two end time levels the consistent trace is a second-order flux
    diffs = []
    for ny in (32, 64, 128):
        d = make_disc(k=k, ny=ny, nt=4 * ny)
        Y, T = np.meshgrid(d.y, d.t)
        p = solve_backward_adjoint(d, np.cos(2 * Y) * np.sin(3 * T) * (1 + Y))
        e = flux_trace(d, p).values - flux_trace_fd(d, p).values
        window = (d.t >= 0.1) & (d.t <= 0.9)
        diffs.append(np.max(np.abs(e[window])))
    assert np.all(orders(np.array(diffs)) >= 1.9)


def test_input_validation(disc):
    with pytest.raises(SolverError):
        solve_forward(disc, bc=np.zeros(3))
    with pytest.raises(SolverError):
        solve_forward(disc, bc=np.full(disc.nt + 1, np.nan))
    with pytest.raises(SolverError):
        solve_backward_adjoint(disc, np.zeros((2, 2)))
    with pytest.raises(DomainError):
        make_disc(ny=32, nt=10)
