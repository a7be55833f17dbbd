import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stackwave.domain import ControlSplit, SplitMode
from stackwave.leader import (
    DualVariable,
    LeaderNotConverged,
    LeaderOperator,
    PicardDivergence,
    TargetSpec,
    _shrink,
    check_variational_inequality,
    duality_report,
    eval_Theta,
    minimize_Theta,
    recover_leader,
    solve_base_pair,
    solve_leader,
    vi_terms,
)
from stackwave.nash import solve_optimality_system
from stackwave.oracle import assemble, dense_A, dense_leader_kkt, dense_theta
from stackwave.validation import green_identity_defect, lambda_symmetry_defect, oracle_horizon, pairing_defect, random_dual
from stackwave.wavesolver import flux_trace, terminal_pair

from conftest import make_disc


def tiny(k=0.3, sigma=10.0, ny=8, nt=24, **kw):
    return make_disc(k=k, T=oracle_horizon(k, ny, nt), sigma=sigma, ny=ny, nt=nt, cfl=1.0, **kw)


def reachable(disc, v2=None, seed=0):
    w = disc.mask1 * np.sin(2 * np.pi * disc.t / disc.config.T) * np.exp(-disc.t)
    v, _ = solve_optimality_system(disc, w, v2, tol=1e-12)
    tp = terminal_pair(disc, v)
    return TargetSpec(tp.position, tp.velocity), w


def test_dual_variable_invariants():
    with pytest.raises(ValueError):
        DualVariable(np.ones(5), np.zeros(5))
    f = DualVariable(np.r_[0, 1, 0], np.ones(3))
    assert f.f1[0] == 0 and f.f1[-1] == 0
    with pytest.raises(ValueError):
        TargetSpec(np.zeros(5), np.zeros(5), rho0=-1)


def test_base_pair(rng):
    d = make_disc()
    base = solve_base_pair(d)
    assert not base.v0_field.values.any() and not base.terminal.position.any()
    v2 = rng.standard_normal((d.nt + 1, d.ny + 1))
    base = solve_base_pair(d, v2)
    theta = flux_trace(d, base.p0_field).values
    np.testing.assert_allclose(base.v0_field.values[:, -1], theta / d.config.sigma, atol=1e-12 * np.max(np.abs(theta)))


def test_apply_A_zero_and_linear(rng):
    d = make_disc()
    op = LeaderOperator(d)
    xi0, xi1, _ = op.apply_A(np.zeros(d.nt + 1))
    assert not xi0.any() and not xi1.any()
    w, wp = rng.standard_normal((2, d.nt + 1))
    a, b = 1.7, -0.4
    mix = op.apply_A(a * w + b * wp)
    one, two = op.apply_A(w), op.apply_A(wp)
    for i in (0, 1):
        ref = a * one[i] + b * two[i]
        assert np.max(np.abs(mix[i] - ref)) <= 1e-11 * np.max(np.abs(ref))


def test_apply_A_dense_columns():
    d = tiny()
    ds = assemble(d)
    A = dense_A(ds)
    op = LeaderOperator(d, tol=1e-13)
    for col in range(A.shape[1]):
        e = np.zeros(d.nt + 1)
        e[col] = 1.0
        xi0, xi1, _ = op.apply_A(e)
        got = np.concatenate([xi0[1:-1], xi1[1:-1]])
        assert np.max(np.abs(got - A[:, col])) <= 1e-8 * np.max(np.abs(A))


def test_apply_Astar_zero():
    d = make_disc()
    w, phi, psi = LeaderOperator(d).apply_Astar(DualVariable.zeros(d))
    assert not w.values.any() and not phi.values.any() and not psi.values.any()


@pytest.mark.parametrize("split", [ControlSplit(), ControlSplit(SplitMode.TIME_PARTITION, 0.4)])
def test_adjoint_and_green_identities(split, rng):
    d = make_disc(sigma=10.0, split=split)
    op = LeaderOperator(d)
    assert max(pairing_defect(op, rng) for _ in range(5)) <= 1e-8
    assert max(green_identity_defect(op, rng) for _ in range(3)) <= 1e-8


def test_picard_and_krylov_couplings_agree(rng):
    d = make_disc(sigma=10.0)
    f = random_dual(d, rng)
    a = LeaderOperator(d, coupling="picard").apply_Astar(f)[0].values
    b = LeaderOperator(d, coupling="krylov").apply_Astar(f)[0].values
    assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(a))


def test_picard_divergence_reported_and_auto_fallback(rng):
    d = make_disc(sigma=0.5, T=3.0, ny=12)
    f = random_dual(d, rng)
    with pytest.raises(PicardDivergence) as info:
        LeaderOperator(d, coupling="picard").apply_Astar(f)
    assert info.value.contraction > 0.9
    assert "Krylov" in str(info.value)
    op = LeaderOperator(d, coupling="auto")
    w = op.apply_Astar(f)[0].values
    assert op.coupling == "krylov"
    ref = LeaderOperator(d, coupling="krylov").apply_Astar(f)[0].values
    np.testing.assert_allclose(w, ref, rtol=0, atol=1e-12 * np.max(np.abs(ref)))


def test_lambda_symmetric_psd(rng):
    op = LeaderOperator(make_disc())
    asym, quad = lambda_symmetry_defect(op, rng)
    assert asym <= 1e-8 and quad >= 0


def test_no_null_vectors():
    d = tiny()
    op = LeaderOperator(d, coupling="krylov")
    L = op.assemble()
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = random_dual(d, rng)
        w = op.apply_Astar(f)[0]
        assert d.sigma_norm(w, "sigma1") > 1e-8 * np.sqrt(op.inner(op.pack(f), op.pack(f)))
    assert np.min(np.linalg.eigvals(L).real) > 0


def test_theta_examples(rng):
    d = make_disc()
    op = LeaderOperator(d)
    base = solve_base_pair(d)
    tgt = TargetSpec(base.terminal.position, base.terminal.velocity)
    assert eval_Theta(op, DualVariable.zeros(d), tgt, base) == 0.0
    f = random_dual(d, rng)
    w = op.apply_Astar(f)[0]
    assert eval_Theta(op, f, tgt, base) == pytest.approx(0.5 * d.sigma_inner(w, w, "sigma1"), rel=1e-12)
    f_star, hist, iters, ok = minimize_Theta(op, tgt, base, mode="cg")
    assert ok and iters == 0 and not f_star.f0.any() and not f_star.f1.any()
    assert not recover_leader(op, f_star).values.any()


def test_theta_vs_dense(rng):
    d = tiny()
    ds = assemble(d)
    v2 = rng.standard_normal((d.nt + 1, d.ny + 1))
    tgt = TargetSpec(np.sin(np.pi * d.y), np.cos(np.pi * d.y) * d.y * (1 - d.y), rho0=0.1, rho1=0.2)
    op = LeaderOperator(d, tol=1e-13)
    base = solve_base_pair(d, v2)
    for _ in range(3):
        f = random_dual(d, rng)
        assert eval_Theta(op, f, tgt, base) == pytest.approx(dense_theta(ds, f, tgt, v2), rel=1e-9)


def test_large_balls_kill_dual():
    d = make_disc()
    tgt = TargetSpec(np.sin(np.pi * d.y), np.zeros(d.ny + 1), rho0=10.0, rho1=10.0)
    op = LeaderOperator(d)
    f, _, _, ok = minimize_Theta(op, tgt, solve_base_pair(d), mode="prox", tol=1e-9, max_iter=1000)
    assert ok and not f.f0.any() and not f.f1.any()


def test_cg_mode_rejects_balls():
    d = make_disc()
    tgt = TargetSpec(np.sin(np.pi * d.y), np.zeros(d.ny + 1), rho0=0.1)
    with pytest.raises(ValueError):
        minimize_Theta(LeaderOperator(d), tgt, solve_base_pair(d), mode="cg")


@pytest.mark.parametrize("k", [0.0, 0.3, 0.6])
def test_leader_vs_dense_kkt(k):
    d = tiny(k=k)
    ds = assemble(d)
    tgt = TargetSpec(np.sin(np.pi * d.y), np.zeros(d.ny + 1))
    wk, fk = dense_leader_kkt(ds, tgt)
    sol = solve_leader(d, tgt, mode="cg", tol=1e-11, max_iter=500, coupling="krylov")
    assert np.max(np.abs(sol.w1_star.values - wk)) <= 1e-6 * np.max(np.abs(wk))


def test_ball_leader_vs_dense_prox():
    d = tiny()
    ds = assemble(d)
    tgt = TargetSpec(np.sin(np.pi * d.y), np.zeros(d.ny + 1), rho0=0.05, rho1=0.0)
    wk, fk = dense_leader_kkt(ds, tgt)
    sol = solve_leader(d, tgt, mode="prox", tol=1e-11, max_iter=200000, coupling="krylov")
    assert np.max(np.abs(sol.w1_star.values - wk)) <= 1e-6 * np.max(np.abs(wk))
    assert sol.residual_l2 <= 0.05 * (1 + 1e-6)


def test_closure_and_vi():
    d = tiny()
    tgt, _ = reachable(d)
    tgt = TargetSpec(tgt.v0_target, tgt.v1_target, rho0=0.05 * d.norm(tgt.v0_target), rho1=0.05 * d.norm(tgt.v1_target, "HM1"))
    op = LeaderOperator(d, coupling="krylov", tol=1e-13)
    sol = solve_leader(d, tgt, mode="prox", tol=1e-11, max_iter=200000, op=op)
    assert sol.residual_l2 <= tgt.rho0 * (1 + 1e-6) and sol.residual_hm1 <= tgt.rho1 * (1 + 1e-6)
    worst, scale = check_variational_inequality(d, op, sol.f_star, tgt)
    assert worst >= -1e-6 * scale
    tp = sol.terminal
    dvel = tp.velocity.copy()
    dvel[[0, -1]] = 0
    dpos = tp.position.copy()
    dpos[[0, -1]] = 0
    f = (sol.f_star.f0, sol.f_star.f1)
    assert sum(vi_terms(d, dvel - tgt.v1_target, dpos - tgt.v0_target, f, f, tgt)) == 0.0
    rep = duality_report(d, op, sol, tgt)
    assert rep["feasible"] and rep["gap"] >= -1e-8 * abs(rep["primal"]) and rep["relative_gap"] <= 0.05


def test_unconverged_dual_violates_vi():
    d = tiny(k=0.3)
    tgt = TargetSpec(np.sin(np.pi * d.y), np.zeros(d.ny + 1))
    op = LeaderOperator(d, coupling="krylov", tol=1e-13)
    base = solve_base_pair(d)
    full = solve_leader(d, tgt, mode="cg", tol=1e-10, max_iter=500, op=op, base=base)
    f_half, _, _, ok = minimize_Theta(op, tgt, base, mode="cg", tol=1e-10, max_iter=max(1, full.iterations // 2))
    assert not ok
    worst, _ = check_variational_inequality(d, op, f_half, tgt)
    assert worst < 0
    with pytest.raises(LeaderNotConverged):
        solve_leader(d, tgt, mode="cg", tol=1e-10, max_iter=2, op=op, base=base)


def test_baseline_target_duality_zero():
    d = make_disc()
    base = solve_base_pair(d)
    tgt = TargetSpec(base.terminal.position, base.terminal.velocity, rho0=0.1, rho1=0.1)
    op = LeaderOperator(d)
    sol = solve_leader(d, tgt, op=op, base=base)
    rep = duality_report(d, op, sol, tgt)
    assert rep["primal"] == 0.0 and rep["dual"] == 0.0 and rep["gap"] == 0.0 and rep["feasible"]


def test_delta_requires_leader_iterate():
    d = make_disc(delta=0.5)
    base = solve_base_pair(d)
    tgt = TargetSpec(np.sin(np.pi * d.y), np.zeros(d.ny + 1))
    with pytest.raises(ValueError):
        eval_Theta(LeaderOperator(d), DualVariable.zeros(d), tgt, base)


def test_delta_lagged_dual_reaches_target():
    d = tiny(delta=0.5)
    tgt = TargetSpec(np.sin(np.pi * d.y), np.zeros(d.ny + 1))
    sol = solve_leader(d, tgt, mode="cg", tol=1e-10, max_iter=500, coupling="krylov")
    assert sol.residual_l2 <= 1e-8 * d.norm(tgt.v0_target)


@given(seed=st.integers(0, 2**31), r=st.floats(0, 5))
def test_shrink_is_block_prox(seed, r):
    z = np.random.default_rng(seed).standard_normal(6)
    out = _shrink(z, r, np.linalg.norm)
    n = np.linalg.norm(z)
    assert np.linalg.norm(out) == pytest.approx(max(n - r, 0.0), abs=1e-12)
    if n > r:
        np.testing.assert_allclose(out / np.linalg.norm(out), z / n, atol=1e-12)
