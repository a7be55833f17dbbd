import time

import numpy as np
import pytest

from stackwave.domain import ControlSplit, Discretization, Grid, ProblemConfig, SplitMode
from stackwave.leader import DualVariable, TargetSpec
from stackwave.oracle import (
    MAX_CELLS,
    OracleError,
    assemble,
    dense_A,
    dense_Astar,
    dense_follower,
    dense_leader_kkt,
    dense_theta,
    transpose_defect,
)
from stackwave.validation import ORACLE_LIMITS, oracle_agreement, oracle_cases, oracle_horizon
from stackwave.wavesolver import solve_forward


def tiny_cfg(k=0.3, sigma=10.0, ny=8, nt=24, **kw):
    return ProblemConfig(k=k, T=oracle_horizon(k, ny, nt), sigma=sigma, **kw), Grid(ny, nt, cfl=1.0)


def test_size_guard():
    cfg = ProblemConfig(k=0.3, T=0.5, sigma=10.0)
    assert 80 * 120 > MAX_CELLS
    with pytest.raises(OracleError):
        assemble(cfg, Grid(80, 120))


def test_columns_are_impulse_responses(rng):
    ds = assemble(*tiny_cfg(ny=6, nt=16))
    d = ds.disc
    b = rng.standard_normal(d.nt + 1)
    v0 = rng.standard_normal(d.ny + 1)
    v0[[0, -1]] = 0
    ref = solve_forward(d, bc=b, v0=v0).values.ravel()
    sl = ds.input_slices()
    x = np.zeros(ds.forward_matrix.shape[1])
    x[sl["bc"]] = b
    x[sl["v0"]] = v0
    np.testing.assert_allclose(ds.forward_matrix @ x, ref, atol=1e-12 * np.max(np.abs(ref)))


@pytest.mark.parametrize("k", [0.0, 0.3, 0.6])
def test_adjoint_is_exact_transpose(k):
    assert transpose_defect(assemble(*tiny_cfg(k=k))) <= 1e-14


def test_assembly_is_fast():
    t0 = time.perf_counter()
    assemble(*tiny_cfg())
    assert time.perf_counter() - t0 < 1.0


def test_zero_inputs():
    ds = assemble(*tiny_cfg())
    d = ds.disc
    assert not dense_follower(ds, np.zeros(d.nt + 1)).any()
    tgt = TargetSpec(np.zeros(d.ny + 1), np.zeros(d.ny + 1))
    assert dense_theta(ds, DualVariable.zeros(d), tgt) == 0.0
    w, f = dense_leader_kkt(ds, tgt)
    assert np.max(np.abs(w)) == 0.0 and not f.f0.any()


def test_dense_astar_is_adjoint(rng):
    ds = assemble(*tiny_cfg())
    d = ds.disc
    A = dense_A(ds)
    As = dense_Astar(ds, A)
    s1 = np.flatnonzero(d.mask1)
    w = rng.standard_normal(A.shape[1])
    x = rng.standard_normal(A.shape[0])
    lhs = d.dy * float(x @ (A @ w))
    rhs = float((d.time_weights[s1] * (As @ x)) @ w)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_time_partition_kkt_reported_singular():
    cfg, grid = tiny_cfg(split=ControlSplit(SplitMode.TIME_PARTITION, 0.3))
    ds = assemble(cfg, grid)
    tgt = TargetSpec(np.sin(np.pi * ds.disc.y), np.zeros(grid.ny + 1))
    with pytest.raises(OracleError, match="singular"):
        dense_leader_kkt(ds, tgt)


def test_delta_unsupported():
    ds = assemble(*tiny_cfg(delta=0.5))
    tgt = TargetSpec(np.zeros(9), np.zeros(9))
    with pytest.raises(OracleError):
        dense_theta(ds, DualVariable.zeros(ds.disc), tgt)


@pytest.mark.parametrize("case", list(oracle_cases()))
def test_iterative_matches_dense(case):
    res = oracle_agreement(*case)
    for name, val in res.items():
        assert val <= ORACLE_LIMITS[name], (name, val)
