import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings, strategies as st

from perfora.errors import InvalidParameter
from perfora.geometry import PerforatedDomain, ball_perforated, point
from perfora.grid import box_grid, dirichlet_energy, discretize, lq_norm
from perfora.report import dumps
from perfora.solver import (SolveConfig, component_masses, components, inverse_power_iteration,
                            lambda_p_infinity, lambda_pq, lambda_pq_penalized, level_set_measure,
                            penalty_weights, point_capacity, start_fields, sweep_band)


@pytest.fixture(scope="module")
def cell_grid():
    return discretize(ball_perforated(2, 0.25), 1, 1 / 16)


def test_fast_path_matches_dense_and_inverse_iteration():
    grid = discretize(ball_perforated(2, 0.3), 0, 1 / 16)
    K = grid.stiffness().toarray()
    hN = grid.cell_volume
    dense = la.eigvalsh(K, np.eye(grid.n_dof) * hN, subset_by_index=[0, 0])[0]
    fast = lambda_pq(grid, SolveConfig(p=2, q=2)).lam
    ipi, _, _ = inverse_power_iteration(grid.stiffness(), np.full(grid.n_dof, hN), np.ones(grid.n_dof))
    assert fast == pytest.approx(dense, rel=1e-10)
    assert ipi == pytest.approx(dense, rel=1e-10)


def test_general_path_agrees_with_fast_path():
    grid = discretize(ball_perforated(2, 0.3), 0, 1 / 16)
    fast = lambda_pq(grid, SolveConfig(p=2, q=2)).lam
    # q slightly above 2 approaches the eigenvalue from the general descent
    near = lambda_pq(grid, SolveConfig(p=2, q=2.0001, tol=1e-12)).lam
    assert near == pytest.approx(fast, rel=1e-3)


@pytest.mark.parametrize("p,q", [(2.0, 4.0), (3.0, 6.0), (1.5, 3.0), (2.0, 2.0)])
def test_report_invariants(cell_grid, p, q):
    rep = lambda_pq(cell_grid, SolveConfig(p=p, q=q))
    u = rep.extremal
    assert np.all(u >= 0)
    assert lq_norm(cell_grid, u, q) == pytest.approx(1.0, rel=1e-12)
    # the reported value is the unregularized quotient
    assert rep.lam == pytest.approx(dirichlet_energy(cell_grid, u, p, 0.0), rel=1e-12)
    hist = rep.history
    assert all(b <= a * (1 + 1e-14) for a, b in zip(hist, hist[1:]))
    assert rep.converged
    assert rep.diagnostics["sup_norm"] == pytest.approx(u.max())


def test_quotient_is_scale_invariant(cell_grid):
    rep = lambda_pq(cell_grid, SolveConfig(p=3, q=6))
    u = rep.extremal
    for c in (0.01, 7.0):
        val = dirichlet_energy(cell_grid, c * u, 3.0, 0.0) / lq_norm(cell_grid, c * u, 6.0) ** 3
        assert val == pytest.approx(dirichlet_energy(cell_grid, u, 3.0, 0.0), rel=1e-10)


def test_zero_dofs():
    grid = box_grid((0, 0), (1, 1), 1 / 8, lambda x: np.zeros(len(x), dtype=bool))
    rep = lambda_pq(grid, SolveConfig(p=2, q=4))
    assert rep.lam == math.inf and rep.extremal.size == 0


def test_config_validation(cell_grid):
    for bad in (SolveConfig(p=1.0), SolveConfig(q=1.5), SolveConfig(tol=0), SolveConfig(starts=0),
                SolveConfig(penalty_n=-1.0), SolveConfig(threads=0), SolveConfig(shrink=1.0)):
        with pytest.raises(InvalidParameter):
            lambda_pq(cell_grid, bad)
    assert SolveConfig(p=1.5).eps == 1e-6 and SolveConfig(p=2).eps == 1e-8
    assert "threads" not in SolveConfig(threads=3).to_dict()


def test_start_fields_order():
    grid = box_grid((0, 0), (1, 1), 1 / 8)
    s = start_fields(grid, 9, 0)
    assert len(s) == 9
    assert np.all(s[0] == 1.0)
    assert np.array_equal(s[1], np.random.default_rng(0).random(grid.n_dof))
    assert np.argmax(s[2]) == np.argmin(((grid.coords - 0.5) ** 2).sum(axis=1))
    assert np.array_equal(s[7], np.random.default_rng(1).random(grid.n_dof))
    assert all(np.any(u > 0) for u in s)


def test_penalized_infinite_index_is_plain(cell_grid):
    cfg = SolveConfig(p=2, q=4)
    plain = lambda_pq(cell_grid, cfg)
    inf = lambda_pq_penalized(cell_grid, replace(cfg, penalty_n=math.inf))
    assert inf.lam == plain.lam
    assert penalty_weights(cell_grid, math.inf) is None
    with pytest.raises(InvalidParameter):
        lambda_pq_penalized(cell_grid, cfg)


def test_penalized_monotone_in_n(cell_grid):
    cfg = SolveConfig(p=2, q=4, starts=3)
    lams, prev = [], ()
    for n in (0.0, 2.0, 8.0):
        rep = lambda_pq(cell_grid, replace(cfg, penalty_n=n), prev)
        lams.append(rep.lam)
        prev = (rep.extremal,)
        assert set(rep.diagnostics["moments"]) == {"1", "2"}
    plain = lambda_pq(cell_grid, cfg, prev).lam
    assert lams[0] >= lams[1] >= lams[2] >= plain


def test_level_set_and_components():
    grid = box_grid((0, 0), (1, 1), 1 / 4)
    u = np.linspace(0, 1, grid.n_dof)
    assert level_set_measure(grid, u, 0.5) == grid.cell_volume * np.count_nonzero(u > 0.5)
    assert level_set_measure(grid, u, 1.0) == 0.0
    assert level_set_measure(grid, u, -1.0) == grid.cell_volume * grid.n_dof

    def two(x):
        return np.abs(x[:, 0] - 0.5) > 0.2

    g2 = box_grid((0, 0), (1, 1), 1 / 8, two)
    lab = components(g2)
    assert set(lab.tolist()) == {0, 1} and lab[0] == 0
    u = np.where(lab == 1, 1.0, 0.0)
    m = component_masses(g2, u, 4.0)
    assert m["shares"] == [0.0, 1.0]
    assert component_masses(g2, np.zeros(g2.n_dof), 4.0)["zero_field"]


def test_domain_inclusion_monotone():
    h = 1 / 16
    outer = box_grid((0, 0), (1, 1), h)
    inner = box_grid((0, 0), (1, 1), h, lambda x: np.abs(x - 0.5).max(axis=1) < 0.35)
    cfg = SolveConfig(p=3, q=6, starts=3)
    r_in = lambda_pq(inner, cfg)
    # an inner extremal extended by zero is admissible on the outer grid
    seed = outer.restrict(inner.full(r_in.extremal))
    r_out = lambda_pq(outer, cfg, (seed,))
    assert r_out.lam <= r_in.lam
    assert lambda_pq(outer, cfg).lam <= r_in.lam * (1 + 1e-6)


@settings(max_examples=5)
@given(st.integers(-3, 3), st.integers(-3, 3))
def test_translation_invariance(i, j):
    h = 1 / 8
    shift = np.array([i, j]) * h * 3

    def inside(x, s):
        return ((x - 0.5 - s) ** 2).sum(axis=1) > 0.04

    a = box_grid((0, 0), (1, 1), h, lambda x: inside(x, 0))
    b = box_grid(shift, shift + 1, h, lambda x: inside(x, shift))
    cfg = SolveConfig(p=3, q=6, starts=2)
    assert lambda_pq(b, cfg).lam == pytest.approx(lambda_pq(a, cfg).lam, rel=1e-9)


def test_thread_count_does_not_change_bytes(cell_grid):
    cfg = SolveConfig(p=3, q=6)
    one = dumps(lambda_pq(cell_grid, replace(cfg, threads=1)).to_dict())
    two = dumps(lambda_pq(cell_grid, replace(cfg, threads=3)).to_dict())
    assert one == two


def test_infinity_needs_p_above_dimension(cell_grid):
    with pytest.raises(InvalidParameter, match="p > N"):
        lambda_p_infinity(cell_grid, SolveConfig(p=2, q=math.inf))
    with pytest.raises(InvalidParameter):
        lambda_pq(cell_grid, SolveConfig(p=2, q=math.inf))


def test_infinity_direct_matches_bruteforce_point_capacity():
    grid = box_grid((0, 0), (1, 1), 1 / 8)
    res = lambda_p_infinity(grid, SolveConfig(p=3, q=math.inf), q_list=(8.0, 16.0))
    brute = min(point_capacity(grid, i, 3.0)[0] for i in range(grid.n_dof))
    assert res.estimate == pytest.approx(brute, rel=1e-8)
    # |box| = 1 so every lambda_q sits above lambda_inf
    assert all(v >= res.estimate for _, v in res.table)
    lo, hi = res.band
    assert lo <= res.estimate * (1 + 1e-9) and res.estimate <= hi * (1 + 1e-9)
    assert res.report.extremal.max() == 1.0


def test_infinity_pepper_band():
    pepper = PerforatedDomain((1.0, 1.0), point(2))
    grid = discretize(pepper, 1, 1 / 16)
    res = lambda_p_infinity(grid, SolveConfig(p=3, q=math.inf))
    assert [q for q, _ in res.table] == [8.0, 16.0, 32.0, 64.0]
    lo, hi = res.band
    assert lo <= res.estimate <= hi
    assert abs(res.extrapolated - res.estimate) / res.estimate < 0.01
    assert sweep_band(grid, 3.0, [[8.0, 1.0]]) == (grid.cell_volume ** (3 / 8),
                                                   (grid.cell_volume * grid.n_dof) ** (3 / 8))
