import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from perfora.analysis import (ALLOWANCE, certify, combined_tolerance, component_mass_table,
                              energy_at_infinity, existence_test, lieb_ball_search, mass_lower_bound,
                              mazya_bound_sweep, section8_experiment)
from perfora.errors import InvalidParameter
from perfora.geometry import Ball, Box, PerforatedDomain, Union, ball_perforated, point
from perfora.grid import discretize
from perfora.report import dumps
from perfora.solver import SolveConfig, lambda_pq

CFG = SolveConfig(p=2, q=4, starts=2)


def test_energy_at_infinity_table():
    d = ball_perforated(2, 0.25)
    e = energy_at_infinity(d, 2, 4, (1.0, 0.0, 0.5), 2, 1 / 8, CFG)
    assert [R for R, _ in e.table] == [0.0, 0.5, 1.0]
    vals = [v for _, v in e.table]
    assert vals == sorted(vals)
    assert e.estimate == vals[-1]
    # R = 0 removes nothing
    plain = lambda_pq(discretize(d, 2, 1 / 8), CFG)
    assert e.reports[0].grid_meta["n_dof"] == plain.grid_meta["n_dof"]
    assert vals[0] <= plain.lam
    assert vals[0] == pytest.approx(plain.lam, rel=1e-6)


def test_energy_at_infinity_errors():
    d = ball_perforated(2, 0.25)
    with pytest.raises(InvalidParameter, match="window"):
        energy_at_infinity(d, 2, 4, (2.5,), 2, 1 / 8, CFG)
    with pytest.raises(InvalidParameter):
        energy_at_infinity(d, 2, 4, (), 2, 1 / 8, CFG)
    with pytest.raises(InvalidParameter):
        energy_at_infinity(d, 2, 4, (-0.1,), 2, 1 / 8, CFG)


@given(st.floats(0.1, 100), st.floats(0.0, 0.5), st.floats(1e-12, 1e-2), st.floats(1e-12, 1e-2))
def test_certify_monotone_in_tolerance(lam, gap, t1, t2):
    lo, hi = sorted((t1, t2))
    E = lam * (1 + gap)
    ok_hi, m_hi = certify(lam, E, hi)
    ok_lo, m_lo = certify(lam, E, lo)
    assert m_lo >= m_hi
    if ok_hi:
        assert ok_lo


def test_combined_tolerance():
    assert combined_tolerance(SolveConfig(tol=1e-8), -2.0) == pytest.approx(2 * (1e-8 + ALLOWANCE))


def test_existence_unmodified_is_inconclusive():
    rep = existence_test(ball_perforated(2, 0.25), 4, 2, 1 / 8, (0.5, 1.0), CFG)
    assert rep.scalars["status"] == "inconclusive"
    assert not rep.verdicts["existence_certified"]["pass"]
    assert rep.inputs["R_list"][0] == 0.0
    text = dumps(rep)
    assert '"allowance": 0.029999999999999999' in text


def test_mass_lower_bound():
    assert mass_lower_bound(0.25, 2.0) == pytest.approx(0.75 * (1 - 2 ** -0.5), abs=1e-15)
    assert mass_lower_bound(1e-40, 2.0) > 1 - 1e-9
    assert mass_lower_bound(1 - 1e-12, 2.0) < 1e-9
    for bad in ((0.0, 2.0), (1.0, 2.0), (0.5, 1.0)):
        with pytest.raises(InvalidParameter):
            mass_lower_bound(*bad)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(1.1, 8.0))
def test_mass_lower_bound_decreasing(a, b, p):
    lo, hi = sorted((a, b))
    assert 0 < mass_lower_bound(hi, p) <= mass_lower_bound(lo, p) < 1


def test_lieb_ball_search():
    pepper = PerforatedDomain((1.0, 1.0), point(2))
    radii = (0.25, 0.5, 1.0, 1.5)
    found = lieb_ball_search(pepper, 1, 1 / 8, 0.9, radii)
    assert found.radius == 1.5 and found.fraction >= 0.9
    assert found.center == (0.0, 0.0)
    d = ball_perforated(2, 0.25)
    a = lieb_ball_search(d, 1, 1 / 16, 0.5, radii)
    b = lieb_ball_search(d, 1, 1 / 16, 0.95, radii)
    assert b.radius <= a.radius
    full = PerforatedDomain((1.0, 1.0), Box((0.0, 0.0), (0.5, 0.5)))
    with pytest.raises(InvalidParameter, match="no listed ball"):
        lieb_ball_search(full, 1, 1 / 8, 0.5, radii)
    with pytest.raises(InvalidParameter):
        lieb_ball_search(d, 1, 1 / 8, 1.0, radii)


def test_mazya_sweep_scaling_p2():
    # N = p = 2: lambda(Omega_t) t^2 is exactly dilation invariant on matched lattices
    rep = mazya_bound_sweep(Ball((0.0, 0.0), 0.25), 2.0, [(1.0, 1.0), (2.0, 2.0), (0.5, 0.5)], k=1,
                            nodes_per_cell=8, cap_h=1 / 16, cfg=SolveConfig(p=2, q=2))
    c = [row[2] for row in rep.tables["sweep"]]
    assert c[1] == pytest.approx(c[0], rel=1e-8) and c[2] == pytest.approx(c[0], rel=1e-8)
    assert rep.verdicts["constant_positive"]["pass"]


def test_mazya_sweep_rejects_zero_capacity():
    with pytest.raises(InvalidParameter, match="vanishes"):
        mazya_bound_sweep(point(2), 2.0, [(1.0, 1.0)])
    with pytest.raises(InvalidParameter):
        mazya_bound_sweep(Union(()), 2.0, [(1.0, 1.0)])


def test_section8_errors():
    with pytest.raises(InvalidParameter, match="variant"):
        section8_experiment("twisted", 0.3)
    with pytest.raises(InvalidParameter, match="enlarged"):
        section8_experiment("enlarged", 0.2)
    with pytest.raises(InvalidParameter, match="shrunk"):
        section8_experiment("shrunk", 0.3)
    with pytest.raises(InvalidParameter):
        section8_experiment("enlarged", 0.5)


def test_section8_boundary_radius_means_unmodified():
    rep = section8_experiment("enlarged", 0.25, windows=(1, 2), h=1 / 8, cfg=CFG)
    for row in rep.tables["windows"]:
        assert abs(row["difference"]) <= 1e-9 * row["lambda_base"]
    assert all(v["pass"] for v in rep.verdicts.values())


def test_section8_enlarged_small():
    rep = section8_experiment("enlarged", 0.4, windows=(1, 2), h=1 / 8, cfg=CFG)
    for row in rep.tables["windows"]:
        assert row["lambda_modified"] >= row["lambda_base"]
    assert set(rep.verdicts) == {"equality_k1", "equality_k2"}
    assert len(rep.scalars["center_of_mass_drift"]) == 2


def test_component_mass_table():
    grid = discretize(PerforatedDomain((1.0, 1.0), Box((0.0, 0.0), (0.5, 0.4))), 1, 1 / 8)
    # the holes leave horizontal strips between them
    u = np.ones(grid.n_dof)
    t = component_mass_table(grid, u, 4.0)
    shares = np.array(t["shares"])
    assert len(shares) == 2  # the outer strips hold no interior node at h = 1/8
    assert shares.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(shares, 0.5)
