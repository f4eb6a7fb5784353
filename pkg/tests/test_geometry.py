import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from perfora.errors import InvalidParameter
from perfora.geometry import (Ball, Box, Cylinder, Mask, PerforatedDomain, Union, ball_perforated, dilate,
                              extended_union_contains, inradius, inradius_bound, periodize, point,
                              shape_from_dict)


def test_dilate_examples():
    assert np.array_equal(dilate((1, 1), (0.3, -0.2)), [0.3, -0.2])
    assert np.array_equal(dilate((2, 0.5), (1, 1)), [2, 0.5])
    assert np.array_equal(dilate((3, 3), (0, 0)), [0, 0])
    with pytest.raises(InvalidParameter):
        dilate((1, 0), (1, 1))


@given(st.lists(st.floats(0.25, 4.0), min_size=2, max_size=4), st.data())
def test_dilate_inverse(t, data):
    x = data.draw(st.lists(st.floats(-10, 10), min_size=len(t), max_size=len(t)))
    back = dilate([1 / a for a in t], dilate(t, x))
    np.testing.assert_allclose(back, x, rtol=1e-15, atol=1e-15)


def test_contains_examples():
    d = ball_perforated(2, 0.25)
    assert not d.contains((1.0, 0.0))[0]
    assert d.contains((0.5, 0.5))[0]
    assert not d.contains((0.25, 0.0))[0]  # the hole boundary belongs to the hole
    mod = d.with_modification((0, 0), Ball((0.0, 0.0), 0.4))
    assert not mod.contains((0.3, 0.0))[0]
    assert d.contains((0.3, 0.0))[0]
    assert mod.contains((1.3, 0.0))[0]  # other cells keep the base hole


@given(st.floats(0.05, 0.45), st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 2 ** 31 - 1))
def test_periodicity(r, i, j, seed):
    t = (1.5, 0.75)
    d = ball_perforated(2, r, t)
    x = np.random.default_rng(seed).uniform(-2, 2, size=(200, 2))
    shifted = x + dilate(t, (i, j))
    assert np.array_equal(d.contains(x), d.contains(shifted))


def test_domain_validation():
    with pytest.raises(InvalidParameter, match="positive"):
        PerforatedDomain((1.0, 0.0), point(2))
    with pytest.raises(InvalidParameter):
        PerforatedDomain((1.0,), Ball((0.0,), 0.1))
    with pytest.raises(InvalidParameter, match="leaves"):
        PerforatedDomain((1.0, 1.0), Ball((0.4, 0.0), 0.2))
    with pytest.raises(InvalidParameter, match="two modifications"):
        PerforatedDomain((1.0, 1.0), point(2), (((0, 0), point(2)), ((0, 0), Ball((0.0, 0.0), 0.1))))
    with pytest.raises(InvalidParameter, match="cylinder k"):
        PerforatedDomain((1.0, 1.0), point(2), mode=Cylinder(2, 1.0))


def test_shape_emptiness():
    assert Union(()).is_empty
    assert not point(2).is_empty
    assert not Union((point(2),)).is_empty
    assert Mask(np.zeros((5, 5), dtype=bool), 4).is_empty


def test_json_round_trip_is_exact():
    mask = Mask.from_predicate(lambda y: np.abs(y).max(axis=1) >= 0.3, 2, 64)
    doms = [
        ball_perforated(2, 0.1 + 1e-17),
        PerforatedDomain((2.0, 0.5), Union((Ball((0.1, 0.0), 0.2), Box((0.0, 0.0), (0.05, 0.4))))),
        PerforatedDomain((1.0, 1.0), mask, (((1, -2), Ball((0.0, 0.0), 0.3)),)),
        PerforatedDomain((1.0, 3.0), point(2), mode=Cylinder(1, 1.0)),
    ]
    for d in doms:
        text = d.to_json()
        back = PerforatedDomain.from_json(text)
        assert back.to_json() == text
        x = np.random.default_rng(0).uniform(-3, 3, size=(500, 2))
        assert np.array_equal(back.contains(x), d.contains(x))


def test_json_rejects_unknown_keys():
    d = json.loads(ball_perforated(2, 0.25).to_json())
    d["colour"] = "red"
    with pytest.raises(InvalidParameter, match="colour"):
        PerforatedDomain.from_dict(d)
    with pytest.raises(InvalidParameter):
        shape_from_dict({"kind": "ball", "center": [0, 0], "radius": 0.1, "extra": 1})


def test_inradius_examples():
    pepper = inradius(PerforatedDomain((1.0, 1.0), point(2)), 1, 1 / 64)
    assert abs(pepper.value - math.sqrt(2) / 2) <= pepper.error_bound
    eps = 0.1
    thin = inradius(PerforatedDomain((1.0, 1.0), Box((0.0, 0.0), (0.5 - eps,) * 2)), 1, 1 / 80)
    assert abs(thin.value - eps * math.sqrt(2)) <= thin.error_bound
    # oracle: the farthest point from the lattice balls is a cell corner
    balls = inradius(ball_perforated(2, 0.25), 1, 1 / 64)
    assert abs(balls.value - (math.sqrt(2) / 2 - 0.25)) <= balls.error_bound
    with pytest.raises(InvalidParameter):
        inradius(ball_perforated(2, 0.25), 0, 1 / 16)


def test_inradius_bruteforce_oracle():
    rng = np.random.default_rng(5)
    d = PerforatedDomain((1.0, 1.0), Union((Ball((0.2, 0.1), 0.15), Ball((-0.25, -0.2), 0.2))))
    res = inradius(d, 1, 1 / 32)
    # brute force: hole boundary samples in a 5x5 block of cells plus the window boundary
    ang = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    pts = []
    for i in range(-2, 3):
        for j in range(-2, 3):
            for c, r in (((0.2, 0.1), 0.15), ((-0.25, -0.2), 0.2)):
                pts.append(np.stack([i + c[0] + r * np.cos(ang), j + c[1] + r * np.sin(ang)], axis=1))
    pts = np.concatenate(pts)
    cand = rng.uniform(-1.5, 1.5, size=(4000, 2))
    cand = np.vstack([cand, [res.center]])
    cand = cand[d.contains(cand)]
    dist = np.sqrt(((cand[:, None, :] - pts[None, :, :]) ** 2).sum(-1)).min(axis=1)
    dist = np.minimum(dist, 1.5 - np.abs(cand).max(axis=1))
    assert res.value <= dist.max() + res.error_bound
    assert res.value >= dist.max() - res.error_bound


@given(st.floats(0.05, 0.2), st.floats(0.0, 0.2))
def test_inradius_monotone_in_hole_and_bounded(r, dr):
    h = 1 / 32
    small = inradius(ball_perforated(2, r), 1, h)
    big = inradius(ball_perforated(2, r + dr), 1, h)
    assert big.value <= small.value + 1e-12
    bound = inradius_bound(ball_perforated(2, r)) + h * math.sqrt(2)
    assert small.value <= bound


def test_periodize_strip():
    strip = PerforatedDomain((1.0, 1.0), Union(()), mode=Cylinder(1, 1.0))
    per = periodize(strip, 64)
    assert per.domain.t == (1.0, 2.0)
    axis = -0.5 + np.arange(65) / 64
    Y2 = np.meshgrid(axis, axis, indexing="ij")[1]
    assert np.array_equal(per.domain.hole.bits, np.abs(Y2) >= 0.25)
    # holes are horizontal slabs with vertical extent [1/2, 3/2] mod 2
    for x2, inside in ((0.0, True), (0.45, True), (0.5, False), (1.0, False), (1.5, False), (1.9, True)):
        assert per.domain.contains((0.3, x2))[0] == inside
    assert not per.warning
    assert periodize(strip, 4).warning


def test_periodize_matches_extended_union():
    cyl = PerforatedDomain((1.0, 1.0), Union((Ball((0.0, 0.1), 0.2), Box((0.3, -0.2), (0.1, 0.1)))),
                           mode=Cylinder(1, 1.0))
    res = 256
    per = periodize(cyl, res).domain
    rng = np.random.default_rng(7)
    x = rng.uniform(-1.5, 1.5, size=(10_000, 2)) * np.array([1.0, 2.0])
    a = per.contains(x)
    b = extended_union_contains(cyl, x)
    bad = np.flatnonzero(a != b)
    # disagreements only within one mask spacing (scaled to the cell) of a boundary
    step = np.array([1.0, 2.0]) / res
    for i in bad:
        offs = np.array([[sx, sy] for sx in (-1, 0, 1) for sy in (-1, 0, 1)]) * step
        vals = extended_union_contains(cyl, x[i] + offs)
        assert vals.any() and not vals.all()
    assert len(bad) < 100
