"""Generators, serialisation and Ahlfors sampling of boundary sets."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from codimlab.errors import GeometryError, ScaleRangeError
from codimlab.geometry import (ZeroProfile, SineProfile, ball_volume,
                               check_ahlfors, from_points, make_cantor_garnett,
                               make_flat, make_lipschitz_graph, parse_geometry,
                               read_csv)


def test_flat_grid_has_2001_collinear_atoms(flat):
    assert flat.count == 2001
    assert np.all(flat.points[:, 1:] == 0)
    assert np.allclose(flat.weights, 0.01)


def test_flat_unit_ball_mass_is_diameter(flat):
    assert abs(flat.ball_mass([0, 0, 0], 1.0)[0] - 2.0) <= 0.02


@pytest.mark.parametrize("r", [0.1, 0.25, 0.5, 1.0])
def test_flat_ahlfors_ratio_matches_hard_count(flat, r):
    # counting oracle: number of grid points with |k h - x| <= r
    x = flat.points[1000 + 7]
    k = np.arange(-1000, 1001) * 0.01
    hard = 0.01 * np.count_nonzero(np.abs(k - x[0]) <= r)
    assert abs(hard / r - 2.0) <= 2 * 0.01 / r + 1e-12
    assert abs(flat.ball_mass(x, r)[0] / r - 2.0) <= 2 * 0.01 / r


def test_zero_graph_equals_flat():
    g = make_lipschitz_graph(ZeroProfile(), 0.1, 3, 0.05)
    f = make_flat(1, 3, 3, 0.05, tails=False)
    assert np.allclose(g.points, f.points)
    assert np.allclose(g.weights, f.weights)


def test_sine_graph_weights_follow_arc_length():
    lam, h = 0.1, 0.01
    g = make_lipschitz_graph(SineProfile(lam), lam, 4, h)
    t = g.points[:, 0]
    assert np.allclose(g.weights, np.sqrt(1 + lam ** 2 * np.cos(t) ** 2) * h,
                       rtol=1e-9)
    # numerical curve length against the summed weights
    length, _ = quad(lambda s: math.sqrt(1 + lam ** 2 * math.cos(s) ** 2),
                     t[0] - h / 2, t[-1] + h / 2)
    assert abs(g.total_mass - length) / length < 1e-5


def test_sine_graph_ahlfors_spread(graph):
    rep = check_ahlfors(graph, radii=np.geomspace(0.1, 1.0, 6))
    assert rep.spread <= 1.2


def test_cantor_first_level_corners():
    c = make_cantor_garnett(1)
    expect = {(0.125, 0.125), (0.875, 0.125), (0.125, 0.875), (0.875, 0.875)}
    assert {tuple(p[:2]) for p in c.points} == expect
    assert np.allclose(c.weights, 0.25)


def test_cantor_level5_total_mass():
    c = make_cantor_garnett(5)
    assert c.count == 1024
    assert abs(c.total_mass - 1.0) < 1e-12


def test_cantor_ahlfors_spread_is_level_independent():
    spreads = []
    for level in (4, 5, 6):
        c = make_cantor_garnett(level)
        r = np.geomspace(10 * c.resolution_h, 0.25, 4)
        spreads.append(check_ahlfors(c, radii=r, n_centers=64).spread)
    assert max(spreads) <= 8
    assert max(spreads) / min(spreads) < 2


def test_flat_ahlfors_report_within_two_percent(flat):
    rep = check_ahlfors(flat)
    assert abs(rep.c_low - 2) <= 0.04 and abs(rep.c_high - 2) <= 0.04


def test_cantor_ahlfors_finite(cantor6):
    rep = check_ahlfors(cantor6)
    assert 0 < rep.c_low <= rep.c_high < np.inf
    assert rep.spread <= 8


def test_radius_below_trust_floor_raises(flat):
    with pytest.raises(ScaleRangeError):
        check_ahlfors(flat, radii=[0.05])


@pytest.mark.parametrize("d, n", [(1, 2), (2, 3), (3, 4)])
def test_codimension_one_rejected(d, n):
    with pytest.raises(GeometryError):
        make_flat(d, n, 1, 0.1)


def test_nonpositive_weight_rejected():
    with pytest.raises(GeometryError):
        from_points([[0, 0, 0], [1, 0, 0]], [1.0, 0.0], 1)


def test_steep_profile_rejected():
    with pytest.raises(GeometryError):
        make_lipschitz_graph(SineProfile(1.0), 0.1, 2, 0.05)


def test_csv_roundtrip(tmp_path):
    g = make_lipschitz_graph(SineProfile(0.1), 0.1, 1, 0.05)
    back = read_csv(g.to_csv(tmp_path / "g.csv"), 1)
    assert np.array_equal(back.points, g.points)
    assert np.array_equal(back.weights, g.weights)


def test_descriptor_json(tmp_path, coarse_flat):
    coarse_flat.write_descriptor(tmp_path / "d.json")
    desc = json.loads((tmp_path / "d.json").read_text())
    assert desc["kind"] == "flat" and desc["d"] == 1 and desc["n"] == 3
    assert desc["count"] == coarse_flat.count


def test_parse_geometry_specs():
    assert parse_geometry("flat:h=0.05,extent=2").count == 81
    assert parse_geometry("cantor:level=3").count == 64
    assert parse_geometry("graph:lam=0.1,extent=1,h=0.05").kind == "graph"
    with pytest.raises(GeometryError):
        parse_geometry("sphere:r=1")


def test_points_are_immutable(coarse_flat):
    with pytest.raises(ValueError):
        coarse_flat.points[0, 0] = 1.0


# ----------------------------------------------------------------------
# properties


@settings(max_examples=25, deadline=None)
@given(d=st.integers(1, 2), extent=st.floats(0.5, 3.0),
       steps=st.integers(5, 30))
def test_flat_total_mass(d, extent, steps):
    h = extent / steps
    f = make_flat(d, d + 2, extent, h, tails=False)
    m = round(extent / h)
    expect = ((2 * m + 1) * h) ** d
    assert abs(f.total_mass - expect) / expect < 1e-6


@settings(max_examples=20, deadline=None)
@given(r=st.floats(0.2, 2.0), x=st.floats(-3, 3))
def test_flat_ball_mass_is_omega_r(r, x):
    f = make_flat(1, 3, 6, 0.01, tails=False)
    got = f.ball_mass([x, 0, 0], r)[0]
    assert abs(got - ball_volume(1) * r) <= 2 * 0.01


@settings(max_examples=20, deadline=None)
@given(level=st.integers(1, 6))
def test_cantor_mass_normalised(level):
    assert abs(make_cantor_garnett(level).total_mass - 1) < 1e-12


def test_ahlfors_stable_under_refinement():
    a = check_ahlfors(make_lipschitz_graph(SineProfile(0.1), 0.1, 8, 0.02))
    b = check_ahlfors(make_lipschitz_graph(SineProfile(0.1), 0.1, 8, 0.01))
    assert abs(a.spread - b.spread) < 0.05
