"""Carleson functionals, the ratio functionals and the counterexample."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from codimlab import carleson as C
from codimlab import solver as S
from codimlab import whitney as W
from codimlab.errors import DomainError, ScaleRangeError
from codimlab.geometry import SineProfile, make_flat, make_lipschitz_graph
from codimlab.smooth_distance import OperatorParams


@pytest.fixture(scope="module")
def line():
    return make_flat(1, 3, 8, 0.01)


@pytest.fixture(scope="module")
def uniform(line):
    return C.IntegrationMesh.uniform(line, 2.0, 32)


@pytest.fixture(scope="module")
def family(line, uniform):
    return C.BallFamily.build(line, uniform, n_centers=4, n_radii=2)


def _whitney_mesh(bset, level, box=1.0):
    dec = W.whitney_decompose(bset, box, level, rule=W.COMPACT_RULE)
    return C.IntegrationMesh.from_whitney(dec, bset, 2)


def test_zero_field(line, uniform, family):
    rep = C.cm_norm(np.zeros(len(uniform.centers)), line, family, uniform)
    assert np.all(rep.values == 0) and rep.sup_value == 0


def test_region_indicator_matches_shell_integral(line):
    # int over B(0, s) of 1{rho >= r/40} rho^-2, by the cylindrical shell rule
    s, a = 0.5, 1 / 40
    exact = quad(lambda r: 4 * math.pi * math.sqrt(s * s - r * r) / r,
                 a, s)[0] / (2 * s)
    spec = W.CutoffSpec(np.zeros(3), 1.0, 0.25)
    fam = C.BallFamily(np.array([[0.0, 0, 0], [0.25, 0, 0]]), np.array([s]))
    vals = []
    for level in (8, 9):
        mesh = _whitney_mesh(line, level)
        v = np.zeros(len(mesh.centers))
        v[mesh.usable] = W.region_masks(spec, line,
                                        mesh.centers[mesh.usable])["E2"]
        vals.append(C.cm_norm(v, line, fam, mesh).values)
    assert np.allclose(vals[0], exact, rtol=0.02)
    assert np.allclose(vals[0], vals[1], rtol=1e-3)


def test_constant_field_grows_like_log_of_tube(line):
    # halving the tube adds 2 pi ln 2 per unit boundary mass
    fam = C.BallFamily(np.array([[0.0, 0, 0]]), np.array([0.5]))
    vals = [C.cm_norm(np.ones(len(m.centers)), line, fam, m).values[0]
            for m in (_whitney_mesh(line, L) for L in (6, 7, 8))]
    inc = np.diff(vals)
    assert np.allclose(inc, 2 * math.pi * math.log(2), rtol=0.02)


def test_ball_nesting(line, uniform):
    rng = np.random.default_rng(0)
    f = rng.uniform(0, 1, len(uniform.centers))
    fam = C.BallFamily(np.array([[0.0, 0, 0], [0.3, 0, 0]]),
                       np.array([0.4, 0.8]))
    rows = C.cm_norm(f, line, fam, uniform).rows
    raw = np.array([r["raw"] for r in rows]).reshape(2, 2)
    assert np.all(raw[:, 0] <= raw[:, 1])


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_sum_bound(line, uniform, family, seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(len(uniform.centers), 3))
    g = rng.normal(size=(len(uniform.centers), 3))
    a = C.cm_norm(f, line, family, uniform).values
    b = C.cm_norm(g, line, family, uniform).values
    ab = C.cm_norm(f + g, line, family, uniform).values
    assert np.all(ab <= 2 * (a + b) + 1e-12)
    assert np.all(a >= 0)


def test_relabeling_permutes_rows(line, uniform, family):
    f = np.linspace(0, 1, len(uniform.centers))
    perm = C.BallFamily(family.centers[::-1], family.radii)
    a = C.cm_norm(f, line, family, uniform).values.reshape(
        len(family.centers), -1)
    b = C.cm_norm(f, line, perm, uniform).values.reshape(
        len(family.centers), -1)
    assert np.array_equal(a[::-1], b)


def test_family_floor_guard(line, uniform):
    with pytest.raises(ScaleRangeError):
        C.BallFamily.build(line, uniform, r_min=3.0)


def test_report_csv(tmp_path, line, uniform, family):
    rep = C.cm_norm(np.ones(len(uniform.centers)), line, family, uniform)
    rep.to_csv(tmp_path / "r.csv", 3)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "y1,y2,y3,radius,value,raw,sigma,excluded"
    assert len(lines) == len(family) + 1
    assert rep.summary()["n_balls"] == len(family)


# ----------------------------------------------------------------------
# ratio functionals


@pytest.fixture(scope="module")
def flat_grid(line):
    grid = S.Grid.build(line, 2.0, 32)
    mesh = C.IntegrationMesh.from_grid(grid)
    fam = C.BallFamily.build(line, mesh, n_centers=8, n_radii=2, stride=4)
    return grid, mesh, fam


def test_exact_flat_green_gives_zero(line, flat_grid):
    grid, mesh, fam = flat_grid
    p = OperatorParams.for_set(line, 1.0, 0.0)
    rep = C.green_ratio_functional(grid.dist.ravel(), line, p, fam, mesh)
    assert rep.sup_value <= 1e-4


def test_scalar_invariance(line, flat_grid):
    grid, mesh, fam = flat_grid
    p = OperatorParams.for_set(line, 1.0, 0.0)
    G = S.green_infinity(grid, p).values
    a = C.green_ratio_functional(G, line, p, fam, mesh).values
    b = C.green_ratio_functional(7.3 * G, line, p, fam, mesh).values
    assert np.abs(a - b).max() <= 1e-10 * max(1.0, np.abs(a).max())


def test_nonpositive_green_rejected(line, flat_grid):
    grid, mesh, fam = flat_grid
    p = OperatorParams.for_set(line, 1.0, 0.0)
    with pytest.raises(DomainError):
        C.green_ratio_functional(-grid.dist.ravel(), line, p, fam, mesh)


def test_ratio_functional_needs_structured_mesh(line):
    mesh = _whitney_mesh(line, 6)
    fam = C.BallFamily(np.array([[0.0, 0, 0]]), np.array([0.5]))
    p = OperatorParams.for_set(line, 1.0, 0.0)
    with pytest.raises(DomainError):
        C.green_ratio_functional(np.ones(len(mesh.centers)), line, p, fam,
                                 mesh)


def test_d_ratio_equal_exponents_vanish(line, uniform, family):
    rep = C.d_ratio_functional(line, 1.0, 1.0, family, uniform)
    assert np.all(rep.values == 0)


def test_d_ratio_flat_is_constant(line):
    X = np.array([[0.1, 0.5, 0.2], [1.0, -0.3, 0.9], [-2.0, 1.2, 0.1]])
    f = C.d_ratio_field(line, 1.0, 2.0, X)
    assert np.abs(f).max() <= 1e-3


def test_d_ratio_graph_stable_under_refinement():
    sups = []
    for h in (0.02, 0.01):
        g = make_lipschitz_graph(SineProfile(0.1), 0.1, 8, h)
        mesh = C.IntegrationMesh.uniform(g, 2.0, 32)
        fam = C.BallFamily.build(g, mesh, n_centers=4, n_radii=2)
        sups.append(C.d_ratio_functional(g, 1.0, 2.0, fam, mesh).sup_value)
    assert 0 < sups[1] < np.inf
    assert abs(sups[1] / sups[0] - 1) < 0.05


# ----------------------------------------------------------------------
# counterexample


def test_counterexample_rules_agree_at_one():
    a = C.counterexample_integral(1.0)
    b = C.counterexample_integral(1.0, rule="gauss")
    assert a > 0 and abs(a - b) <= 1e-8


def test_counterexample_decade_increments():
    I = [C.counterexample_integral(R, rule="gauss")
         for R in (1e2, 1e3, 1e4, 1e5)]
    inc = np.diff(I)
    assert inc.max() / inc.min() - 1 <= 0.05
    assert np.all(np.array(I[1:]) / np.array(I[:-1]) > 1)


def test_counterexample_green_between_r_and_3r():
    r = np.linspace(1e-3, 1e4, 10_000)
    g = C.counterexample_green(r)
    assert np.all((r <= g) & (g <= 3 * r))


def test_counterexample_domain():
    with pytest.raises(ValueError):
        C.counterexample_integral(0.5)
    with pytest.raises(ValueError):
        C.counterexample_integral(10.0, rule="simpson")
