"""Transport LP, alpha numbers and the UR Carleson sum."""

from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.stats import special_ortho_group

from codimlab.alpha import (FlatMeasure, alpha_number, flat_alpha_slope,
                            transport_lp, ur_carleson_sum, wasserstein_flat)
from codimlab.checks import cantor_center
from codimlab.errors import BudgetError, ScaleRangeError
from codimlab.geometry import (SineProfile, from_points, make_cantor_garnett,
                               make_flat, make_lipschitz_graph)


def _primal_sup(pos, sigma, mu, c):
    """Max of sum f (sigma - c mu) over 1-Lipschitz f vanishing on the sphere.

    Node values with pairwise Lipschitz constraints and the sphere as a
    zero anchor: ``|f_i| <= 1 - |p_i|``.
    """
    m = len(pos)
    a, b = np.triu_indices(m, 1)
    k = len(a)
    rows = np.r_[np.arange(k), np.arange(k)]
    G = sp.csr_matrix((np.r_[np.ones(k), -np.ones(k)], (rows, np.r_[a, b])),
                      shape=(k, m))
    lip = np.linalg.norm(pos[a] - pos[b], axis=1)
    A = sp.vstack([G, -G])
    bound = np.maximum(1 - np.linalg.norm(pos, axis=1), 0)
    res = linprog(-(sigma - c * mu), A_ub=A, b_ub=np.r_[lip, lip],
                  bounds=list(zip(-bound, bound)), method="highs")
    return -res.fun


def _all_pairs_transshipment(pos, sigma, mu):
    """Transshipment between every ordered node pair, density free."""
    m = len(pos)
    a, b = np.nonzero(~np.eye(m, dtype=bool))
    k = len(a)
    rows = np.r_[a, b, np.arange(m), np.arange(m), np.arange(m)]
    cols = np.r_[np.arange(k), np.arange(k), k + np.arange(m),
                 k + m + np.arange(m), np.full(m, k + 2 * m)]
    vals = np.r_[np.ones(k), -np.ones(k), np.ones(m), -np.ones(m), mu]
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, k + 2 * m + 1))
    bnd = np.maximum(1 - np.linalg.norm(pos, axis=1), 0)
    cost = np.r_[np.linalg.norm(pos[a] - pos[b], axis=1), bnd, bnd, 0.0]
    res = linprog(cost, A_eq=A, b_eq=sigma, bounds=(0, None), method="highs")
    return res.fun, res.x[-1]


def _random_nodes(seed, m=14):
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(m, 3))
    pos *= (rng.uniform(0, 1, m) / np.linalg.norm(pos, axis=1))[:, None]
    sigma = np.where(np.arange(m) < m // 2, rng.uniform(0.1, 1, m), 0.0)
    mu = np.where(np.arange(m) >= m // 2, rng.uniform(0.1, 1, m), 0.0)
    return pos, sigma, mu


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("c", [0.0, 0.7, 1.3])
def test_transport_matches_primal_lipschitz_lp(seed, c):
    pos, sigma, mu = _random_nodes(seed)
    res = transport_lp(pos, sigma, mu, c=c)
    assert res.value == pytest.approx(_primal_sup(pos, sigma, mu, c),
                                      abs=1e-9)
    assert res.gap <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_free_density_matches_all_pairs_oracle(seed):
    pos, sigma, mu = _random_nodes(seed)
    res = transport_lp(pos, sigma, mu)
    val, c = _all_pairs_transshipment(pos, sigma, mu)
    assert res.value == pytest.approx(val, abs=1e-9)
    assert transport_lp(pos, sigma, mu, c=res.c).value == pytest.approx(
        res.value, abs=1e-9)


def test_potentials_are_lipschitz():
    pos, sigma, mu = _random_nodes(7)
    res = transport_lp(pos, sigma, mu, c=1.0)
    act = np.flatnonzero((sigma > 0) | (mu > 0))
    f = res.potentials[act]
    p = pos[act]
    lip = np.linalg.norm(p[:, None] - p[None], axis=2)
    assert np.all(np.abs(f[:, None] - f[None]) <= lip + 1e-9)


def test_identical_measures_have_zero_distance():
    pos, sigma, _ = _random_nodes(3)
    assert transport_lp(pos, sigma, sigma, c=1.0).value <= 1e-12


def test_node_cap():
    pos = np.zeros((601, 3))
    with pytest.raises(BudgetError):
        transport_lp(pos, np.ones(601), np.ones(601))


def test_flat_measure_validation():
    with pytest.raises(ValueError):
        FlatMeasure(np.zeros(3), [[1, 1, 0]], 1.0)
    with pytest.raises(ValueError):
        FlatMeasure(np.zeros(3), [[1, 0, 0]], -1.0)


# ----------------------------------------------------------------------
# alpha numbers


LINE = FlatMeasure(np.zeros(3), [[1.0, 0.0, 0.0]], 1.0)


def test_flat_against_itself(flat):
    assert wasserstein_flat(flat, np.zeros(3), 1.0, LINE) <= 1e-6


@pytest.mark.parametrize("delta", [0.01, 0.02, 0.05])
def test_density_mismatch_follows_tent_slope(flat, delta):
    # the tent r - |y - x| is optimal; its line integral over r^2 is 1
    got = wasserstein_flat(flat, np.zeros(3), 1.0, LINE.with_density(1 + delta))
    assert got == pytest.approx(flat_alpha_slope(1) * delta, rel=2e-3)
    assert flat_alpha_slope(1) == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("s", [0.02, 0.04, 0.08])
def test_two_lines_cost_explicit_coupling(s):
    # moving each atom s onto the middle line costs 4 s r per r^2
    t = np.arange(-300, 301) * 0.01
    pts = np.r_[np.c_[t, np.full_like(t, s), 0 * t],
                np.c_[t, np.full_like(t, -s), 0 * t]]
    two = from_points(pts, np.full(len(pts), 0.01), 1, h=0.01)
    got = wasserstein_flat(two, np.zeros(3), 1.0, LINE.with_density(2.0))
    assert got == pytest.approx(4 * s, rel=0.02)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_flat_alpha_vanishes(flat, r):
    a = alpha_number(flat, flat.points[1000], r)
    assert a.value <= 1e-3
    assert a.lp_status == "optimal" and a.duality_gap <= 1e-8


def test_graph_alpha_profile_peaks_near_wavelength():
    g = make_lipschitz_graph(SineProfile(0.1), 0.1, 60, 0.05)
    x = g.points[len(g.points) // 2]
    vals = {r: alpha_number(g, x, r).value for r in (1.0, 3.0, 24.0)}
    assert vals[3.0] > 2 * vals[1.0] and vals[3.0] > 2 * vals[24.0]


@pytest.mark.parametrize("level", [4, 5, 6])
def test_cantor_alpha_bounded_below(level):
    c = make_cantor_garnett(level)
    a = alpha_number(c, cantor_center(c), math.sqrt(2) / 4)
    assert a.value >= 0.1


def test_alpha_below_trivial_bound(graph):
    # c = 0 is admissible, so alpha <= sigma(B) / r^d
    x = graph.points[1000]
    for r in (0.5, 2.0):
        a = alpha_number(graph, x, r)
        assert a.value <= graph.ball_mass(x, r)[0] / r


def test_certificate_never_beaten(graph):
    x = graph.points[1000]
    tilted = FlatMeasure(x, [[math.cos(0.1), math.sin(0.1), 0.0]], 0.9)
    a = alpha_number(graph, x, 1.0, certificate=tilted)
    assert a.value <= wasserstein_flat(graph, x, 1.0, tilted) + 1e-9


def test_radius_floor(flat):
    with pytest.raises(ScaleRangeError):
        alpha_number(flat, np.zeros(3), 0.1)


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rigid_motion_invariance(graph, seed):
    R = special_ortho_group.rvs(3, random_state=seed)
    shift = np.random.default_rng(seed).normal(size=3)
    moved = graph.transformed(rotation=R, shift=shift)
    x = graph.points[1200]
    a = alpha_number(graph, x, 1.5).value
    b = alpha_number(moved, R @ x + shift, 1.5).value
    assert b == pytest.approx(a, abs=1e-6)


@settings(max_examples=4, deadline=None)
@given(lam=st.floats(0.5, 4.0))
def test_scale_invariance(graph, lam):
    x = graph.points[1200]
    a = alpha_number(graph, x, 1.5).value
    b = alpha_number(graph.transformed(scale=lam), lam * x, lam * 1.5).value
    assert b == pytest.approx(a, abs=1e-6)


# ----------------------------------------------------------------------
# UR sum


def test_ur_sum_flat_vanishes():
    f = make_flat(1, 3, 8, 0.02)
    res = ur_carleson_sum(f, f.points[400], 3.2, 4)
    assert res.normalized <= 1e-4


def test_ur_sum_partial_sums():
    g = make_lipschitz_graph(SineProfile(0.1), 0.1, 8, 0.02)
    res = ur_carleson_sum(g, g.points[400], 3.2, 3)
    assert res.partial(3) == pytest.approx(res.normalized, rel=1e-12)
    assert np.all(res.per_scale >= 0)
    assert len(res.cells) > 0


def test_ur_sum_scale_floor(flat):
    with pytest.raises(ScaleRangeError):
        ur_carleson_sum(flat, flat.points[1000], 1.0, 6)


def test_ur_sum_patch_guard(flat):
    with pytest.raises(ScaleRangeError):
        ur_carleson_sum(flat, flat.points[50], 2.0, 2)
