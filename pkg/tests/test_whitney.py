"""Whitney cubes, the cutoff function and the boundary balls Q_i."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codimlab.errors import BudgetError, DomainError, ScaleRangeError
from codimlab.geometry import make_flat
from codimlab.whitney import (COMPACT_RULE, PAPER_RULE, TRIPLE_OVERLAP_BOUND,
                              CutoffSpec,
                              associate_boundary_balls, auto_max_level,
                              cutoff_eval, cutoff_roi, psi, psi_prime,
                              region_masks, select_cutoff_cubes,
                              whitney_decompose)


@pytest.fixture(scope="module")
def paper_decomp(coarse_flat):
    return whitney_decompose(coarse_flat, 2.0, 6)


@pytest.fixture(scope="module")
def fine_flat():
    return make_flat(1, 3, 4, 0.005)


def test_cover_is_partition_of_box(paper_decomp):
    total = paper_decomp.volume("whitney") + paper_decomp.volume("tube")
    assert total == pytest.approx(4.0 ** 3, rel=1e-12)


def test_every_sample_point_in_exactly_one_cube(paper_decomp):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2, 2, (2000, 3))
    assert np.all(paper_decomp.locate(pts) == 1)


def test_interiors_disjoint(paper_decomp):
    assert paper_decomp.count_overlaps() == 0


def test_paper_rule_holds(paper_decomp):
    assert sum(paper_decomp.condition_violations()) == 0


def test_side_comparable_to_distance(paper_decomp):
    # accepted at this level but not the parent: dist in (10, 20] sqrt(n) side
    # up to the h-error of the cloud distance
    lo, hi = paper_decomp.side_distance_ratio()
    assert hi / lo <= 4


def test_cubes_at_equal_distance_have_sides_within_factor_four(paper_decomp):
    w = ~paper_decomp.tube
    d = paper_decomp.center_dist[w]
    s = paper_decomp.sides[w]
    for band in np.geomspace(d.min(), d.max(), 8)[:-1]:
        sel = (d >= band) & (d < 1.5 * band)
        if sel.any():
            assert s[sel].max() / s[sel].min() <= 4


@pytest.mark.parametrize("level, rule", [(5, PAPER_RULE), (6, COMPACT_RULE),
                                         (8, COMPACT_RULE)])
def test_tripled_cube_overlap_bounded(coarse_flat, level, rule):
    dec = whitney_decompose(coarse_flat, 2.0, level, rule=rule)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1.9, 1.9, (5000, 3))
    pts = pts[np.linalg.norm(pts[:, 1:], axis=1) > 0.05]
    assert dec.dilate_overlap(pts, 3.0) <= TRIPLE_OVERLAP_BOUND


def test_budget_error_carries_partial(coarse_flat):
    with pytest.raises(BudgetError) as info:
        whitney_decompose(coarse_flat, 2.0, 9, max_cubes=2000)
    assert info.value.partial is not None
    lo, hi = info.value.region
    assert np.all(hi > lo)


def test_root_level_guard(coarse_flat):
    with pytest.raises(ScaleRangeError):
        whitney_decompose(coarse_flat, 2.0, -5)


def test_cube_csv(tmp_path, paper_decomp):
    path = paper_decomp.to_csv(tmp_path / "cubes.csv")
    rows = path.read_text().splitlines()
    assert rows[0].startswith("level,corner1")
    assert len(rows) == len(paper_decomp) + 1


# ----------------------------------------------------------------------
# cutoff


def test_psi_profile():
    s = np.linspace(-3, 3, 601)
    v = psi(s)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(v[np.abs(s) <= 1] == 1) and np.all(v[np.abs(s) >= 2] == 0)
    assert np.abs(psi_prime(s)).max() <= 2


def test_psi_prime_matches_differences():
    s = np.linspace(-2.5, 2.5, 401)
    fd = (psi(s + 1e-6) - psi(s - 1e-6)) / 2e-6
    assert np.allclose(psi_prime(s), fd, atol=1e-5)


def test_cutoff_inside_ball_is_one(coarse_flat):
    spec = CutoffSpec(np.zeros(3), 1.0, 0.1)
    v, g = cutoff_eval(spec, coarse_flat, [0.1, 0.5, 0.2])
    assert v == 1.0 and np.all(g == 0)


def test_cutoff_far_outside_is_zero(coarse_flat):
    spec = CutoffSpec(np.zeros(3), 1.0, 0.1)
    v, _ = cutoff_eval(spec, coarse_flat, [0.0, 1.5, 1.5])
    assert v == 0.0


def test_cutoff_on_boundary_raises(coarse_flat):
    spec = CutoffSpec(np.zeros(3), 1.0, 0.1)
    with pytest.raises(DomainError):
        cutoff_eval(spec, coarse_flat, [0.0, 0.0, 0.0])


def _region_points(spec, bset, m, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, (40 * m, 3))
    X = X[bset.distance(X) > 0]
    masks = region_masks(spec, bset, X)
    sel = masks["E1"] | masks["E2"] | masks["E3"]
    return X[sel][:m]


def test_cutoff_gradient_bound():
    # the exact line distance keeps the product-rule gradient exact
    bset = make_flat(1, 3, 4, 0.005)
    spec = CutoffSpec(np.zeros(3), 1.0, 0.05)
    X = _region_points(spec, bset, 1000, 2)
    assert len(X) == 1000
    _, g = cutoff_eval(spec, bset, X)
    assert np.all(np.linalg.norm(g, axis=1) * bset.distance(X) <= 100)


def test_cutoff_gradient_matches_differences():
    bset = make_flat(1, 3, 4, 0.005)
    spec = CutoffSpec(np.zeros(3), 1.0, 0.05)
    X = _region_points(spec, bset, 200, 3)
    _, g = cutoff_eval(spec, bset, X)
    step = 1e-6
    for k in range(3):
        e = step * np.eye(3)[k]
        fd = (cutoff_eval(spec, bset, X + e)[0]
              - cutoff_eval(spec, bset, X - e)[0]) / (2 * step)
        assert np.abs(fd - g[:, k]).max() <= 1e-4 * max(1, np.abs(g).max())


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-2, 2), y=st.floats(0.01, 2), z=st.floats(-2, 2))
def test_cutoff_range_and_support(coarse_flat, x, y, z):
    spec = CutoffSpec(np.zeros(3), 1.0, 0.1)
    X = np.array([[x, y, z]])
    v, _ = cutoff_eval(spec, coarse_flat, X)
    assert 0.0 <= v <= 1.0
    if v > 0:
        assert region_masks(spec, coarse_flat, X)["E0"][0]


# ----------------------------------------------------------------------
# boundary balls


@pytest.fixture(scope="module")
def balls_eps6(fine_flat):
    spec = CutoffSpec(np.zeros(3), 1.0, 2.0 ** -6)
    level = auto_max_level(COMPACT_RULE, 3, spec.epsilon)
    dec = whitney_decompose(fine_flat, 2.0, level, rule=COMPACT_RULE,
                            roi=cutoff_roi(spec))
    return dec, associate_boundary_balls(dec, fine_flat, spec)


def test_balls_inside_3b(balls_eps6):
    _, Q = balls_eps6
    assert Q.containment_margin().min() >= 0


def test_every_case_present(balls_eps6):
    _, Q = balls_eps6
    assert all(v > 0 for v in Q.counts().values())


def test_case_two_is_one_ball(balls_eps6):
    # every cube meeting E2 receives the same ball (x, 3r)
    _, Q = balls_eps6
    c = Q.centers[Q.kind == 2]
    r = Q.radii[Q.kind == 2]
    assert np.unique(np.c_[c, r], axis=0).shape[0] == 1


def test_radius_comparable_to_cube_distance(balls_eps6):
    dec, Q = balls_eps6
    one = Q.kind == 1
    ratio = Q.radii[one] / dec.center_dist[Q.source[one]]
    assert ratio.max() / ratio.min() < 20


def test_overlap_counts_distinct_balls(balls_eps6, fine_flat):
    _, Q = balls_eps6
    pts = fine_flat.points[::40]
    pts = pts[np.abs(pts[:, 0]) <= 3]
    assert Q.overlap(pts) < Q.overlap(pts, distinct=False)


def test_overlap_stable_in_epsilon(fine_flat):
    pts = fine_flat.points[np.abs(fine_flat.points[:, 0]) <= 3]
    out = []
    for eps in (2.0 ** -4, 2.0 ** -5):
        spec = CutoffSpec(np.zeros(3), 1.0, eps)
        dec = whitney_decompose(fine_flat, 2.0,
                                auto_max_level(COMPACT_RULE, 3, eps),
                                rule=COMPACT_RULE, roi=cutoff_roi(spec))
        out.append(associate_boundary_balls(dec, fine_flat, spec)
                   .overlap(pts))
    assert max(out) <= 80


def test_truncation_must_clear_epsilon_shell(coarse_flat):
    spec = CutoffSpec(np.zeros(3), 1.0, 0.1)
    dec = whitney_decompose(coarse_flat, 2.0, 4, rule=COMPACT_RULE)
    with pytest.raises(ScaleRangeError):
        associate_boundary_balls(dec, coarse_flat, spec)


def test_unrelated_cube_rejected(fine_flat):
    spec = CutoffSpec(np.zeros(3), 0.25, 2.0 ** -4)
    dec = whitney_decompose(fine_flat, 2.0, auto_max_level(COMPACT_RULE, 3,
                                                           spec.epsilon),
                            rule=COMPACT_RULE)
    idx, _, _ = select_cutoff_cubes(dec, fine_flat, spec)
    far = np.setdiff1d(np.flatnonzero(~dec.tube), idx)[:1]
    with pytest.raises(DomainError):
        associate_boundary_balls(dec, fine_flat, spec, cubes=far)


def test_auto_level_clears_quarter_epsilon():
    for eps in (2.0 ** -4, 2.0 ** -5, 2.0 ** -6):
        L = auto_max_level(COMPACT_RULE, 3, eps)
        assert 0.5 * COMPACT_RULE.reach * math.sqrt(3) * 2.0 ** -L < eps / 4
        assert 0.5 * COMPACT_RULE.reach * math.sqrt(3) * 2.0 ** -(L - 1) \
            >= eps / 4
    assert PAPER_RULE.inflate == 20 and PAPER_RULE.reach == 60
