"""End-to-end numerical checks shared by the test suite and the CLI.

Each ``check_*`` function runs one acceptance criterion, times it and
returns a :class:`CheckResult`; exceptions are caught and reported as
failures so a suite always runs to completion.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import alpha as _alpha
from . import carleson as _carleson
from . import solver as _solver
from . import whitney as _whitney
from .geometry import (SineProfile, make_cantor_garnett, make_flat,
                       make_lipschitz_graph)
from .smooth_distance import (OperatorParams, d_beta, d_beta_arrays,
                              divergence_h, flat_constant, grad_d_beta)

#: Recorded bound on the normalised UR sum of the lambda = 0.1 sine graph.
UR_GRAPH_BOUND = 5e-3
#: Recorded bound on the overlap of distinct boundary balls ``Q_i``.
QI_OVERLAP_BOUND = 80
#: Recorded bound on the normalised log-Poisson budget on the flat line
#: (measured 10.0 at epsilon = 2^-4 and 16.5 at 2^-5).
LOG_POISSON_BOUND = 20.0


@dataclass
class CheckResult:
    """Outcome of one criterion: verdict, measured quantities and timing."""

    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    elapsed: float = 0.0
    budget: float = math.inf

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"criterion {self.number:2d} {verdict}  {self.title}  "
                f"({self.elapsed:.1f} s / {self.budget:.0f} s)")

    def to_dict(self):
        return {"number": self.number, "title": self.title,
                "passed": self.passed, "elapsed": self.elapsed,
                "budget": self.budget, "details": _plain(self.details)}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _run(number, title, budget, body):
    t0 = time.perf_counter()
    try:
        ok, details = body()
    except Exception as exc:  # a crash is a failed check, not a lost suite
        ok, details = False, {"error": f"{type(exc).__name__}: {exc}"}
    elapsed = time.perf_counter() - t0
    details["within_budget"] = elapsed <= budget
    return CheckResult(number, title, bool(ok) and elapsed <= budget,
                       details, elapsed, budget)


def _spread(v):
    v = np.asarray(v, dtype=float)
    return float((v.max() - v.min()) / abs(v.mean()))


def _cylinder_points(m, rho_lo, rho_hi, x_half, seed):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(rho_lo, rho_hi, m)
    ang = rng.uniform(0, 2 * math.pi, m)
    x = rng.uniform(-x_half, x_half, m)
    return np.c_[x, rho * np.cos(ang), rho * np.sin(ang)], rho


def _sine_graph(h, extent=10.0):
    return make_lipschitz_graph(SineProfile(0.1), 0.1, extent, h)


# ----------------------------------------------------------------------
# smooth distance


def check_flat_constancy(seed=0):
    """``D_beta / dist`` is constant over 500 points near a flat line."""
    def body():
        flat = make_flat(1, 3, 10, 0.01)
        X, rho = _cylinder_points(500, 0.1, 2.0, 3.0, seed)
        ratio = d_beta(flat, 1.0, X).value / rho
        spread = _spread(ratio)
        return spread <= 1e-3, {"spread": spread,
                                "mean_ratio": float(ratio.mean()),
                                "flat_constant": flat_constant(1, 1.0)}
    return _run(1, "flat D_beta / dist constant", 10, body)


def check_gradient(seed=0):
    """Analytic gradient against central differences, flat and graph."""
    def body():
        X, _ = _cylinder_points(100, 0.1, 2.0, 3.0, seed)
        X = X + [0.0, 0.3, 0.0]
        errs = {}
        for name, bset in (("flat", make_flat(1, 3, 10, 0.01)),
                           ("graph", _sine_graph(0.01))):
            G = grad_d_beta(bset, 1.0, X).value
            step = 1e-4 * bset.distance(X)
            fd = np.zeros_like(G)
            for k in range(3):
                e = np.zeros(3)
                e[k] = 1.0
                Xp = X + step[:, None] * e
                Xm = X - step[:, None] * e
                fd[:, k] = (d_beta(bset, 1.0, Xp).value
                            - d_beta(bset, 1.0, Xm).value) / (2 * step)
            errs[name] = float((np.linalg.norm(G - fd, axis=1)
                                / np.linalg.norm(G, axis=1)).max())
        return max(errs.values()) <= 1e-5, {"max_rel_error": errs}
    return _run(2, "gradient matches finite differences", 30, body)


def check_divergence(seed=0):
    """Discrete divergence of the Newtonian field halves with the spacing."""
    def body():
        X, _ = _cylinder_points(100, 0.1, 2.0, 3.0, seed)
        X = 0.3 * X + [0.0, 0.4, 0.0]
        peaks = []
        for h, step in ((0.02, 2e-3), (0.01, 1e-3)):
            div = divergence_h(_sine_graph(h), X, step)
            peaks.append(float(np.abs(div).max()))
        factor = peaks[0] / peaks[1]
        return factor >= 1.8, {"max_abs_div": peaks, "factor": factor}
    return _run(3, "Newtonian kernel field divergence-free", 60, body)


# ----------------------------------------------------------------------
# closed forms


def check_counterexample():
    """Cosine-weighted profile, its Green function and ln-growth."""
    def body():
        u = _solver.radial_solution(3, 2, 0.0, lambda s: 1 / (2 + math.cos(s)))
        rs = np.array([1.0, math.pi, 10.0])
        err = float(np.abs(u(rs) - _carleson.counterexample_green(rs)).max())
        Rs = [1e2, 1e3, 1e4, 1e5]
        I = [_carleson.counterexample_integral(R, rule="gauss") for R in Rs]
        inc = np.diff(I)
        inc_spread = float(inc.max() / inc.min() - 1)
        r = np.linspace(1e-3, 1e4, 10_000)
        g = _carleson.counterexample_green(r) / r
        ok = (err <= 1e-8 and inc_spread <= 0.05
              and g.min() >= 1 and g.max() <= 3)
        return ok, {"profile_error": err, "I": I, "increments": inc,
                    "increment_spread": inc_spread,
                    "ratios": np.array(I[1:]) / np.array(I[:-1]),
                    "G_over_r": [float(g.min()), float(g.max())]}
    return _run(4, "counterexample closed form and ln-growth", 5, body)


def check_magic_case():
    """Radial mode at (d, n) = (1, 4): ``u(r) = r``, matching ``D_1 / dist``."""
    def body():
        u = _solver.radial_solution(4, 1, 0.0, lambda s: s ** -2.0)
        rs = np.array([0.25, 1.0, 3.0, 10.0])
        err = float(np.abs(u(rs) - rs).max())
        flat = make_flat(1, 4, 10, 0.01)
        X = np.zeros((4, 4))
        X[:, 1] = rs[:3].tolist() + [1.5]
        X[:, 2] = 0.3 * X[:, 1]
        dist = flat.distance(X)
        ratio = d_beta(flat, 1.0, X).value / dist
        d_err = float(np.abs(ratio / flat_constant(1, 1.0) - 1).max())
        return err <= 1e-8 and d_err <= 1e-6, {
            "profile_error": err, "D1_over_dist_rel_error": d_err}
    return _run(6, "magic case G = D_(n-d-2)", 1, body)


# ----------------------------------------------------------------------
# solver


def _inner_spread(grid, values, D, gamma):
    c = grid.centers()
    half = 0.25 * grid.spacing * max(grid.shape)
    inner = np.all(np.abs(c) <= half, axis=1) & grid.mask(_solver.INTERIOR)
    return _spread(values[inner] / D[inner] ** (1 - gamma))


def check_flat_green(gammas=(0.0, 0.5, -0.5), cells=(48, 96)):
    """``G / D_beta^(1-gamma)`` constant on the inner half box, flat line."""
    def body():
        flat = make_flat(1, 3, 6, 0.04)
        spreads = {}
        for gamma in gammas:
            params = OperatorParams.for_set(flat, 1.0, gamma)
            row = []
            for m in cells:
                grid = _solver.Grid.build(flat, 4.0, m)
                G = _solver.green_infinity(grid, params)
                row.append(_inner_spread(grid, G.values, G.D, gamma))
            spreads[gamma] = row
        ok = all(r[-1] <= 0.03 and r[-1] < r[0] for r in spreads.values())
        return ok, {"spread": spreads, "cells": list(cells)}
    return _run(5, "flat Green function ratio constant", 600 * len(gammas),
                body)


def check_main_functional(cells=(48, 96)):
    """Main ratio functional: exact flat profile, solver G on the graph."""
    def body():
        details = {}
        flat = make_flat(1, 3, 10, 0.01)
        p = OperatorParams.for_set(flat, 1.0, 0.0)
        grid = _solver.Grid.build(flat, 3.0, cells[0])
        mesh = _carleson.IntegrationMesh.from_grid(grid)
        fam = _carleson.BallFamily.build(flat, mesh, n_centers=32, n_radii=2,
                                         stride=4, r_min=1.0, r_max=2.0)
        exact = grid.dist.ravel() ** (1 - p.gamma)
        flat_sup = _carleson.green_ratio_functional(
            exact, flat, p, fam, mesh).sup_value
        details["flat_exact_sup"] = flat_sup
        details["n_balls"] = len(fam)

        graph = _sine_graph(0.01)
        p = OperatorParams.for_set(graph, 1.0, 0.0)
        sups, inv = [], 0.0
        fam = None
        for m in cells:
            grid = _solver.Grid.build(graph, 3.0, m)
            G = _solver.green_infinity(grid, p)
            mesh = _carleson.IntegrationMesh.from_grid(grid)
            if fam is None:
                fam = _carleson.BallFamily.build(
                    graph, mesh, n_centers=32, n_radii=2, stride=4,
                    r_min=1.0, r_max=2.0)
            rep = _carleson.green_ratio_functional(G.values, graph, p, fam,
                                                   mesh, D_alpha=G.D)
            rep7 = _carleson.green_ratio_functional(7.3 * G.values, graph, p,
                                                    fam, mesh, D_alpha=G.D)
            sups.append(rep.sup_value)
            inv = max(inv, abs(rep7.sup_value - rep.sup_value)
                      / rep.sup_value)
        details.update({"graph_sup": sups, "scale_invariance": inv,
                        "excluded_mass_max": rep.excluded_mass_max})
        ok = (flat_sup <= 1e-4 and all(np.isfinite(sups))
              and sups[-1] <= 1.2 * sups[0] and inv <= 1e-10)
        return ok, details
    return _run(7, "main ratio functional bounded", 900, body)


# ----------------------------------------------------------------------
# rectifiability


def cantor_center(bset):
    """Atom nearest the middle of the unit square (the Cantor test ball)."""
    return bset.points[np.argmin(np.linalg.norm(bset.points[:, :2] - 0.5,
                                                 axis=1))]


def check_ur_criterion():
    """UR sum: zero on flat, bounded on the graph, growing on Cantor."""
    def body():
        det = {}
        flat = make_flat(1, 3, 14, 0.01)
        rf = _alpha.ur_carleson_sum(flat, flat.points[1400], 6.4, 6)
        det["flat"] = rf.normalized

        graph = _sine_graph(0.01, extent=14.0)
        rg = _alpha.ur_carleson_sum(graph, graph.points[1400], 6.4, 6)
        s4, s6 = rg.partial(4), rg.normalized
        det["graph"] = {"S4": s4, "S6": s6, "bound": UR_GRAPH_BOUND}

        cantor = make_cantor_garnett(6)
        rc = _alpha.ur_carleson_sum(cantor, cantor_center(cantor), 0.35, 6)
        partial = [rc.partial(k) for k in range(1, 7)]
        inc = np.diff([0.0] + partial)
        # linear growth: every scale adds at least a fixed share of the mean
        det["cantor"] = {"partial": partial, "increments": inc,
                         "min_increment_over_mean":
                             float(inc.min() / inc.mean())}
        ok = (rf.normalized <= 1e-4
              and s6 <= UR_GRAPH_BOUND and abs(s6 / s4 - 1) <= 0.25
              and inc.min() >= 0.5 * inc.mean())
        return ok, det
    return _run(8, "UR criterion separates flat, graph and Cantor", 1800,
                body)


# ----------------------------------------------------------------------
# Whitney cubes and boundary balls


def check_whitney(epsilons=(2 ** -4, 2 ** -5)):
    """Disjointness, Whitney conditions and the boundary-ball family."""
    def body():
        flat = make_flat(1, 3, 10, 0.01)
        dec = _whitney.whitney_decompose(flat, 2.0, 6)
        det = {"cubes": len(dec), "overlaps": dec.count_overlaps(),
               "violations": dec.condition_violations()}
        ok = det["overlaps"] == 0 and sum(det["violations"]) == 0
        pts = flat.points[np.abs(flat.points[:, 0]) <= 3.5]
        det["balls"] = {}
        for eps in epsilons:
            spec = _whitney.CutoffSpec(np.zeros(3), 1.0, eps)
            level = _whitney.auto_max_level(_whitney.COMPACT_RULE, 3, eps)
            q_dec = _whitney.whitney_decompose(
                flat, 2.0, level, rule=_whitney.COMPACT_RULE,
                roi=_whitney.cutoff_roi(spec))
            Q = _whitney.associate_boundary_balls(q_dec, flat, spec)
            overlap = Q.overlap(pts)
            margin = float(Q.containment_margin().min())
            det["balls"][eps] = {"count": len(Q), "kinds": Q.counts(),
                                 "distinct": len(Q.distinct()[1]),
                                 "overlap": overlap, "min_margin": margin}
            ok &= overlap <= QI_OVERLAP_BOUND and margin >= -1e-12
        det["overlap_bound"] = QI_OVERLAP_BOUND
        return ok, det
    return _run(9, "Whitney cubes and boundary balls", 60, body)


def _cutoff_fields(bset, spec, mesh, beta=1.0):
    X, use = mesh.centers, mesh.usable
    masks = _whitney.region_masks(spec, bset, X[use])
    fields = {}
    for key in ("E1", "E2", "E3"):
        v = np.zeros(len(X))
        v[use] = masks[key]
        fields[key] = v
    _, grad = _whitney.cutoff_eval(spec, bset, X[use])
    D, _, _ = d_beta_arrays(bset, beta, X[use])
    v = np.zeros(len(X))
    v[use] = D * np.linalg.norm(grad, axis=1)
    fields["D grad phi"] = v
    return fields


def check_cutoff_carleson(levels=((7, 2), (8, 2)), epsilon=0.25):
    """Carleson norms of the cutoff regions and of ``D_beta grad phi``.

    The integration mesh is the sample grid of a Whitney decomposition of
    ``2B``, so cells shrink with the distance to the boundary.
    """
    def body():
        flat = make_flat(1, 3, 8, 0.01)
        spec = _whitney.CutoffSpec(np.zeros(3), 1.0, epsilon)
        cand = flat.points[np.abs(flat.points[:, 0]) <= 1.5]
        centres = cand[np.linspace(0, len(cand) - 1, 16).round().astype(int)]
        fam = _carleson.BallFamily(centres, np.array([0.5, 1.0]))

        def roi(c, half_diag):
            return np.linalg.norm(c, axis=1) <= 2 * spec.radius + half_diag

        sups = {}
        for level, m in levels:
            dec = _whitney.whitney_decompose(flat, 4.0, level,
                                             rule=_whitney.COMPACT_RULE,
                                             roi=roi)
            mesh = _carleson.IntegrationMesh.from_whitney(dec, flat, m)
            for key, v in _cutoff_fields(flat, spec, mesh).items():
                rep = _carleson.cm_norm(v, flat, fam, mesh, descriptor=key)
                sups.setdefault(key, []).append(rep.sup_value)
        change = {k: abs(v[-1] / v[0] - 1) for k, v in sups.items()}
        ok = all(np.all(np.isfinite(v)) and v[0] > 0 for v in sups.values())
        ok &= max(change.values()) <= 0.25
        return ok, {"sup": sups, "relative_change": change,
                    "n_balls": len(fam), "levels": [list(x) for x in levels]}
    return _run(10, "cutoff Carleson bounds", 300, body)


def check_log_poisson(epsilons=(2 ** -4, 2 ** -5), cells=96, n_patches=4,
                      h=0.01):
    """Log-Poisson budget over the boundary balls, and patch additivity."""
    def body():
        flat = make_flat(1, 3, 6, h)
        p = OperatorParams.for_set(flat, 1.0, 0.0)
        grid = _solver.Grid.build(flat, 4.0, cells)
        x0 = np.zeros(3)
        pole = grid.centers(np.array([_solver.corkscrew_cell(grid, x0, 1.0)]))[0]
        op = _solver.assemble(grid, p)
        hm = _solver.harmonic_masses(grid, p, pole, op=op)
        atoms = hm.atom_masses()
        budget, by_kind = {}, {}
        for eps in epsilons:
            spec = _whitney.CutoffSpec(x0, 1.0, eps)
            level = _whitney.auto_max_level(_whitney.COMPACT_RULE, 3, eps)
            dec = _whitney.whitney_decompose(flat, 2.0, level,
                                             rule=_whitney.COMPACT_RULE,
                                             roi=_whitney.cutoff_roi(spec))
            Q = _whitney.associate_boundary_balls(dec, flat, spec)
            first, _ = Q.unique_index()
            balls = list(zip(Q.centers[first], Q.radii[first]))
            budget[eps], terms = _solver.log_poisson_budget(
                flat, atoms, balls, (x0, 1.0))
            sig_B = flat.ball_mass(x0, 1.0)[0]
            kind = Q.kind[first]
            by_kind[eps] = {int(k): {"balls": int((kind == k).sum()),
                                     "budget": float(terms[kind == k].sum()
                                                     / sig_B)}
                            for k in (1, 2, 3)}
        vals = list(budget.values())
        stab = abs(vals[-1] / vals[0] - 1)

        roles = grid.roles.ravel()
        tube = np.flatnonzero(roles == _solver.TUBE)
        foot = np.atleast_2d(flat.nearest_point(grid.centers(tube)))[:, 0]
        edges = np.quantile(foot, np.linspace(0, 1, n_patches + 1))
        label = np.clip(np.searchsorted(edges, foot, side="right") - 1,
                        0, n_patches - 1)
        part = 0.0
        for k in range(n_patches):
            mask = np.zeros(grid.size, dtype=bool)
            mask[tube[label == k]] = True
            part += _solver.harmonic_measure(grid, p, pole, mask, op=op,
                                             direct=True).value
        ok = (vals[-1] <= LOG_POISSON_BOUND and stab <= 0.30
              and abs(part - 1) <= 1e-6)
        return ok, {"budget": budget, "by_kind": by_kind,
                    "relative_change": stab,
                    "bound": LOG_POISSON_BOUND, "partition_sum": part,
                    "pole": pole, "leakage": 1 - hm.total}
    return _run(11, "log-Poisson budget and harmonic-measure partition",
                1200, body)


# ----------------------------------------------------------------------
# suites

CHECKS = {
    1: check_flat_constancy,
    2: check_gradient,
    3: check_divergence,
    4: check_counterexample,
    5: check_flat_green,
    6: check_magic_case,
    7: check_main_functional,
    8: check_ur_criterion,
    9: check_whitney,
    10: check_cutoff_carleson,
    11: check_log_poisson,
}

PROFILES = {
    "full": tuple(CHECKS),
    "flat-codim2": (1, 4, 5, 6, 9, 10, 11),
    "quick": (1, 2, 3, 4, 6, 9),
}


def run_suite(criteria=None, profile="full", report=None):
    """Run the selected criteria in order; ``report`` is called per result."""
    if criteria is None:
        criteria = PROFILES[profile]
    results = []
    for k in criteria:
        res = CHECKS[k]()
        results.append(res)
        if report is not None:
            report(res)
    return results
