"""Whitney cubes, boundary balls and the cutoff function around a ball.

The decomposition keeps, by top-down dyadic subdivision of a root box, the
maximal cubes ``R`` with ``k R`` (the concentric cube of ``k`` times the
side) inside the complement of the boundary.  Containment is certified by
the centre-distance test ``dist(centre, Gamma) > (k/2) sqrt(n) side``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetError, DomainError, ScaleRangeError

MAX_CUBES = 4_000_000
#: Recorded bound on how many tripled cubes ``3R`` share a point.  Measured
#: 39 (paper rule) and 54 (compact rule) on the flat line, unchanged under
#: two more levels.
TRIPLE_OVERLAP_BOUND = 64


@dataclass(frozen=True)
class WhitneyRule:
    """Dilation factors of the Whitney condition.

    A cube is accepted once ``inflate * R`` avoids the boundary; every kept
    cube then satisfies ``reach * R`` meets the boundary.
    """

    inflate: float = 20.0
    reach: float = 60.0

    def accepts(self, center_dist, side, n):
        return center_dist > 0.5 * self.inflate * math.sqrt(n) * side

    def reaches(self, dist_upper, side, n):
        return dist_upper <= 0.5 * self.reach * math.sqrt(n) * side


#: Constants of the classical construction (20R inside, 60R meets Gamma).
PAPER_RULE = WhitneyRule(20.0, 60.0)
#: Compact rule used when the classical one would need millions of cubes.
COMPACT_RULE = WhitneyRule(2.0, 6.0)


@dataclass(frozen=True)
class WhitneyDecomposition:
    """Arrays describing the cubes of a decomposition.

    ``levels[i]`` is ``k`` with side ``2^-k``; ``index[i]`` is the integer
    lattice position so that ``corner = index * side``.  Cubes flagged in
    ``tube`` were cut off at ``max_level`` and are not Whitney cubes.
    """

    levels: np.ndarray
    index: np.ndarray
    center_dist: np.ndarray
    tube: np.ndarray
    rule: WhitneyRule
    box: tuple
    max_level: int
    dim_n: int

    def __len__(self):
        return len(self.levels)

    @property
    def sides(self):
        return np.ldexp(1.0, -self.levels)

    @property
    def corners(self):
        return self.index * self.sides[:, None]

    @property
    def centers(self):
        return (self.index + 0.5) * self.sides[:, None]

    @property
    def dist_to_gamma(self):
        """Lower bound on the distance from each cube to the boundary."""
        half_diag = 0.5 * math.sqrt(self.dim_n) * self.sides
        return np.maximum(self.center_dist - half_diag, 0.0)

    def whitney(self):
        """Mask of genuine (non-tube) cubes."""
        return ~self.tube

    def volume(self, which="whitney"):
        vol = self.sides ** self.dim_n
        if which == "whitney":
            return float(vol[~self.tube].sum())
        if which == "tube":
            return float(vol[self.tube].sum())
        return float(vol.sum())

    # ------------------------------------------------------------------
    def count_overlaps(self):
        """Exhaustive count of cube pairs with intersecting interiors.

        Dyadic cubes either nest or have disjoint interiors, so it suffices
        to look for repeated cubes and for kept ancestors of kept cubes.
        """
        n = self.dim_n
        keys = {}
        shift = np.int64(1 << 20)
        mult = np.array([(2 * shift) ** k for k in range(n)], dtype=np.int64)

        def encode(idx):
            return ((idx + shift) * mult).sum(axis=1)

        bad = 0
        for lev in np.unique(self.levels):
            sel = self.levels == lev
            enc = encode(self.index[sel])
            uniq = np.unique(enc)
            bad += len(enc) - len(uniq)
            keys[int(lev)] = uniq
        for lev in keys:
            sel = self.levels == lev
            idx = self.index[sel]
            for coarse, uniq in keys.items():
                if coarse >= lev:
                    continue
                anc = np.floor_divide(idx, 1 << (lev - coarse))
                bad += int(np.isin(encode(anc), uniq).sum())
        return bad

    def condition_violations(self, rule=None):
        """Cubes failing the inner or outer Whitney test (tube excluded)."""
        rule = rule or self.rule
        w = ~self.tube
        s = self.sides[w]
        inner = ~rule.accepts(self.center_dist[w], s, self.dim_n)
        outer = ~rule.reaches(self.center_dist[w], s, self.dim_n)
        return int(inner.sum()), int(outer.sum())

    def side_distance_ratio(self):
        """Range of ``side / centre distance`` over Whitney cubes."""
        w = ~self.tube
        q = self.sides[w] / self.center_dist[w]
        return float(q.min()), float(q.max())

    def dilate_overlap(self, points, factor=3.0):
        """Largest number of dilated cubes ``factor R`` containing a point."""
        points = np.atleast_2d(points)
        counts = np.zeros(len(points), dtype=int)
        w = ~self.tube
        for lev in np.unique(self.levels[w]):
            sel = w & (self.levels == lev)
            s = math.ldexp(1.0, -int(lev))
            tree = cKDTree(self.centers[sel])
            hits = tree.query_ball_point(points, 0.5 * factor * s, p=np.inf,
                                         return_length=True)
            counts += hits
        return int(counts.max()) if len(counts) else 0

    def locate(self, points):
        """Number of cubes containing each point (1 on a proper partition)."""
        points = np.atleast_2d(points)
        counts = np.zeros(len(points), dtype=int)
        for lev in np.unique(self.levels):
            sel = self.levels == lev
            s = math.ldexp(1.0, -int(lev))
            cell = np.floor(points / s).astype(np.int64)
            lut = {tuple(row) for row in self.index[sel]}
            counts += np.array([tuple(c) in lut for c in cell], dtype=int)
        return counts

    def to_csv(self, path):
        path = Path(path)
        n = self.dim_n
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level"] + [f"corner{i + 1}" for i in range(n)]
                            + ["side", "dist", "tube"])
            for lev, c, s, d, t in zip(self.levels, self.corners, self.sides,
                                       self.dist_to_gamma, self.tube):
                writer.writerow([int(lev)] + [repr(float(v)) for v in c]
                                + [repr(float(s)), repr(float(d)), int(t)])
        return path


def _root_cubes(lo, hi):
    """Coarsest dyadic tiling of the box ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        raise DomainError("box must have positive extent")
    m = int(math.floor(math.log2((hi - lo).min())))
    for k in range(-m, 60):
        s = math.ldexp(1.0, -k)
        a, b = lo / s, hi / s
        if np.allclose(a, np.round(a), atol=1e-9) and np.allclose(
                b, np.round(b), atol=1e-9):
            ranges = [np.arange(int(round(x)), int(round(y)))
                      for x, y in zip(a, b)]
            grid = np.stack(np.meshgrid(*ranges, indexing="ij"), -1)
            return k, grid.reshape(-1, len(lo)).astype(np.int64)
    raise DomainError("box corners must be dyadic rationals")


def whitney_decompose(bset, box, max_level, rule=PAPER_RULE, roi=None,
                      max_cubes=MAX_CUBES):
    """Maximal dyadic cubes of ``box`` satisfying the Whitney rule.

    Parameters
    ----------
    box : float or (lo, hi)
        Half-width of the centred cube ``[-box, box]^n`` or explicit corners
        (dyadic rationals).
    max_level : int
        Deepest level; cubes still rejected there are kept with ``tube=True``.
    roi : callable, optional
        ``roi(centers, half_diag) -> bool mask``; cubes for which it is False
        are dropped (the result then covers only the region of interest).
    max_cubes : int
        Cap on kept plus active cubes; exceeding it raises
        :class:`BudgetError` carrying the partial decomposition.
    """
    n = bset.dim_n
    if np.isscalar(box):
        lo, hi = -np.full(n, float(box)), np.full(n, float(box))
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
    level, active = _root_cubes(lo, hi)
    if max_level < level:
        raise ScaleRangeError(f"max_level {max_level} coarser than root "
                              f"level {level}")
    offsets = np.stack(np.meshgrid(*([np.arange(2)] * n), indexing="ij"),
                       -1).reshape(-1, n)
    out_lev, out_idx, out_dist, out_tube = [], [], [], []
    kept = 0
    while True:
        s = math.ldexp(1.0, -level)
        centers = (active + 0.5) * s
        if roi is not None:
            keep = roi(centers, 0.5 * math.sqrt(n) * s)
            active, centers = active[keep], centers[keep]
        cd = bset.distance(centers) if len(centers) else np.zeros(0)
        acc = rule.accepts(cd, s, n)
        final = level >= max_level
        take = np.ones_like(acc) if final else acc
        out_lev.append(np.full(int(take.sum()), level))
        out_idx.append(active[take])
        out_dist.append(cd[take])
        out_tube.append(~acc[take])
        kept += int(take.sum())
        if final:
            break
        rest = active[~acc]
        if kept + len(rest) * 2 ** n > max_cubes:
            partial = _assemble(out_lev, out_idx, out_dist, out_tube, rule,
                                (lo, hi), level, n)
            region = ((rest * s).min(axis=0), ((rest + 1) * s).max(axis=0))
            raise BudgetError(
                f"cube budget {max_cubes} exceeded below level {level}",
                partial=partial, region=region)
        active = (2 * rest[:, None, :] + offsets[None]).reshape(-1, n)
        level += 1
        if len(active) == 0:
            break
    return _assemble(out_lev, out_idx, out_dist, out_tube, rule, (lo, hi),
                     max_level, n)


def _assemble(levs, idxs, dists, tubes, rule, box, max_level, n):
    return WhitneyDecomposition(
        np.concatenate(levs).astype(np.int64),
        np.concatenate(idxs).reshape(-1, n),
        np.concatenate(dists),
        np.concatenate(tubes).astype(bool),
        rule, box, max_level, n)


# ----------------------------------------------------------------------
# cutoff function


def psi(s):
    """Plateau bump: 1 on ``|s| <= 1``, cubic bridge, 0 on ``|s| >= 2``."""
    t = np.clip(np.abs(s) - 1.0, 0.0, 1.0)
    return 1.0 - 3.0 * t ** 2 + 2.0 * t ** 3


def psi_prime(s):
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    t = np.clip(a - 1.0, 0.0, 1.0)
    inside = (a > 1.0) & (a < 2.0)
    return np.where(inside, np.sign(s) * (-6.0 * t + 6.0 * t ** 2), 0.0)


@dataclass(frozen=True)
class CutoffSpec:
    """Ball ``B(center, radius)`` centred on the boundary and a floor ``epsilon``."""

    center: np.ndarray
    radius: float
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float))
        if not (self.radius > 0 and self.epsilon > 0):
            raise ValueError("radius and epsilon must be positive")


def _geometry(spec, bset, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rho = bset.distance(X)
    if np.any(rho <= 0):
        raise DomainError("cutoff is defined off the boundary only")
    rel = X - spec.center
    dc = np.linalg.norm(rel, axis=1)
    dB = np.maximum(dc - spec.radius, 0.0)
    return X, rho, dc, dB


def region_masks(spec, bset, X):
    """Membership of points in the regions ``E0`` to ``E3``."""
    _, rho, dc, dB = _geometry(spec, bset, X)
    r, eps = spec.radius, spec.epsilon
    in2B = dc <= 2 * r
    return {
        "E0": in2B & (dB <= 20 * rho) & (rho >= eps / 2),
        "E1": in2B & (10 * rho <= dB) & (dB <= 20 * rho),
        "E2": in2B & (r / 40 <= rho) & (rho <= 2 * r),
        "E3": in2B & (eps / 2 <= rho) & (rho <= eps),
    }


def cutoff_eval(spec, bset, X):
    """Value and analytic gradient of the cutoff at query points.

    ``phi = psi(dist(X,B) / (10 rho)) psi(2 dist(X,B) / r) psi(eps / rho)``
    with ``rho = dist(X, Gamma)``; the gradient uses the product rule with
    ``grad rho = (X - foot) / rho``.
    """
    X, rho, dc, dB = _geometry(spec, bset, X)
    r, eps = spec.radius, spec.epsilon
    foot = np.atleast_2d(bset.nearest_point(X))
    grad_rho = (X - foot) / rho[:, None]
    outside = dc > spec.radius
    grad_dB = np.where(outside[:, None],
                       (X - spec.center) / np.maximum(dc, 1e-300)[:, None],
                       0.0)
    a = dB / (10 * rho)
    b = 2 * dB / r
    c = eps / rho
    pa, pb, pc = psi(a), psi(b), psi(c)
    ga = (grad_dB / (10 * rho[:, None])
          - (dB / (10 * rho ** 2))[:, None] * grad_rho)
    gb = 2 * grad_dB / r
    gc = -(eps / rho ** 2)[:, None] * grad_rho
    value = pa * pb * pc
    grad = ((psi_prime(a) * pb * pc)[:, None] * ga
            + (pa * psi_prime(b) * pc)[:, None] * gb
            + (pa * pb * psi_prime(c))[:, None] * gc)
    if np.ndim(X) and len(X) == 1:
        return float(value[0]), grad[0]
    return value, grad


# ----------------------------------------------------------------------
# boundary balls


@dataclass(frozen=True)
class BoundaryBalls:
    """Boundary balls ``Q_i = Gamma cap B(centers[i], radii[i])``.

    ``kind`` is 1, 2 or 3 for the three cases of the construction and
    ``source`` the index of the cube in the decomposition.
    """

    centers: np.ndarray
    radii: np.ndarray
    kind: np.ndarray
    source: np.ndarray
    spec: CutoffSpec = field(repr=False)

    def __len__(self):
        return len(self.radii)

    def counts(self):
        return {k: int((self.kind == k).sum()) for k in (1, 2, 3)}

    def unique_index(self, tol=1e-12):
        """First index of each distinct ball and its multiplicity."""
        key = np.round(np.c_[self.centers, self.radii] / tol).astype(np.int64)
        _, first, mult = np.unique(key, axis=0, return_index=True,
                                   return_counts=True)
        order = np.argsort(first)
        return first[order], mult[order]

    def distinct(self, tol=1e-12):
        """Unique balls and their multiplicities."""
        first, mult = self.unique_index(tol)
        return self.centers[first], self.radii[first], mult

    def containment_margin(self):
        """``3r - (|x_i - x| + r_i)``; nonnegative means ``Q_i`` lies in 3B."""
        off = np.linalg.norm(self.centers - self.spec.center, axis=1)
        return 3 * self.spec.radius - (off + self.radii)

    def overlap(self, points, distinct=True):
        """Largest number of balls containing any of the given points."""
        if distinct:
            c, r, _ = self.distinct()
        else:
            c, r = self.centers, self.radii
        points = np.atleast_2d(points)
        best = 0
        for start in range(0, len(points), 2048):
            blk = points[start:start + 2048]
            dd = np.linalg.norm(blk[:, None, :] - c[None], axis=2)
            best = max(best, int((dd < r[None]).sum(axis=1).max()))
        return best


def _cube_samples(centers, side, m):
    n = centers.shape[1]
    g = (np.arange(m) + 0.5) / m - 0.5
    off = np.stack(np.meshgrid(*([g] * n), indexing="ij"), -1).reshape(-1, n)
    return centers[:, None, :] + side * off[None]


def cutoff_roi(spec):
    """Region-of-interest predicate for cubes that can meet ``2B``."""
    def roi(centers, half_diag):
        return (np.linalg.norm(centers - spec.center, axis=1)
                <= 2 * spec.radius + half_diag)
    return roi


def select_cutoff_cubes(decomp, bset, spec, samples_per_axis=4):
    """Indices of Whitney cubes meeting ``E1 cup E2 cup E3``, with their case.

    Membership is tested on a ``samples_per_axis^n`` grid of points in
    each cube.  Returns ``(indices, kind, witness)`` where ``witness`` is
    the sample of ``R cap E_j`` closest to the boundary.
    """
    w = np.flatnonzero(~decomp.tube)
    sides = decomp.sides[w]
    half_diag = 0.5 * math.sqrt(decomp.dim_n) * sides
    near = (np.linalg.norm(decomp.centers[w] - spec.center, axis=1)
            <= 2 * spec.radius + half_diag)
    w = w[near]
    if len(w) == 0:
        return w, np.zeros(0, int), np.zeros((0, decomp.dim_n))
    pts = _cube_samples(decomp.centers[w], decomp.sides[w][:, None, None],
                        samples_per_axis)
    m = pts.shape[1]
    flat = pts.reshape(-1, decomp.dim_n)
    masks = region_masks(spec, bset, flat)
    rho = bset.distance(flat).reshape(-1, m)
    kind = np.zeros(len(w), dtype=int)
    witness = np.zeros((len(w), decomp.dim_n))
    for label in (2, 3, 1):
        mk = masks[f"E{label}"].reshape(-1, m)
        hit = mk.any(axis=1) & (kind == 0)
        score = np.where(mk, rho, np.inf)
        j = np.argmin(score, axis=1)
        witness[hit] = pts[hit, j[hit]]
        kind[hit] = label
    sel = kind > 0
    return w[sel], kind[sel], witness[sel]


def associate_boundary_balls(decomp, bset, spec, samples_per_axis=4,
                             cubes=None):
    """Boundary ball for each cube meeting the cutoff regions.

    Case 2 (cube meets ``E2``): the ball ``(x, 3r)``.  Case 3 (meets ``E3``
    but not ``E2``): centre the atom nearest to ``R cap E3``, radius
    ``epsilon``.  Case 1 (meets only ``E1``): the point ``X_i`` of
    ``R cap E1`` closest to the boundary, centre its nearest atom ``x_i``,
    radius ``|X_i - x_i|``.

    Parameters
    ----------
    cubes : array of int, optional
        Restrict to these cube indices; a cube meeting none of the regions
        raises :class:`DomainError`.
    """
    h = bset.resolution_h
    tube_side = math.ldexp(1.0, -decomp.max_level)
    tube_rad = 0.5 * decomp.rule.reach * math.sqrt(decomp.dim_n) * tube_side
    if tube_rad >= spec.epsilon / 2:
        raise ScaleRangeError(
            f"truncation radius {tube_rad:.3g} reaches the epsilon shell; "
            "increase max_level")
    if spec.epsilon < TRUST_EPS * h:
        raise ScaleRangeError("epsilon below the boundary resolution floor")
    idx, kind, witness = select_cutoff_cubes(decomp, bset, spec,
                                             samples_per_axis)
    if cubes is not None:
        cubes = np.asarray(cubes)
        missing = np.setdiff1d(cubes, idx)
        if len(missing):
            raise DomainError(f"cube {int(missing[0])} meets none of E1, E2, E3")
        keep = np.isin(idx, cubes)
        idx, kind, witness = idx[keep], kind[keep], witness[keep]
    centers = np.empty((len(idx), decomp.dim_n))
    radii = np.empty(len(idx))
    c2 = kind == 2
    centers[c2] = spec.center
    radii[c2] = 3 * spec.radius
    other = ~c2
    if other.any():
        # x_i is the nearest atom: Gamma is the point cloud here
        foot = bset.points[bset.tree.query(witness[other])[1]]
        centers[other] = foot
        radii[other] = np.where(kind[other] == 3, spec.epsilon,
                                np.linalg.norm(witness[other] - foot, axis=1))
    return BoundaryBalls(centers, radii, kind, idx, spec)


#: ``epsilon`` must exceed this many boundary spacings.
TRUST_EPS = 2.0


def auto_max_level(rule, n, epsilon):
    """Shallowest level whose truncation radius is below ``epsilon / 4``."""
    return int(math.ceil(math.log2(0.5 * rule.reach * math.sqrt(n)
                                   / (epsilon / 4))))
