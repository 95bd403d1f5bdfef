"""Boundary sets as weighted point clouds.

A boundary set is a finite atomic approximation of an Ahlfors-regular
measure sigma carried by a d-dimensional set in R^n with d < n - 1.
Parametric generators (flat planes, Lipschitz graphs) additionally keep
their parametrisation so that downstream quadrature can refine near-field
panels and use exact distances.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetError, GeometryError, ScaleRangeError

#: Minimum trustworthy query radius, in units of the resolution ``h``.
TRUST_FACTOR = 10.0

#: Default point budget for generators.
MAX_POINTS = 4 ** 8


def ball_volume(d):
    """Volume of the unit ball in R^d (omega_1 = 2, omega_2 = pi)."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True, eq=False)
class BoundarySet:
    """Weighted point cloud approximating (Gamma, sigma).

    Parameters
    ----------
    points : ndarray, shape (N, n)
        Atom locations.
    weights : ndarray, shape (N,)
        Atom masses, in units of length^d.
    dim_d, dim_n : int
        Boundary and ambient dimensions, ``dim_d < dim_n - 1``.
    resolution_h : float
        Characteristic spacing of the atoms.
    descriptor : dict
        Generator tag (``kind``) and parameters.
    c_emp : float
        Declared empirical Ahlfors constant; sampled ratios
        ``sigma(B(x, r)) / r^d`` are expected in ``[1/c_emp, c_emp]``.
    window : float or None
        For generators sampled on a parameter patch ``|t_i| <= window`` in
        the first ``d`` coordinates; balls reaching past the patch are not
        representative of the modelled set.
    tail_start : float or None
        Flat ``d = 1`` sets only: the modelled line continues past
        ``|t| >= tail_start`` with unit density, integrated analytically.
    curve : callable or None
        ``t -> (points, speed)`` parametrisation for ``d = 1`` generators.
    """

    points: np.ndarray
    weights: np.ndarray
    dim_d: int
    dim_n: int
    resolution_h: float
    descriptor: dict
    c_emp: float = 4.0
    window: Optional[float] = None
    tail_start: Optional[float] = None
    curve: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != self.dim_n:
            raise GeometryError(f"points must have shape (N, {self.dim_n})")
        if w.shape != (pts.shape[0],):
            raise GeometryError("one weight per point required")
        if not self.dim_d < self.dim_n - 1:
            raise GeometryError(
                f"need d < n - 1, got d={self.dim_d}, n={self.dim_n}")
        if len(w) and not np.all(w > 0):
            raise GeometryError("weights must be strictly positive")
        if not self.resolution_h > 0:
            raise GeometryError("resolution_h must be positive")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    # ------------------------------------------------------------------
    @property
    def count(self):
        return self.points.shape[0]

    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def kind(self):
        return self.descriptor.get("kind", "cloud")

    @cached_property
    def tree(self):
        return cKDTree(self.points)

    @cached_property
    def diameter(self):
        # bounding-box diagonal; exact for collinear and square-symmetric sets
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(span))

    @property
    def trust_radius(self):
        return TRUST_FACTOR * self.resolution_h

    def check_distinct(self):
        """Raise if two atoms coincide."""
        if self.count > 1:
            dd, _ = self.tree.query(self.points, k=2)
            if np.any(dd[:, 1] <= 0):
                raise GeometryError("points must be pairwise distinct")

    # ------------------------------------------------------------------
    def distance(self, X):
        """Distance from query points to the modelled set.

        Flat generators use the exact distance to the plane (or patch);
        other sets use the nearest atom.
        """
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        d = self.dim_d
        if self.kind == "flat":
            normal = np.linalg.norm(X2[:, d:], axis=1)
            if self.tail_start is not None:
                out = normal
            else:
                edge = self.window + 0.5 * self.resolution_h
                excess = np.maximum(np.abs(X2[:, :d]) - edge, 0.0)
                out = np.sqrt(normal ** 2 + (excess ** 2).sum(axis=1))
        else:
            out, _ = self.tree.query(X2)
        return float(out[0]) if single else out

    def nearest_point(self, X):
        """Closest point of the modelled set (atom for point clouds)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        d = self.dim_d
        if self.kind == "flat":
            foot = np.zeros_like(X2)
            foot[:, :d] = X2[:, :d]
            if self.tail_start is None:
                edge = self.window + 0.5 * self.resolution_h
                foot[:, :d] = np.clip(foot[:, :d], -edge, edge)
        else:
            _, idx = self.tree.query(X2)
            foot = self.points[idx]
        return foot[0] if single else foot

    def ball_mass(self, centers, r, soft=True, weights=None):
        """Estimate ``sigma(B(x, r))`` by summing atoms.

        With ``soft=True`` each atom contributes with a linear ramp of width
        ``h`` across the sphere, which removes the lattice-counting jitter of
        a hard cutoff (exact for a uniform line, even for ``r < h``).
        ``weights`` replaces the atom masses, e.g. by harmonic masses.
        """
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        wts = self.weights if weights is None else np.asarray(weights)
        h = self.resolution_h
        reach = r + 0.5 * h if soft else r
        out = np.empty(len(centers))
        for k, (c, nbrs) in enumerate(
                zip(centers, self.tree.query_ball_point(centers, reach))):
            if not nbrs:
                out[k] = 0.0
                continue
            nbrs = np.asarray(nbrs)
            if soft:
                dist = np.linalg.norm(self.points[nbrs] - c, axis=1)
                frac = np.clip((r - dist) / h + 0.5, 0.0, 1.0)
                out[k] = float(wts[nbrs] @ frac)
            else:
                out[k] = float(wts[nbrs].sum())
        return out

    def interior_mask(self, r):
        """Atoms whose r-ball stays inside the sampled patch."""
        if self.window is None:
            return np.ones(self.count, dtype=bool)
        t = np.abs(self.points[:, :self.dim_d]).max(axis=1)
        return t + r <= self.window + 1e-12

    # ------------------------------------------------------------------
    def transformed(self, rotation=None, shift=None, scale=1.0):
        """Rigidly move and dilate the atoms; returns a plain point cloud."""
        R = np.eye(self.dim_n) if rotation is None else np.asarray(rotation)
        b = np.zeros(self.dim_n) if shift is None else np.asarray(shift)
        pts = scale * self.points @ R.T + b
        desc = {"kind": "cloud", "source": dict(self.descriptor),
                "scale": scale}
        return BoundarySet(pts, self.weights * scale ** self.dim_d,
                           self.dim_d, self.dim_n, self.resolution_h * scale,
                           desc, c_emp=self.c_emp)

    def descriptor_json(self):
        return {
            "kind": self.kind,
            "params": {k: v for k, v in self.descriptor.items() if k != "kind"},
            "d": self.dim_d,
            "n": self.dim_n,
            "h": self.resolution_h,
            "count": self.count,
        }

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i + 1}" for i in range(self.dim_n)]
                            + ["weight"])
            for p, w in zip(self.points, self.weights):
                writer.writerow([repr(float(v)) for v in p] + [repr(float(w))])
        return path

    def write_descriptor(self, path):
        Path(path).write_text(json.dumps(self.descriptor_json(), indent=2))


# ----------------------------------------------------------------------
# generators


def _flat_curve(n):
    def curve(t):
        t = np.asarray(t, dtype=float)
        pts = np.zeros((t.size, n))
        pts[:, 0] = t
        return pts, np.ones(t.size)
    return curve


def make_flat(d, n, extent, h, tails=None, max_points=MAX_POINTS):
    """Uniform grid on the coordinate d-plane ``{x_{d+1} = ... = x_n = 0}``.

    Points sit at ``h * k`` for integer ``k`` with ``|h k| <= extent`` in each
    of the first ``d`` coordinates, each with weight ``h^d``.  For ``d = 1``
    the line is by default continued analytically beyond the patch
    (``tails=True``) so that the set models the whole of R^1.
    """
    if not d < n - 1:
        raise GeometryError(f"need d < n - 1, got d={d}, n={n}")
    if extent <= 0 or h <= 0:
        raise GeometryError("extent and h must be positive")
    if tails is None:
        tails = d == 1
    if tails and d != 1:
        raise GeometryError("analytic tails are implemented for d = 1 only")
    m = int(math.floor(extent / h + 1e-9))
    axis = h * np.arange(-m, m + 1)
    if axis.size ** d > max_points:
        raise BudgetError(f"{axis.size ** d} points exceed budget {max_points}")
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.zeros((axis.size ** d, n))
    for i in range(d):
        pts[:, i] = mesh[i].ravel()
    weights = np.full(len(pts), h ** d)
    window = m * h
    desc = {"kind": "flat", "d": d, "n": n, "extent": extent, "h": h,
            "tails": bool(tails)}
    return BoundarySet(
        pts, weights, d, n, h, desc,
        c_emp=1.25 * ball_volume(d),
        window=window,
        tail_start=window + 0.5 * h if tails else None,
        curve=_flat_curve(n) if d == 1 else None,
    )


class Profile:
    """Graph profile ``t -> (phi_1(t), ..., phi_{n-1}(t))``.

    Subclasses provide ``values`` and ``derivative``; the base class falls
    back to central differences for the derivative.
    """

    name = "custom"

    def __init__(self, func=None, n=3):
        self.func = func
        self.n = n

    @property
    def params(self):
        return {}

    def values(self, t):
        return np.atleast_2d(np.asarray(self.func(t), dtype=float))

    def derivative(self, t, eps=1e-6):
        return (self.values(t + eps) - self.values(t - eps)) / (2 * eps)


class SineProfile(Profile):
    """``phi_1(t) = lam * sin(t)``, remaining components zero."""

    name = "sine"

    def __init__(self, lam, n=3):
        super().__init__(None, n)
        self.lam = float(lam)

    @property
    def params(self):
        return {"lam": self.lam}

    def values(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros((self.n - 1, t.size))
        out[0] = self.lam * np.sin(t)
        return out

    def derivative(self, t, eps=None):
        t = np.asarray(t, dtype=float)
        out = np.zeros((self.n - 1, t.size))
        out[0] = self.lam * np.cos(t)
        return out


class ZeroProfile(SineProfile):
    name = "zero"

    def __init__(self, n=3):
        super().__init__(0.0, n)

    @property
    def params(self):
        return {}


def _graph_curve(profile, n):
    def curve(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pts = np.empty((t.size, n))
        pts[:, 0] = t
        pts[:, 1:] = profile.values(t).T
        slope = profile.derivative(t)
        speed = np.sqrt(1.0 + (slope ** 2).sum(axis=0))
        return pts, speed
    return curve


def make_lipschitz_graph(profile, lip_const, extent, h, d=1, n=3,
                         max_points=MAX_POINTS):
    """Graph ``t -> (t, phi(t))`` sampled at ``t = h k`` with arc-length weights.

    Parameters
    ----------
    profile : Profile or callable
        Either a :class:`Profile` or a callable returning the ``n - 1``
        transverse components for an array of parameters.
    lip_const : float
        Declared Lipschitz constant; a sampled slope above
        ``1.5 * lip_const`` is rejected.
    """
    if d != 1:
        raise GeometryError("only curves (d = 1) are supported")
    if not d < n - 1:
        raise GeometryError(f"need d < n - 1, got d={d}, n={n}")
    if not isinstance(profile, Profile):
        profile = Profile(profile, n)
    m = int(math.floor(extent / h + 1e-9))
    if 2 * m + 1 > max_points:
        raise BudgetError(f"{2 * m + 1} points exceed budget {max_points}")
    t = h * np.arange(-m, m + 1)
    slope = np.sqrt((profile.derivative(t) ** 2).sum(axis=0))
    if slope.max() > 1.5 * lip_const + 1e-12:
        raise GeometryError(
            f"sampled slope {slope.max():.3g} exceeds 1.5 x declared "
            f"Lipschitz constant {lip_const}")
    curve = _graph_curve(profile, n)
    pts, speed = curve(t)
    desc = {"kind": "graph", "profile": profile.name, **profile.params,
            "lip_const": lip_const, "extent": extent, "h": h, "n": n}
    return BoundarySet(pts, speed * h, d, n, h, desc,
                       c_emp=1.25 * 2 * math.sqrt(1 + lip_const ** 2),
                       window=m * h, curve=curve)


def make_cantor_garnett(level, n=3, scale=0.25, max_points=MAX_POINTS):
    """Four-corner Cantor set in the (x1, x2)-plane, as cell centres.

    Starting from the unit square, each square keeps its four corner
    sub-squares of relative side ``scale``.  With ``scale = 1/4`` the limit
    set has dimension 1; the ``4^level`` atoms carry weight ``4^-level``.
    """
    if level < 1:
        raise GeometryError("level must be >= 1")
    if n < 3:
        raise GeometryError("need n >= 3 so that d = 1 < n - 1")
    if abs(scale - 0.25) > 1e-12:
        raise GeometryError("only the ratio 1/4 gives a 1-dimensional set")
    if 4 ** level > max_points:
        raise BudgetError(f"4^{level} points exceed budget {max_points}")
    corners = np.zeros((1, 2))
    side = 1.0
    shifts = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    for _ in range(level):
        child = side * scale
        corners = (corners[:, None, :]
                   + shifts[None, :, :] * (side - child)).reshape(-1, 2)
        side = child
    pts = np.zeros((len(corners), n))
    pts[:, :2] = corners + side / 2
    weights = np.full(len(pts), 4.0 ** -level)
    desc = {"kind": "cantor", "level": level, "n": n, "scale": scale}
    return BoundarySet(pts, weights, 1, n, side, desc, c_emp=8.0)


def from_points(points, weights, d, h=None, descriptor=None, c_emp=4.0):
    """Wrap raw atoms; ``h`` defaults to the median nearest-neighbour gap."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if h is None:
        if len(points) > 1:
            dd, _ = cKDTree(points).query(points, k=2)
            h = float(np.median(dd[:, 1]))
        else:
            h = 1.0
    desc = descriptor or {"kind": "cloud"}
    return BoundarySet(points, weights, d, points.shape[1], h, desc,
                       c_emp=c_emp)


def read_csv(path, d, h=None):
    """Load a point cloud written by :meth:`BoundarySet.to_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    bs = from_points(data[:, :-1], data[:, -1], d, h,
                     descriptor={"kind": "cloud", "path": str(path)})
    bs.check_distinct()
    return bs


def parse_geometry(spec):
    """Build a set from ``kind:key=value,...`` or from a CSV path.

    Examples: ``flat:d=1,n=3,extent=10,h=0.01``, ``graph:lam=0.1,extent=8,h=0.01``,
    ``cantor:level=6``, ``cloud.csv?d=1``.
    """
    if ":" not in spec or Path(spec.split("?")[0]).suffix == ".csv":
        path, _, query = spec.partition("?")
        opts = dict(kv.split("=") for kv in query.split(",") if kv)
        return read_csv(path, int(opts.get("d", 1)),
                        float(opts["h"]) if "h" in opts else None)
    kind, _, rest = spec.partition(":")
    opts = {}
    for kv in filter(None, rest.split(",")):
        key, _, val = kv.partition("=")
        opts[key.strip()] = val.strip()
    try:
        if kind == "flat":
            tails = opts.get("tails")
            return make_flat(int(opts.get("d", 1)), int(opts.get("n", 3)),
                             float(opts.get("extent", 10)),
                             float(opts.get("h", 0.01)),
                             tails=None if tails is None
                             else tails.lower() in ("1", "true", "yes"))
        if kind == "graph":
            n = int(opts.get("n", 3))
            lam = float(opts.get("lam", 0.1))
            return make_lipschitz_graph(
                SineProfile(lam, n), float(opts.get("lip", max(lam, 1e-12))),
                float(opts.get("extent", 10)), float(opts.get("h", 0.01)),
                n=n)
        if kind == "cantor":
            return make_cantor_garnett(int(opts.get("level", 6)),
                                       int(opts.get("n", 3)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, GeometryError):
            raise
        raise GeometryError(f"bad geometry spec {spec!r}: {exc}") from exc
    raise GeometryError(f"unknown geometry kind {kind!r}")


# ----------------------------------------------------------------------
# Ahlfors regularity


@dataclass(frozen=True)
class AhlforsReport:
    """Extreme sampled ratios ``sigma(B(x, r)) / r^d``."""

    c_low: float
    c_high: float
    samples: int
    scale_range: tuple

    @property
    def spread(self):
        return self.c_high / self.c_low

    def within(self, c_emp):
        return 1.0 / c_emp <= self.c_low and self.c_high <= c_emp


def check_ahlfors(bset, n_centers=32, n_radii=8, seed=0, radii=None):
    """Sample Ahlfors ratios over atoms and radii in ``[10 h, diam / 4]``.

    Centres are drawn (seeded) among atoms whose largest ball stays inside
    the sampled patch.  Explicit ``radii`` below the trust floor raise
    :class:`ScaleRangeError`.
    """
    if n_centers < 1 or n_radii < 1:
        raise ValueError("n_centers and n_radii must be >= 1")
    r_min = bset.trust_radius
    if radii is None:
        r_max = bset.diameter / 4
        if not r_max > r_min:
            raise ScaleRangeError(
                f"empty scale range [{r_min:.3g}, {r_max:.3g}]: set too coarse")
        radii = np.geomspace(r_min, r_max, n_radii)
    else:
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        if np.any(radii < r_min * (1 - 1e-12)):
            raise ScaleRangeError(
                f"radius {radii.min():.3g} below trust floor {r_min:.3g}")
    eligible = np.flatnonzero(bset.interior_mask(radii.max()))
    if eligible.size == 0:
        raise ScaleRangeError("no atom admits the largest radius")
    rng = np.random.default_rng(seed)
    take = rng.choice(eligible, size=min(n_centers, eligible.size),
                      replace=False)
    centers = bset.points[np.sort(take)]
    ratios = np.concatenate([bset.ball_mass(centers, r) / r ** bset.dim_d
                             for r in radii])
    return AhlforsReport(float(ratios.min()), float(ratios.max()),
                         int(ratios.size), (float(radii.min()),
                                            float(radii.max())))
