"""Carleson-measure functionals of fields sampled on cells.

A field ``f`` satisfies the Carleson measure condition when
``int_{B(y,s)} |f|^2 dist(X, Gamma)^(d-n) dX <= C sigma(B(y,s))`` for all
boundary balls.  Here the integral is a cell sum over a finite ball family
and the report keeps the normalised value of each ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import roots_legendre
from scipy.spatial import cKDTree

from .errors import DomainError, ScaleRangeError
from .smooth_distance import d_beta_arrays
from .solver import INTERIOR, TUBE


@dataclass(eq=False)
class IntegrationMesh:
    """Cell centres, volumes and distances; tube cells are excluded.

    ``volume`` is a scalar for uniform meshes and one value per cell for
    meshes built from a Whitney decomposition.
    """

    centers: np.ndarray
    volume: float
    dist: np.ndarray
    tube: np.ndarray
    spacing: float
    shape: tuple = None
    usable: np.ndarray = None

    @classmethod
    def from_grid(cls, grid):
        roles = grid.roles.ravel()
        return cls(grid.centers(), grid.spacing ** grid.n, grid.dist.ravel(),
                   roles == TUBE, grid.spacing, grid.shape,
                   roles == INTERIOR)

    @classmethod
    def uniform(cls, bset, box, cells, tube_radius=None):
        """Cell-centred mesh of ``[-box, box]^n`` without solver roles."""
        n = bset.dim_n
        spacing = 2.0 * box / cells
        axis = -box + (np.arange(cells) + 0.5) * spacing
        centers = np.stack(np.meshgrid(*([axis] * n), indexing="ij"),
                           -1).reshape(-1, n)
        dist = bset.distance(centers)
        if tube_radius is None:
            tube_radius = max(2 * spacing, 5 * bset.resolution_h)
        tube = dist <= tube_radius
        return cls(centers, spacing ** n, dist, tube, spacing,
                   (cells,) * n, ~tube)

    @classmethod
    def from_whitney(cls, decomp, bset, samples_per_axis=2):
        """Sample points of Whitney cubes, each carrying its share of volume.

        Cube sides are comparable to the distance to the boundary, so
        ``dist^(d-n)``-weighted integrals are resolved evenly across
        scales; the truncation cubes form the tube.
        """
        from .whitney import _cube_samples

        m = samples_per_axis
        n = decomp.dim_n
        sides = decomp.sides
        pts = _cube_samples(decomp.centers, sides[:, None, None], m)
        centers = pts.reshape(-1, n)
        volume = np.repeat((sides / m) ** n, m ** n)
        tube = np.repeat(decomp.tube, m ** n)
        dist = bset.distance(centers)
        return cls(centers, volume, dist, tube, float(sides.min() / m),
                   None, ~tube & (dist > 0))

    def __post_init__(self):
        if self.usable is None:
            self.usable = ~self.tube
        self._tree = None

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.centers)
        return self._tree


@dataclass(frozen=True)
class BallFamily:
    """Boundary-centred balls: every ``stride``-th atom times dyadic radii."""

    centers: np.ndarray
    radii: np.ndarray

    def balls(self):
        for c in self.centers:
            for r in self.radii:
                yield c, r

    def __len__(self):
        return len(self.centers) * len(self.radii)

    @classmethod
    def build(cls, bset, mesh, n_centers=16, n_radii=4, stride=8,
              region=None, r_min=None, r_max=None):
        """Family fitting inside ``region`` (half-width of the mesh box by default).

        Radii run dyadically from ``max(8 spacing, 40 h)`` upwards, capped at
        ``region / 2``; centres are atoms (every ``stride``-th) whose
        largest ball fits inside the region, subsampled evenly.
        """
        half = float(np.abs(mesh.centers).max()) + 0.5 * mesh.spacing
        if region is None:
            region = half
        floor = max(8 * mesh.spacing, 40 * bset.resolution_h)
        r_min = max(floor, r_min or 0.0)
        r_max = r_max or region / 2
        if r_min > r_max:
            raise ScaleRangeError(
                f"radius floor {r_min:.3g} above ceiling {r_max:.3g}")
        radii = r_min * 2.0 ** np.arange(n_radii)
        radii = radii[radii <= r_max * (1 + 1e-12)]
        cand = bset.points[::stride]
        fits = np.all(np.abs(cand) + radii.max() <= region + 1e-12, axis=1)
        cand = cand[fits]
        if len(cand) == 0:
            raise ScaleRangeError("no boundary atom admits the largest ball")
        take = np.unique(np.linspace(0, len(cand) - 1, n_centers).round()
                         .astype(int))
        return cls(cand[take], radii)


@dataclass
class CarlesonReport:
    """Per-ball normalised integrals and their supremum."""

    rows: list
    exponent: float
    descriptor: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def values(self):
        return np.array([r["value"] for r in self.rows])

    @property
    def sup_value(self):
        return float(self.values.max()) if self.rows else 0.0

    @property
    def excluded_mass_max(self):
        return max((r["excluded"] for r in self.rows), default=0.0)

    def summary(self):
        return {"sup": self.sup_value, "n_balls": len(self.rows),
                "excluded_mass_max": self.excluded_mass_max,
                "exponent": self.exponent, "field": self.descriptor}

    def to_csv(self, path, n):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"y{i + 1}" for i in range(n)]
                       + ["radius", "value", "raw", "sigma", "excluded"])
            for r in self.rows:
                w.writerow([repr(float(v)) for v in r["center"]]
                           + [repr(float(r[k])) for k in
                              ("radius", "value", "raw", "sigma",
                               "excluded")])


def _weighted_norm(values, weight, mesh, bset, family, exponent, usable):
    dens = np.zeros(len(mesh.centers))
    dens[usable] = values[usable] * weight[usable]
    rows = []
    for c, r in family.balls():
        idx = np.asarray(mesh.tree.query_ball_point(c, r), dtype=int)
        sigma = float(bset.ball_mass(c, r)[0])
        vol = mesh.volume if np.isscalar(mesh.volume) else mesh.volume[idx]
        raw = float((dens[idx] * vol).sum())
        tube = idx[mesh.tube[idx]]
        inner = idx[usable[idx]]
        peak = float(values[inner].max()) if len(inner) else 0.0
        floor = np.maximum(mesh.dist[tube], 0.5 * mesh.spacing)
        tvol = mesh.volume if np.isscalar(mesh.volume) else mesh.volume[tube]
        excluded = float((peak * floor ** exponent * tvol).sum())
        rows.append({"center": np.asarray(c), "radius": float(r),
                     "raw": raw, "sigma": sigma, "value": raw / sigma,
                     "excluded": excluded / sigma})
    return rows


def cm_norm(field_f, bset, family, mesh, descriptor="field", exponent=None):
    """Normalised ``int_B |f|^2 dist^(d-n)`` per ball (tube cells excluded).

    ``exponent`` overrides the power ``d - n`` of the distance weight.

    ``field_f`` holds one scalar or vector per mesh cell.  The ``excluded``
    entry bounds the missing tube contribution by the ball's peak ``|f|^2``
    times the tube cells' ``dist^(d-n)`` (distance floored at half a cell).
    """
    if not isinstance(mesh, IntegrationMesh):
        mesh = IntegrationMesh.from_grid(mesh)
    f = np.asarray(field_f, dtype=float)
    sq = (f ** 2).sum(axis=1) if f.ndim == 2 else f ** 2
    if exponent is None:
        exponent = bset.dim_d - bset.dim_n
    weight = np.where(mesh.dist > 0, mesh.dist, np.inf) ** exponent
    rows = _weighted_norm(sq, weight, mesh, bset, family, exponent,
                          mesh.usable & np.isfinite(sq))
    return CarlesonReport(rows, exponent, descriptor)


def _central_gradient(values, shape, spacing, usable):
    """Central differences on cells whose 2n neighbours are all usable."""
    n = len(shape)
    v = values.reshape(shape)
    ok = usable.reshape(shape).copy()
    grad = np.zeros(shape + (n,))
    for k in range(n):
        fwd = np.roll(v, -1, axis=k)
        bwd = np.roll(v, 1, axis=k)
        grad[..., k] = (fwd - bwd) / (2 * spacing)
        okf = np.roll(usable.reshape(shape), -1, axis=k)
        okb = np.roll(usable.reshape(shape), 1, axis=k)
        edge = np.zeros(shape, dtype=bool)
        sl = [slice(None)] * n
        sl[k] = 0
        edge[tuple(sl)] = True
        sl[k] = -1
        edge[tuple(sl)] = True
        ok &= okf & okb & ~edge
    return grad.reshape(-1, n), ok.ravel()


def green_ratio_functional(G_values, bset, params, family, mesh,
                           D_alpha=None, **kw):
    """``int_B |grad ln(G / D_alpha^(1-gamma))|^2 D_alpha^(d+2-n) / sigma(B)``.

    ``G_values`` is one value per mesh cell (a solver field or an analytic
    profile).  Gradients are central differences on cells whose neighbours
    are all outside the tube; the result is unchanged by ``G -> K G``.
    """
    if not isinstance(mesh, IntegrationMesh):
        mesh = IntegrationMesh.from_grid(mesh)
    if mesh.shape is None:
        raise DomainError("central differences need a structured mesh")
    G = np.asarray(G_values, dtype=float)
    if D_alpha is None:
        D_alpha, _, _ = d_beta_arrays(bset, params.alpha, mesh.centers, **kw)
    usable = mesh.usable.copy()
    for c, r in family.balls():
        idx = np.asarray(mesh.tree.query_ball_point(c, r), dtype=int)
        idx = idx[usable[idx]]
        bad = idx[G[idx] <= 0]
        if len(bad):
            raise DomainError(
                f"nonpositive G at cell {int(bad[0])} "
                f"({mesh.centers[bad[0]].tolist()})")
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.log(G) - (1 - params.gamma) * np.log(D_alpha)
    v = np.where(usable, v, 0.0)
    grad, ok = _central_gradient(v, mesh.shape, mesh.spacing, usable)
    sq = (grad ** 2).sum(axis=1)
    exponent = bset.dim_d + 2 - bset.dim_n
    weight = D_alpha ** exponent
    rows = _weighted_norm(sq, weight, mesh, bset, family, exponent, ok)
    return CarlesonReport(rows, exponent, "grad ln(G / D^(1-gamma))",
                          {"cells_used": int(ok.sum())})


def d_ratio_field(bset, alpha, beta, X, **kw):
    """``D_alpha grad(D_beta / D_alpha) = grad D_beta - (D_beta/D_alpha) grad D_alpha``."""
    Db, gb, _ = d_beta_arrays(bset, beta, X, gradient=True, **kw)
    if alpha == beta:
        return np.zeros_like(gb)
    Da, ga, _ = d_beta_arrays(bset, alpha, X, gradient=True, **kw)
    return gb - (Db / Da)[:, None] * ga


def d_ratio_functional(bset, alpha, beta, family, mesh, **kw):
    """Carleson norm of ``D_alpha grad(D_beta / D_alpha)``."""
    if not isinstance(mesh, IntegrationMesh):
        mesh = IntegrationMesh.from_grid(mesh)
    f = np.zeros((len(mesh.centers), bset.dim_n))
    use = mesh.usable
    f[use] = d_ratio_field(bset, alpha, beta, mesh.centers[use], **kw)
    rep = cm_norm(f, bset, family, mesh,
                  descriptor=f"D_{alpha} grad(D_{beta}/D_{alpha})")
    return rep


# ----------------------------------------------------------------------
# counterexample


def _ce_integrand(r):
    r = np.asarray(r, dtype=float)
    small = r < 1e-3
    rs = np.where(small, 1.0, r)
    val = np.cos(rs) - np.sin(rs) / rs
    # cos r - sin r / r = -r^2/3 + r^4/30 - ...
    val = np.where(small, -r ** 2 / 3 + r ** 4 / 30, val)
    return val ** 2 / np.where(r > 0, r, 1.0)


def counterexample_integral(R, rule="adaptive"):
    """``I(R) = int_0^(R/2) |cos r - sin(r)/r|^2 dr / r``.

    ``rule="adaptive"`` integrates each half period with adaptive
    Gauss-Kronrod; ``rule="gauss"`` uses a fixed 40-point Gauss-Legendre
    rule on the same panels.  The integrand is ``O(r^3)`` at the origin.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    top = R / 2
    edges = np.append(np.arange(0.0, top, math.pi / 2), top)
    edges = np.unique(edges)
    if rule == "adaptive":
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            total += integrate.quad(lambda r: float(_ce_integrand(r)), a, b,
                                    epsabs=1e-15, epsrel=1e-13)[0]
        return total
    if rule == "gauss":
        x, w = roots_legendre(40)
        a, b = edges[:-1, None], edges[1:, None]
        nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
        return float((0.5 * (b - a) * w * _ce_integrand(nodes)).sum())
    raise ValueError(f"unknown rule {rule!r}")


def counterexample_green(r):
    """Green function ``2 r + sin r`` of the cosine-weighted half-space operator."""
    r = np.asarray(r, dtype=float)
    return 2 * r + np.sin(r)
