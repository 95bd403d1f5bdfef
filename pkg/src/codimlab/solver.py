"""Finite-volume solver for ``L u = -div(D_beta^(d+1+gamma-n) grad u) = 0``.

The box is split into uniform cells.  Cells on the outer layer form the
*shell*, cells whose centre lies within ``tube_radius`` of the boundary form
the *tube*, and the rest are unknowns.  Each interior face carries the
conductance ``D_beta(midpoint)^(d+1+gamma-n) * spacing^(n-2)``, giving a
symmetric M-matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import integrate, ndimage
from scipy.sparse.linalg import cg

from .errors import ConvergenceError, DomainError, TopologyError
from .smooth_distance import OperatorParams, d_beta_arrays

INTERIOR, TUBE, SHELL = 0, 1, 2
MAX_CELLS = 2_000_000
RTOL = 1e-10
MAXITER = 100_000


@dataclass(eq=False)
class Grid:
    """Uniform cell grid over an axis-aligned box around a boundary set."""

    bset: object
    lo: np.ndarray
    spacing: float
    shape: tuple
    tube_radius: float
    roles: np.ndarray = field(repr=False)
    dist: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, bset, box, cells, tube_radius=None):
        """Grid of ``cells`` per axis over ``[-box, box]^n`` (or ``(lo, hi)``).

        The default tube radius is ``max(2 spacing, 5 h)``.
        """
        n = bset.dim_n
        if np.isscalar(box):
            lo = -np.full(n, float(box))
            hi = np.full(n, float(box))
        else:
            lo, hi = (np.asarray(b, dtype=float) for b in box)
        spacing = float((hi - lo).max()) / cells
        shape = tuple(int(round(v)) for v in (hi - lo) / spacing)
        if math.prod(shape) > MAX_CELLS:
            raise DomainError(f"{math.prod(shape)} cells exceed the cap "
                              f"{MAX_CELLS}")
        if tube_radius is None:
            tube_radius = max(2 * spacing, 5 * bset.resolution_h)
        if tube_radius < 2 * spacing - 1e-12:
            raise DomainError("tube radius must be at least two cells")
        grid = cls(bset, lo, spacing, shape, float(tube_radius),
                   np.empty(0), np.empty(0))
        centers = grid.centers()
        dist = bset.distance(centers).reshape(shape)
        roles = np.where(dist <= tube_radius, TUBE, INTERIOR).astype(np.int8)
        edge = np.zeros(shape, dtype=bool)
        for k in range(n):
            sl = [slice(None)] * n
            sl[k] = 0
            edge[tuple(sl)] = True
            sl[k] = -1
            edge[tuple(sl)] = True
        roles[edge] = SHELL
        grid.roles = roles
        grid.dist = dist
        return grid

    @property
    def n(self):
        return len(self.shape)

    @property
    def size(self):
        return math.prod(self.shape)

    def centers(self, flat_index=None):
        if flat_index is None:
            idx = np.indices(self.shape).reshape(self.n, -1).T
        else:
            idx = np.stack(np.unravel_index(flat_index, self.shape), -1)
        return self.lo + (idx + 0.5) * self.spacing

    def cell_of(self, X):
        """Flat index of the cell containing each point."""
        X = np.atleast_2d(X)
        idx = np.floor((X - self.lo) / self.spacing).astype(int)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(idx.T, self.shape)

    def mask(self, role):
        return self.roles.ravel() == role


@dataclass(eq=False)
class Operator:
    """Assembled interior system and the couplings to prescribed cells."""

    grid: Grid
    params: OperatorParams
    unknowns: np.ndarray          # flat cell index of each unknown
    number: np.ndarray            # cell -> unknown number or -1
    A: sp.csr_matrix
    bnd_row: np.ndarray           # unknown number of each boundary face
    bnd_cell: np.ndarray          # prescribed cell across the face
    bnd_weight: np.ndarray        # conductance of the face
    closure: str = "dirichlet"
    clipped: int = 0


def _faces(grid):
    """Pairs of adjacent cells with at least one interior cell."""
    roles = grid.roles.ravel()
    idx = np.arange(grid.size).reshape(grid.shape)
    for k in range(grid.n):
        sl_a = [slice(None)] * grid.n
        sl_b = [slice(None)] * grid.n
        sl_a[k] = slice(0, -1)
        sl_b[k] = slice(1, None)
        a = idx[tuple(sl_a)].ravel()
        b = idx[tuple(sl_b)].ravel()
        keep = (roles[a] == INTERIOR) | (roles[b] == INTERIOR)
        yield k, a[keep], b[keep]


def assemble(grid, params, closure="dirichlet", profile=None, **kw):
    """Build the interior matrix.

    Parameters
    ----------
    closure : {"dirichlet", "ratio"}
        ``"dirichlet"`` leaves tube cells as prescribed values.
        ``"ratio"`` closes zero tube data by ``u_tube = (g_tube / g_cell) u_cell``
        with ``g = profile``; this moves the face into the diagonal.
    """
    bset = grid.bset
    roles = grid.roles.ravel()
    unknowns = np.flatnonzero(roles == INTERIOR)
    if len(unknowns) == 0:
        raise TopologyError("grid has no interior cells")
    number = np.full(grid.size, -1, dtype=np.int64)
    number[unknowns] = np.arange(len(unknowns))
    _check_topology(grid)
    e = params.weight_exponent
    scale = grid.spacing ** (grid.n - 2)
    rows, cols, vals = [], [], []
    diag = np.zeros(len(unknowns))
    b_row, b_cell, b_w = [], [], []
    clipped = 0
    for k, a, b in _faces(grid):
        mid = grid.centers(a)
        mid[:, k] += 0.5 * grid.spacing
        D, _, _ = d_beta_arrays(bset, params.beta, mid, **kw)
        w = D ** e * scale
        ia, ib = number[a], number[b]
        both = (ia >= 0) & (ib >= 0)
        rows += [ia[both], ib[both]]
        cols += [ib[both], ia[both]]
        vals += [-w[both], -w[both]]
        np.add.at(diag, ia[ia >= 0], w[ia >= 0])
        np.add.at(diag, ib[ib >= 0], w[ib >= 0])
        for inner, outer in ((ia, b), (ib, a)):
            sel = (inner >= 0) & (number[outer] < 0)
            b_row.append(inner[sel])
            b_cell.append(outer[sel])
            b_w.append(w[sel])
    b_row = np.concatenate(b_row)
    b_cell = np.concatenate(b_cell)
    b_w = np.concatenate(b_w)
    if closure == "ratio":
        if profile is None:
            raise ValueError("ratio closure needs the profile g")
        tube = roles[b_cell] == TUBE
        cells = unknowns[b_row[tube]]
        factor = 1.0 - profile[b_cell[tube]] / profile[cells]
        clipped = int((factor < 0).sum())
        # the face conductance is replaced by the closure term on the diagonal
        np.add.at(diag, b_row[tube], b_w[tube] * (np.maximum(factor, 0) - 1))
        keep = ~tube
        b_row, b_cell, b_w = b_row[keep], b_cell[keep], b_w[keep]
    elif closure != "dirichlet":
        raise ValueError(f"unknown closure {closure!r}")
    m = len(unknowns)
    A = sp.coo_matrix((np.concatenate(vals + [diag]),
                       (np.concatenate(rows + [np.arange(m)]),
                        np.concatenate(cols + [np.arange(m)]))),
                      shape=(m, m)).tocsr()
    return Operator(grid, params, unknowns, number, A, b_row, b_cell, b_w,
                    closure, clipped)


def _check_topology(grid):
    interior = grid.roles == INTERIOR
    labels, count = ndimage.label(interior)
    if count == 0:
        return
    touching = ndimage.binary_dilation(~interior) & interior
    hit = np.unique(labels[touching])
    if len(np.setdiff1d(np.arange(1, count + 1), hit)):
        raise TopologyError("an interior region has no prescribed neighbour")


@dataclass
class SolveReport:
    residual: float
    iterations: int
    unknowns: int


def _cg(A, rhs):
    if not np.any(rhs):
        return np.zeros_like(rhs), SolveReport(0.0, 0, len(rhs))
    diag = A.diagonal()
    M = sp.diags(1.0 / diag)
    it = [0]

    def count(_):
        it[0] += 1

    x, info = cg(A, rhs, rtol=RTOL, atol=0.0, maxiter=MAXITER, M=M,
                 callback=count)
    res = float(np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs))
    if info != 0:
        raise ConvergenceError(f"CG stopped after {it[0]} iterations",
                               residual=res, iterations=it[0])
    return x, SolveReport(res, it[0], len(rhs))


def _rhs(op, data):
    rhs = np.zeros(len(op.unknowns))
    np.add.at(rhs, op.bnd_row, op.bnd_weight * data[op.bnd_cell])
    return rhs


@dataclass(eq=False)
class DiscreteField:
    """Cell values over a grid (tube and shell cells carry their data)."""

    grid: Grid
    values: np.ndarray
    report: dict = field(default_factory=dict)

    def at(self, X):
        return self.values[self.grid.cell_of(X)]

    def interior_extrema(self):
        m = self.grid.mask(INTERIOR)
        return float(self.values[m].min()), float(self.values[m].max())

    def boundary_extrema(self):
        m = ~self.grid.mask(INTERIOR)
        return float(self.values[m].min()), float(self.values[m].max())


def solve_dirichlet(op, data):
    """Solve with prescribed values on every tube and shell cell."""
    data = np.asarray(data, dtype=float)
    if data.shape != (op.grid.size,):
        raise DomainError("data must give one value per cell")
    x, rep = _cg(op.A, _rhs(op, data))
    values = data.copy()
    values[op.unknowns] = x
    return DiscreteField(op.grid, values, {
        "residual": rep.residual, "iterations": rep.iterations,
        "unknowns": rep.unknowns, "closure": op.closure})


def assemble_and_solve(grid, params, dirichlet_data, **kw):
    """Assemble the Dirichlet-closed operator and solve."""
    return solve_dirichlet(assemble(grid, params, **kw), dirichlet_data)


# ----------------------------------------------------------------------
# Green function with pole at infinity


def cell_d_beta(grid, beta, **kw):
    """``D_beta`` at every cell centre."""
    D, _, _ = d_beta_arrays(grid.bset, beta, grid.centers(), **kw)
    return D


def corkscrew_cell(grid, x, r, n_dirs=200):
    """Interior cell at distance about ``r`` from ``x`` farthest from the boundary."""
    n = grid.n
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(n_dirs, n))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    cand = np.asarray(x) + r * dirs
    inside = np.all((cand > grid.lo + grid.spacing)
                    & (cand < grid.lo + (np.array(grid.shape) - 1)
                       * grid.spacing), axis=1)
    cand = cand[inside]
    cells = grid.cell_of(cand)
    ok = grid.roles.ravel()[cells] == INTERIOR
    if not ok.any():
        raise DomainError("no interior corkscrew cell found")
    cells = cells[ok]
    best = cells[np.argmax(grid.dist.ravel()[cells])]
    return int(best)


def green_infinity(grid, params, closure="ratio", anchor=None, D=None,
                   **kw):
    """Positive solution vanishing on the boundary and growing like ``D^(1-gamma)``.

    The outer shell carries ``D_beta^(1-gamma)``; the tube carries zero data,
    either as plain Dirichlet values (``closure="dirichlet"``) or through the
    ratio closure (default), which removes the ``(tube/distance)^(1-gamma)``
    bias of a Dirichlet tube.  The result is scaled so that it equals
    ``D_beta^(1-gamma)`` at the corkscrew cell of ``anchor = (x, r)``
    (default: boundary point nearest the box centre, ``r`` = box width / 8).
    """
    if D is None:
        D = cell_d_beta(grid, params.beta, **kw)
    g = D ** (1 - params.gamma)
    data = np.where(grid.roles.ravel() == SHELL, g, 0.0)
    op = assemble(grid, params, closure=closure, profile=g, **kw)
    field_ = solve_dirichlet(op, data)
    if closure == "ratio":
        _fill_tube_ratio(field_, g)
    if anchor is None:
        mid = grid.lo + 0.5 * grid.spacing * np.array(grid.shape)
        anchor = (grid.bset.nearest_point(mid),
                  grid.spacing * max(grid.shape) / 8)
    cell = corkscrew_cell(grid, *anchor)
    scale = g[cell] / field_.values[cell]
    field_.values *= scale
    field_.report.update({"normalization_cell": cell,
                          "normalization_point":
                              grid.centers(np.array([cell]))[0].tolist(),
                          "scale": float(scale),
                          "clipped_faces": op.clipped})
    field_.D = D
    return field_


def _fill_tube_ratio(field_, g):
    grid = field_.grid
    roles = grid.roles.ravel()
    v = field_.values
    ratio = np.zeros(grid.size)
    count = np.zeros(grid.size)
    for _, a, b in _faces(grid):
        for src, dst in ((a, b), (b, a)):
            sel = (roles[src] == INTERIOR) & (roles[dst] == TUBE)
            np.add.at(ratio, dst[sel], v[src[sel]] / g[src[sel]])
            np.add.at(count, dst[sel], 1)
    tube = roles == TUBE
    v[tube] = np.where(count[tube] > 0,
                       g[tube] * ratio[tube] / np.maximum(count[tube], 1), 0)


# ----------------------------------------------------------------------
# harmonic measure


@dataclass
class HarmonicMeasureEstimate:
    """Harmonic measure of a patch of the tube seen from a pole.

    ``raw`` is the discrete solution at the pole, ``total`` the value for
    the whole tube, ``leakage = 1 - total`` the mass absorbed by the outer
    shell and ``value = raw / total`` the probability-normalised estimate.
    """

    pole: np.ndarray
    raw: float
    total: float
    value: float

    @property
    def leakage(self):
        return 1.0 - self.total


@dataclass(eq=False)
class HarmonicMasses:
    """Per-tube-cell harmonic masses for one pole (one adjoint solve)."""

    op: Operator
    pole: np.ndarray
    pole_cell: int
    cells: np.ndarray
    mass: np.ndarray
    report: dict

    @property
    def total(self):
        return float(self.mass.sum())

    def of_cells(self, mask):
        """Raw harmonic measure of the tube cells selected by a cell mask."""
        mask = np.asarray(mask).ravel()
        return float(self.mass[mask[self.cells]].sum())

    def estimate(self, mask):
        raw = self.of_cells(mask)
        return HarmonicMeasureEstimate(self.pole, raw, self.total,
                                       raw / self.total)

    def atom_masses(self):
        """Spread cell masses over boundary atoms.

        Only tube cells facing the interior carry mass.  Each such cell
        deposits its mass on the atoms within half a cell of its foot point
        on the boundary, in proportion to their weights (the nearest atom
        when that slab is empty).  On a flat set this gives a density that
        is constant across each grid slab.
        """
        grid = self.op.grid
        bset = grid.bset
        live = np.flatnonzero(self.mass != 0)
        mass = self.mass[live]
        foot = np.atleast_2d(bset.nearest_point(grid.centers(self.cells[live])))
        out = np.zeros(bset.count)
        for m, nbrs, f in zip(mass, bset.tree.query_ball_point(
                foot, 0.5 * grid.spacing), foot):
            if nbrs:
                nbrs = np.asarray(nbrs)
                w = bset.weights[nbrs]
                out[nbrs] += m * w / w.sum()
            else:
                out[bset.tree.query(f)[1]] += m
        return out


def harmonic_masses(grid, params, X, op=None, **kw):
    """Harmonic measure of every tube cell from the pole ``X``.

    Solves ``A z = e_X`` once; the value of the Dirichlet solution at ``X``
    for tube data ``f`` is ``sum_j f_j m_j`` with ``m_j`` the face-weighted
    adjoint values next to tube cell ``j``.  The outer shell is absorbing.
    """
    if op is None:
        op = assemble(grid, params, **kw)
    cell = int(grid.cell_of(X)[0])
    k = op.number[cell]
    if k < 0:
        raise DomainError("pole must be in an interior cell")
    e = np.zeros(len(op.unknowns))
    e[k] = 1.0
    z, rep = _cg(op.A, e)
    roles = grid.roles.ravel()
    tube_faces = roles[op.bnd_cell] == TUBE
    cells, inv = np.unique(op.bnd_cell[tube_faces], return_inverse=True)
    mass = np.zeros(len(cells))
    np.add.at(mass, inv, op.bnd_weight[tube_faces]
              * z[op.bnd_row[tube_faces]])
    return HarmonicMasses(op, np.asarray(X, dtype=float), cell, cells, mass,
                          {"residual": rep.residual,
                           "iterations": rep.iterations})


def patch_mask(grid, center, radius):
    """Tube cells whose boundary foot point lies in ``B(center, radius)``."""
    roles = grid.roles.ravel()
    tube = np.flatnonzero(roles == TUBE)
    foot = np.atleast_2d(grid.bset.nearest_point(grid.centers(tube)))
    inside = np.linalg.norm(foot - np.asarray(center), axis=1) < radius
    mask = np.zeros(grid.size, dtype=bool)
    mask[tube[inside]] = True
    return mask


def harmonic_measure(grid, params, X, patch, op=None, direct=False, **kw):
    """Harmonic measure of a tube patch (cell mask) seen from ``X``.

    With ``direct=True`` the Dirichlet problem with data ``1_patch`` is
    solved explicitly (and once more with the whole tube for the total);
    otherwise one adjoint solve serves every patch.
    """
    if op is None:
        op = assemble(grid, params, **kw)
    patch = np.asarray(patch).ravel()
    roles = grid.roles.ravel()
    if np.any(patch & (roles != TUBE)):
        raise DomainError("patch must consist of tube cells")
    if direct:
        raw = solve_dirichlet(op, patch.astype(float)).at(X)[0]
        total = solve_dirichlet(op, (roles == TUBE).astype(float)).at(X)[0]
        return HarmonicMeasureEstimate(np.asarray(X), float(raw),
                                       float(total), float(raw / total))
    return harmonic_masses(grid, params, X, op=op).estimate(patch)


# ----------------------------------------------------------------------
# radial profiles


def radial_solution(n, d, gamma, weight_fn, r0=0.0, r1=None, **quad_kw):
    """Transversally radial solution over a flat boundary.

    For functions of ``s = dist(X, Gamma)`` with ``Gamma`` a d-plane in R^n,
    ``-div(w(s) grad u) = 0`` reduces to ``(s^(m-1) w u')' = 0`` with
    ``m = n - d``; returns ``u(r) = int_{r0}^r s^(1-m) / w(s) ds``.

    Raises :class:`ConvergenceError` when the integral diverges at ``r0``.
    """
    m = n - d
    if m < 1:
        raise ValueError("codimension must be at least 1")

    def integrand(s):
        return s ** (1 - m) / weight_fn(s)

    opts = {"epsabs": 1e-13, "epsrel": 1e-13, "limit": 500}
    opts.update(quad_kw)
    if r0 == 0.0:
        # probe integrability at the origin
        a, b = 1e-8, 1e-4
        ia, _ = integrate.quad(integrand, a, 1e-4, **opts)
        ib, _ = integrate.quad(integrand, a * 1e-4, a, **opts)
        if ib > 0.5 * max(ia, 1e-300) and ib > 1e-6:
            raise ConvergenceError(
                "profile integral diverges at 0 for this weight")

    def u(r):
        r = np.asarray(r, dtype=float)
        out = np.array([integrate.quad(integrand, r0, float(x), **opts)[0]
                        for x in r.ravel()]).reshape(r.shape)
        return float(out) if out.ndim == 0 else out

    return u


# ----------------------------------------------------------------------
# comparison diagnostics


def ball_atom_mass(bset, atom_mass, center, radius):
    """Soft-edged ball sum of per-atom masses (see ``BoundarySet.ball_mass``)."""
    return float(bset.ball_mass(center, radius, weights=atom_mass)[0])


def log_poisson_budget(bset, masses, balls, B):
    """``sum_i |ln((w(Q_i)/s(Q_i)) (s(B)/w(B)))| s(Q_i) / s(B)``.

    ``masses`` are harmonic masses per atom, ``balls`` a sequence of
    ``(center, radius)`` pairs and ``B = (x, r)``.
    """
    x, r = B
    sig_B = ball_atom_mass(bset, bset.weights, x, r)
    om_B = ball_atom_mass(bset, masses, x, r)
    total = 0.0
    terms = []
    for c, rad in balls:
        s = ball_atom_mass(bset, bset.weights, c, rad)
        o = ball_atom_mass(bset, masses, c, rad)
        if s <= 0 or o <= 0:
            raise DomainError("empty boundary ball in budget")
        t = abs(math.log((o / s) * (sig_B / om_B))) * s
        terms.append(t)
        total += t
    return total / sig_B, np.array(terms)


def comparison_ratios(field_, D_cells, gamma, masses, bset, sample_points,
                      balls, ref_point, ref_ball):
    """Two sides of the solution / harmonic-measure comparison.

    Left: ``(u(X)/D^(1-gamma)(X)) (D^(1-gamma)(X0)/u(X0))`` at the sample
    points.  Right: ``(w(Q_i)/s(Q_i)) (s(3B)/w(3B))`` for the matching balls.
    Returns both arrays; their ratio is the comparison constant.
    """
    cells = field_.grid.cell_of(sample_points)
    c0 = field_.grid.cell_of(ref_point)[0]
    g = D_cells ** (1 - gamma)
    left = (field_.values[cells] / g[cells]) * (g[c0] / field_.values[c0])
    c3, r3 = ref_ball
    s3 = ball_atom_mass(bset, bset.weights, c3, r3)
    o3 = ball_atom_mass(bset, masses, c3, r3)
    right = np.array([
        (ball_atom_mass(bset, masses, c, r)
         / ball_atom_mass(bset, bset.weights, c, r)) * (s3 / o3)
        for c, r in balls])
    return left, right
