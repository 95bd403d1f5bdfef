"""Alpha numbers: normalized Wasserstein distance to flat measures.

For a ball ``B(x, r)`` centred on the boundary::

    dist_{x,r}(mu, sigma) = r^(-d-1) sup_f |int f dsigma - int f dmu|

over 1-Lipschitz ``f`` supported in the closed ball, and ``alpha(x, r)`` is
the infimum over flat measures ``mu = c * (Lebesgue on an affine d-plane)``.

The supremum is computed exactly on a finite node set as the transport
problem dual to it: nodes exchange mass at cost ``|a - b|`` and may send or
receive mass through the sphere at cost ``r - |a - x|``.  The density ``c``
enters the balance constraints linearly and is optimised jointly.  The plane
is searched by multistart plus Nelder-Mead, so the result is an upper bound
on the infimum with an exact certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.optimize import linprog, minimize

from .errors import BudgetError, InsufficientDataError, LPError, ScaleRangeError
from .geometry import ball_volume

#: Target number of merged nodes per measure.
TARGET_NODES = 40
#: Hard cap on LP nodes.
MAX_NODES = 600
#: Smallest admissible radius in units of h.
ALPHA_FLOOR = 20.0


@dataclass(frozen=True)
class FlatMeasure:
    """``density_c`` times Lebesgue measure on ``plane_point + span(basis)``."""

    plane_point: np.ndarray
    plane_basis: np.ndarray
    density_c: float

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.plane_basis, dtype=float))
        object.__setattr__(self, "plane_basis", P)
        object.__setattr__(self, "plane_point",
                           np.asarray(self.plane_point, dtype=float))
        if np.abs(P @ P.T - np.eye(len(P))).max() > 1e-12:
            raise ValueError("plane basis must be orthonormal")
        if self.density_c < 0:
            raise ValueError("density must be nonnegative")

    def with_density(self, c):
        return FlatMeasure(self.plane_point, self.plane_basis, c)

    def to_json(self):
        return {"point": self.plane_point.tolist(),
                "basis": self.plane_basis.tolist(),
                "c": float(self.density_c)}


@dataclass(frozen=True)
class AlphaNumber:
    center: np.ndarray
    radius: float
    value: float
    minimizer: FlatMeasure
    lp_status: str
    duality_gap: float
    merge_error: float
    nodes: int
    evaluations: int


@dataclass
class LPResult:
    value: float
    c: float
    status: str
    gap: float
    potentials: np.ndarray


def transport_lp(pos, sigma, mu, c=None):
    """Exact dual of the Lipschitz supremum on a node set in the unit ball.

    The supremum of ``int f d(sigma - c mu)`` over 1-Lipschitz ``f``
    vanishing outside the ball equals the cheapest transport of ``sigma``
    onto ``c mu`` in which mass may also leave or enter through the sphere
    at cost ``1 - |y|``.  By the triangle inequality direct routes from
    ``sigma`` nodes to ``mu`` nodes suffice.

    Parameters
    ----------
    pos : ndarray, shape (m, n)
        Node positions, ``|pos| <= 1``.
    sigma, mu : ndarray, shape (m,)
        Masses of the two measures at the nodes (``mu`` per unit density).
    c : float or None
        Fixed density, or None to minimise over ``c >= 0`` as well.
    """
    m = len(pos)
    if m > MAX_NODES:
        raise BudgetError(f"{m} LP nodes exceed the cap {MAX_NODES}")
    src = np.flatnonzero(sigma > 0)
    dst = np.flatnonzero(mu > 0)
    ns, nd = len(src), len(dst)
    bnd = np.maximum(1.0 - np.linalg.norm(pos, axis=1), 0.0)
    edge = np.linalg.norm(pos[src][:, None] - pos[dst][None], axis=2).ravel()
    k = ns * nd
    i, j = np.divmod(np.arange(k), nd)
    # columns: flows, sigma -> sphere, sphere -> mu, density c
    rows = np.concatenate([i, ns + j, np.arange(ns), ns + np.arange(nd),
                           ns + np.arange(nd)])
    cols = np.concatenate([np.arange(k), np.arange(k), k + np.arange(ns),
                           k + ns + np.arange(nd), np.full(nd, k + ns + nd)])
    vals = np.concatenate([np.ones(2 * k + ns + nd), -mu[dst]])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(ns + nd, k + ns + nd + 1))
    cost = np.concatenate([edge, bnd[src], bnd[dst], [0.0]])
    if c is None:
        rhs = np.concatenate([sigma[src], np.zeros(nd)])
        bounds = (0, None)
    else:
        # fixed density: fold it into the right-hand side for conditioning
        rhs = np.concatenate([sigma[src], c * mu[dst]])
        A, cost = A[:, :-1], cost[:-1]
        bounds = (0, None)
    res = linprog(cost, A_eq=A, b_eq=rhs, bounds=bounds, method="highs")
    if res.status != 0:
        raise LPError(f"transport LP failed: {res.message}")
    dual = np.asarray(res.eqlin.marginals)
    gap = abs(float(dual @ rhs) - res.fun)
    pot = np.zeros(m)
    pot[src] = dual[:ns]
    pot[dst] -= dual[ns:]
    cval = float(res.x[-1]) if c is None else float(c)
    return LPResult(float(res.fun), cval, "optimal", gap, pot)


class LocalProblem:
    """Atoms of one ball in a normalised frame, ready for plane search.

    Coordinates are ``R (y - x) / r`` with ``R`` the principal axes of the
    atoms in ``B(x, 2r)`` (oriented by the sign of their third moments), so
    the problem is invariant under rigid motions and dilations.
    """

    def __init__(self, bset, x, r, target_nodes=TARGET_NODES):
        self.d, self.n = bset.dim_d, bset.dim_n
        self.x = np.asarray(x, dtype=float)
        self.r = float(r)
        h = bset.resolution_h
        if r < ALPHA_FLOOR * h * (1 - 1e-12):
            raise ScaleRangeError(f"radius {r:.3g} below {ALPHA_FLOOR} h")
        idx2 = np.asarray(bset.tree.query_ball_point(self.x, 2 * r))
        if len(idx2) < self.d + 1:
            raise InsufficientDataError(
                f"{len(idx2)} atoms in B(x, 2r); need at least {self.d + 1}")
        Z2 = (bset.points[idx2] - self.x) / r
        w2 = bset.weights[idx2]
        self.frame = _principal_frame(Z2, w2)
        Z2 = Z2 @ self.frame.T
        inside = np.linalg.norm(Z2, axis=1) <= 1.0 + _EDGE_TOL
        self.Z = Z2[inside]
        self.m_sigma = w2[inside] / r ** self.d
        self.barycenter = (w2 @ Z2) / w2.sum()
        self.h = h / r
        # one bin size for both measures, so identical measures merge alike
        self.bin = max(_bin_size(self.Z, self.d, target_nodes),
                       2.0 / target_nodes ** (1.0 / self.d))
        # anchor of the flat lattice: in-plane position of the atom nearest x
        self.anchor = self.Z[np.argmin(np.linalg.norm(self.Z, axis=1))] \
            if len(self.Z) else np.zeros(self.n)
        self.evaluations = 0

    # --- planes -------------------------------------------------------
    def plane(self, theta):
        """Plane point and basis (local frame) for search parameters."""
        d, n = self.d, self.n
        k = n - d
        t = theta[:k]
        Amat = theta[k:].reshape(d, k)
        K = np.zeros((n, n))
        K[:d, d:] = Amat
        K[d:, :d] = -Amat.T
        Rot = expm(K)
        basis = Rot[:d]
        normals = Rot[d:]
        return self.barycenter + t @ normals, basis

    def flat_atoms(self, point, basis):
        """Plane lattice at spacing h inside the unit ball, per unit density."""
        d = self.d
        foot = point + (self.anchor - point) @ basis.T @ basis
        off = foot - point
        centre_coef = -(point @ basis.T)  # in-plane coords of closest point
        dist2 = float(point @ point - centre_coef @ centre_coef)
        if dist2 >= 1.0:
            return np.zeros((0, self.n)), np.zeros(0)
        rad = math.sqrt(max(1.0 - dist2, 0.0))
        a0 = off @ basis.T
        lo = np.floor((centre_coef - rad - a0) / self.h)
        hi = np.ceil((centre_coef + rad - a0) / self.h)
        axes = [a0[i] + self.h * np.arange(lo[i], hi[i] + 1)
                for i in range(d)]
        coef = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
        pts = point + coef @ basis
        keep = np.linalg.norm(pts, axis=1) <= 1.0 + _EDGE_TOL
        return pts[keep], np.full(int(keep.sum()), self.h ** d)

    def nodes(self, point, basis):
        """Merge sigma atoms and plane atoms into bins, one node per measure.

        Keeping the two measures on separate nodes preserves their offset
        inside a bin, which carries the signal for nearly flat sets.
        """
        P, mu = self.flat_atoms(point, basis)
        ps, ms, es = _merge(self.Z, self.m_sigma, self.bin)
        pm, mm, em = _merge(P, mu, self.bin)
        pos = np.concatenate([ps, pm])
        sig = np.concatenate([ms, np.zeros(len(pm))])
        muw = np.concatenate([np.zeros(len(ps)), mm])
        return pos, sig, muw, es + em

    def evaluate(self, point, basis, c=None):
        pos, sig, muw, err = self.nodes(point, basis)
        self.evaluations += 1
        res = transport_lp(pos, sig, muw, c)
        return res, err, len(pos)

    def to_global(self, point, basis):
        return (self.x + self.r * point @ self.frame,
                basis @ self.frame)

    def to_local(self, mu):
        point = (mu.plane_point - self.x) / self.r @ self.frame.T
        basis = mu.plane_basis @ self.frame.T
        return point, basis


# atoms at exactly the ball radius or on a bin face would otherwise be
# sorted by rounding noise, differently for sigma and for the plane
_EDGE_TOL = 1e-9
_BIN_SHIFT = 0.5 + 1 / math.pi


def _merge(pos, mass, size):
    """Mass centroids of atoms grouped in cubic bins of side ``size``."""
    if len(pos) == 0:
        return pos, mass, 0.0
    key = np.floor(pos / size + _BIN_SHIFT).astype(np.int64)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    m = inv.max() + 1
    tot = np.bincount(inv, weights=mass, minlength=m)
    cen = np.stack([np.bincount(inv, weights=mass * pos[:, j], minlength=m)
                    for j in range(pos.shape[1])], 1) / tot[:, None]
    err = float(mass @ np.linalg.norm(pos - cen[inv], axis=1))
    return cen, tot, err


def _principal_frame(Z, w):
    n = Z.shape[1]
    mean = (w @ Z) / w.sum()
    C = ((Z - mean) * w[:, None]).T @ (Z - mean) / w.sum()
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(-vals, kind="stable")
    R = vecs[:, order].T
    for i in range(n):
        proj = (Z - mean) @ R[i]
        skew = float(w @ proj ** 3)
        if abs(skew) > 1e-12 * max(1.0, float(w @ np.abs(proj) ** 3)):
            if skew < 0:
                R[i] = -R[i]
        else:
            # symmetric direction: orient by the first moment about x
            first = float(w @ (Z @ R[i]))
            if first < 0:
                R[i] = -R[i]
    return R


def _bin_size(Z, d, target):
    if len(Z) <= target:
        return 1e-9
    b = 2.0 / target ** (1.0 / d)
    for _ in range(30):
        count = len(np.unique(np.round(Z / b).astype(np.int64), axis=0))
        if count > target:
            b *= 1.25
        elif count < 0.6 * target:
            b /= 1.2
        else:
            break
    return b


def wasserstein_flat(bset, x, r, mu, target_nodes=TARGET_NODES):
    """``dist_{x,r}(mu, sigma)`` for a given flat measure."""
    prob = LocalProblem(bset, x, r, target_nodes)
    point, basis = prob.to_local(mu)
    res, _, _ = prob.evaluate(point, basis, c=mu.density_c)
    return res.value


def alpha_number(bset, x, r, n_starts=4, maxiter=100, seed=0,
                 target_nodes=TARGET_NODES, certificate=None):
    """Upper bound on ``alpha_sigma(x, r)`` with its minimising flat measure.

    The search starts from the principal plane of the atoms in ``B(x, 2r)``
    and ``n_starts`` seeded perturbations of it (plus ``certificate`` if
    given), then refines the best plane with Nelder-Mead; ``c`` is optimal
    for every plane visited.
    """
    if r > bset.diameter / 2 * (1 + 1e-12):
        raise ScaleRangeError("radius exceeds half the diameter")
    prob = LocalProblem(bset, x, r, target_nodes)
    k = (bset.dim_n - bset.dim_d) * (bset.dim_d + 1)
    rng = np.random.default_rng(seed)
    starts = [np.zeros(k)] + [0.1 * rng.normal(size=k)
                              for _ in range(n_starts)]
    cache = {}

    def objective(theta):
        key = tuple(np.round(theta, 14))
        if key not in cache:
            point, basis = prob.plane(np.asarray(theta))
            cache[key] = prob.evaluate(point, basis)
        return cache[key][0].value

    vals = [objective(s) for s in starts]
    best_theta = starts[int(np.argmin(vals))]
    best_val = min(vals)
    cert_val = None
    if certificate is not None:
        point, basis = prob.to_local(certificate)
        cres, cerr, cm = prob.evaluate(point, basis)
        cert_val = cres.value
    if best_val > 1e-8 and maxiter > 0:
        simplex = np.vstack([best_theta] + [best_theta + 0.05 * e
                                            for e in np.eye(k)])
        opt = minimize(objective, best_theta, method="Nelder-Mead",
                       options={"maxiter": maxiter, "initial_simplex": simplex,
                                "xatol": 1e-3,
                                "fatol": 1e-7 + 1e-2 * best_val})
        if opt.fun < best_val:
            best_theta, best_val = opt.x, float(opt.fun)
    point, basis = prob.plane(np.asarray(best_theta))
    res, err, m = cache[tuple(np.round(best_theta, 14))]
    if cert_val is not None and cert_val < res.value:
        point, basis = prob.to_local(certificate)
        res, err, m = prob.evaluate(point, basis)
    gpoint, gbasis = prob.to_global(point, basis)
    mu = FlatMeasure(gpoint, gbasis, res.c)
    return AlphaNumber(np.asarray(x, dtype=float), float(r), res.value, mu,
                       res.status, res.gap, err, m, prob.evaluations)


# ----------------------------------------------------------------------
# Carleson sum


@dataclass
class URSumResult:
    """Dyadic Riemann sum of ``int int alpha^2 dsigma ds/s`` over a ball."""

    total: float
    normalized: float
    per_scale: np.ndarray
    scales: np.ndarray
    cells: list
    skipped: int
    sigma_ball: float

    def partial(self, k):
        """Normalised sum over the first ``k`` scales."""
        return float(self.per_scale[:k].sum() / self.sigma_ball)


def ur_carleson_sum(bset, x, r, n_scales, normalize=True, **alpha_kw):
    """Sum ``alpha(y, s_k)^2 sigma(cell) ln 2`` over dyadic scales and cells.

    Scales are ``s_k = r 2^-k``; at each scale the atoms of ``B(x, r)`` are
    grouped in cubes of side ``s_k`` and the atom closest to a cube's
    mass centre represents it.
    """
    x = np.asarray(x, dtype=float)
    scales = r * 2.0 ** -np.arange(n_scales)
    floor = ALPHA_FLOOR * bset.resolution_h
    if scales[-1] < floor * (1 - 1e-12):
        raise ScaleRangeError(
            f"smallest scale {scales[-1]:.3g} below {floor:.3g}")
    idx = np.asarray(bset.tree.query_ball_point(x, r))
    if not np.all(bset.interior_mask(r)[idx]):
        raise ScaleRangeError("ball reaches past the sampled patch")
    pts, w = bset.points[idx], bset.weights[idx]
    sigma_ball = float(w.sum())
    per_scale = np.zeros(n_scales)
    cells = []
    skipped = 0
    for k, s in enumerate(scales):
        key = np.floor((pts - x) / s).astype(np.int64)
        _, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        for c in range(inv.max() + 1):
            sel = np.flatnonzero(inv == c)
            mass = float(w[sel].sum())
            centre = (w[sel] @ pts[sel]) / mass
            rep = sel[np.argmin(np.linalg.norm(pts[sel] - centre, axis=1))]
            try:
                a = alpha_number(bset, pts[rep], s, **alpha_kw)
            except InsufficientDataError:
                skipped += 1
                continue
            contrib = a.value ** 2 * mass * math.log(2)
            per_scale[k] += contrib
            cells.append((k, s, pts[rep], mass, a.value, contrib))
    total = float(per_scale.sum())
    return URSumResult(total, total / sigma_ball if normalize else total,
                       per_scale, scales, cells, skipped, sigma_ball)


def flat_alpha_slope(d=1):
    """``dist`` per unit density mismatch on a flat set, ``int tent / r^(d+1)``.

    The optimal test function for ``sigma - (1 + delta) sigma`` is the tent
    ``r - |y - x|``; its integral over the d-plane is
    ``omega_d r^(d+1) / (d + 1)``.
    """
    return ball_volume(d) / (d + 1)
