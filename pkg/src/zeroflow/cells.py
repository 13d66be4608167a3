"""Cell discretisations of compact sets and the cell-averaged log-chordal kernel.

A ``CellSet`` is a list of cells, each of one of three kinds:

* ``PATCH``: a polar rectangle ``r1 <= |u| <= r2, a1 <= arg u <= a2`` in a chart,
  carrying Fubini-Study area measure (caps around the chart origin included);
* ``ARC``: an arc of a circle ``|u| = r`` in a chart, carrying arc length;
* ``POINT``: a node with a small disk of given chart radius around it.

Interactions are Galerkin averages of ``2 log[x, y]`` (chordal distance on the
unit-diameter sphere) over pairs of cells: low-order Gauss rules for well
separated cells, higher-order rules for neighbours, and exact or
semi-analytic self terms on the diagonal.  This kernel does not depend on the
metric; Green matrices are obtained from it by subtracting cell averages of
``Phi`` and adding ``E``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss as _leggauss
from scipy.spatial import cKDTree

from .errors import DomainError
from .geometry import Metric, PointSet, as_points

POINT, ARC, PATCH = 0, 1, 2
KIND_NAMES = {POINT: "point", ARC: "arc", PATCH: "patch"}

NEAR = 1.25          # neighbours: centroid distance < NEAR * (size_i + size_j)
Q_FINE = 6           # Gauss order per direction for neighbours
Q_CAP = 16           # order for neighbours of wide polar cells, whose weights are sensitive to them
WIDE = np.pi / 6 - 1e-9
SELF_SPLIT = 4       # subdivision of a patch for its self energy (and twice that, extrapolated)
BLOCK = 64           # cells per row block in the far-field sweep
COINCIDE = 1e-12
ARC_REACH = 32.0


@lru_cache(maxsize=64)
def leggauss(q):
    return _leggauss(q)


# --------------------------------------------------------------------------- self energies


def _rect_log_mean(a, b):
    """Mean of log|x - y| for x, y uniform on an a-by-b rectangle."""
    d = np.hypot(a, b)
    return (np.log(d) - 25.0 / 12 + (2.0 / 3) * (a / b) * np.arctan(b / a)
            + (2.0 / 3) * (b / a) * np.arctan(a / b)
            - (a * a / (12 * b * b)) * np.log1p(b * b / (a * a))
            - (b * b / (12 * a * a)) * np.log1p(a * a / (b * b)))


def _sphere_rect_points(t1, t2, a1, a2, q):
    g, gw = leggauss(q)
    th = 0.5 * (t1 + t2) + 0.5 * (t2 - t1) * g
    ph = 0.5 * (a1 + a2) + 0.5 * (a2 - a1) * g
    tw = 0.5 * (t2 - t1) * gw * np.sin(th)
    pw = 0.5 * (a2 - a1) * gw
    T, P = np.meshgrid(th, ph, indexing="ij")
    X = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    return X, np.outer(tw, pw).ravel()


@lru_cache(maxsize=4096)
def patch_self_log(t1: float, t2: float, da: float, split: int = SELF_SPLIT) -> float:
    """Mean of log|X - Y| (unit sphere) over area-uniform pairs in a polar rectangle.

    Subdivision estimates at ``split`` and ``2 * split`` are combined by
    Richardson extrapolation; their error decays like ``split**-2``.
    """
    return (4 * _patch_self_log(t1, t2, da, 2 * split) - _patch_self_log(t1, t2, da, split)) / 3


def _patch_self_log(t1, t2, da, split, q=6):
    """Split into ``split**2`` sub-rectangles: Gauss rules off the diagonal, flat closed form on it."""
    te = np.linspace(t1, t2, split + 1)
    pe = np.linspace(0.0, da, split + 1)
    subs = [(te[i], te[i + 1], pe[j], pe[j + 1]) for i in range(split) for j in range(split)]
    pts = [_sphere_rect_points(*s, q) for s in subs]
    X = np.concatenate([p[0] for p in pts])
    w = np.concatenate([p[1] for p in pts])
    m = np.array([p[1].sum() for p in pts])
    # |X - Y|^2 = 2 - 2 X.Y on the unit sphere
    lg = 0.5 * np.log(np.maximum(2.0 - 2.0 * (X @ X.T), 1e-300))
    k = q * q
    owner = np.repeat(np.arange(len(subs)), k)
    lg[owner[:, None] == owner[None, :]] = 0.0
    a = np.array([s[1] - s[0] for s in subs])
    b = np.array([np.sin(0.5 * (s[0] + s[1])) * (s[3] - s[2]) for s in subs])
    total = w @ lg @ w + np.sum(m * m * _rect_log_mean(a, b))
    return float(total / m.sum() ** 2)


@lru_cache(maxsize=256)
def cap_self_log(alpha: float) -> float:
    """Mean of log|X - Y| over area-uniform pairs in a spherical cap of angular radius ``alpha``.

    Legendre expansion of the log-chordal kernel; the cap's coefficients are
    ``(P_{l-1}(c) - P_{l+1}(c)) / ((2l+1)(1-c))`` with ``c = cos(alpha)``.
    """
    c = np.cos(alpha)
    L = int(400 / alpha) + 200
    P = np.empty(L + 2)
    P[0], P[1] = 1.0, c
    for l in range(1, L + 1):
        P[l + 1] = ((2 * l + 1) * c * P[l] - l * P[l - 1]) / (l + 1)
    l = np.arange(1, L + 1)
    a = (P[l - 1] - P[l + 1]) / ((2 * l + 1) * (1 - c))
    s = np.sum((2 * l + 1) / (l * (l + 1.0)) * a * a)
    return float(0.5 * np.log(2) - 0.5 * ((1 - np.log(2)) + s))


# --------------------------------------------------------------------------- cell set


class CellSet:
    """Discretised compact set.

    Parameters
    ----------
    kind, chart : int arrays
        Cell kind and the chart holding its polar description.
    r1, r2, a1, a2 : float arrays
        Polar bounds in the chart (arcs have ``r1 == r2``; points use ``r1`` as
        centre modulus and ``a1`` as centre angle).
    radius : float array
        Chart radius of the small disk attached to POINT cells (ignored otherwise).
    label : str
        Short description used in reports.
    """

    def __init__(self, kind, chart, r1, r2, a1, a2, radius=None, label="cells"):
        self.kind = np.asarray(kind, dtype=np.int8)
        self.cell_chart = np.asarray(chart, dtype=np.int8)
        self.r1 = np.asarray(r1, dtype=float)
        self.r2 = np.asarray(r2, dtype=float)
        self.a1 = np.asarray(a1, dtype=float)
        self.a2 = np.asarray(a2, dtype=float)
        n = self.kind.size
        self.radius = np.zeros(n) if radius is None else np.broadcast_to(np.asarray(radius, float), (n,)).copy()
        self.label = label
        if n == 0:
            raise DomainError("empty cell set")
        self._build_geometry()
        self._L = None
        self._phi_cache = {}

    # construction helpers ---------------------------------------------------
    def _build_geometry(self):
        n = len(self)
        t1, t2 = 2 * np.arctan(self.r1), 2 * np.arctan(self.r2)
        self.is_cap = (self.kind == PATCH) & (self.r1 == 0) & (self.a2 - self.a1 >= 2 * np.pi - 1e-12)
        self.is_wide = (self.kind == PATCH) & (self.a2 - self.a1 >= WIDE)
        # representative node: patch centre of mass direction, arc midpoint, or the point
        amid = 0.5 * (self.a1 + self.a2)
        rmid = np.where(self.kind == PATCH, np.tan(0.25 * (t1 + t2)), self.r1)
        rmid = np.where(self.is_cap, 0.0, rmid)
        amid = np.where(self.kind == POINT, self.a1, amid)
        self.nodes = PointSet(self.cell_chart, rmid * np.exp(1j * amid))

        # fine quadrature (padded to a common width)
        fine = [self._cell_quadrature(i, Q_FINE) for i in range(n)]
        m = max(len(w) for _, w in fine)
        self.fine_count = np.array([len(w) for _, w in fine])
        self.fine_u = np.zeros((n, m), dtype=complex)
        self.fine_w = np.zeros((n, m))
        for i, (u, w) in enumerate(fine):
            self.fine_u[i, : len(w)] = u
            self.fine_u[i, len(w):] = u[0]
            self.fine_w[i, : len(w)] = w / w.sum()
        fpts = PointSet(np.repeat(self.cell_chart, m), self.fine_u.ravel())
        self.fine_pts = fpts
        self.fine_X = fpts.xyz().reshape(n, m, 3)

        coarse = np.array([self._coarse_quadrature(i) for i in range(n)])
        cpts = PointSet(np.repeat(self.cell_chart, 4), coarse.ravel())
        self.coarse_X = cpts.xyz().reshape(n, 4, 3)

        # size on the unit sphere and FS mass of patches
        st1, st2 = np.sin(t1), np.sin(t2)
        sth = np.maximum(st1, st2)
        sth = np.where((t1 < np.pi / 2) & (t2 > np.pi / 2), 1.0, sth)
        da = self.a2 - self.a1
        rr = np.abs(self.nodes.coord)
        point_size = 4 * self.radius / (1 + rr ** 2)
        self.size = np.select([self.kind == PATCH, self.kind == ARC],
                              [np.maximum(t2 - t1, sth * np.minimum(da, np.pi)), np.sin(t1) * da],
                              point_size)
        self.size = np.where(self.is_cap, 2 * t2, self.size)
        self.fs_mass = np.where(self.kind == PATCH, (np.cos(t1) - np.cos(t2)) * da / (4 * np.pi), 0.0)
        self.centroid = self.nodes.xyz()
        self._self_terms = None

    def _cell_quadrature(self, i, q):
        k = self.kind[i]
        if k != PATCH:
            return np.array([self._node_coord(i)]), np.ones(1)
        t1, t2 = 2 * np.arctan(self.r1[i]), 2 * np.arctan(self.r2[i])
        g, gw = leggauss(q)
        th = 0.5 * (t1 + t2) + 0.5 * (t2 - t1) * g
        tw = 0.5 * (t2 - t1) * gw * np.sin(th)
        if self.is_cap[i]:
            na = 2 * q
            ph = self.a1[i] + 2 * np.pi * (np.arange(na) + 0.5) / na
            pw = np.full(na, 2 * np.pi / na)
        else:
            ph = 0.5 * (self.a1[i] + self.a2[i]) + 0.5 * (self.a2[i] - self.a1[i]) * g
            pw = 0.5 * (self.a2[i] - self.a1[i]) * gw
        u = np.tan(th / 2)[:, None] * np.exp(1j * ph)[None, :]
        return u.ravel(), np.outer(tw, pw).ravel()

    def _node_coord(self, i):
        if self.kind[i] == POINT:
            return self.r1[i] * np.exp(1j * self.a1[i])
        return self.r1[i] * np.exp(0.5j * (self.a1[i] + self.a2[i]))

    def _coarse_quadrature(self, i):
        if self.kind[i] != PATCH:
            return np.full(4, self._node_coord(i))
        t1, t2 = 2 * np.arctan(self.r1[i]), 2 * np.arctan(self.r2[i])
        if self.is_cap[i]:
            # one ring matching the second moment of the cap, four equispaced angles
            c = np.cos(t2)
            th = np.arccos(np.sqrt((1 + c + c * c) / 3))
            ph = self.a1[i] + np.pi * (np.arange(4) + 0.5) / 2
            return np.tan(th / 2) * np.exp(1j * ph)
        # two-point Gauss rule in cos(theta) (area weights) times two-point Gauss in angle
        g = np.array([-1.0, 1.0]) / np.sqrt(3)
        c1, c2 = np.cos(t1), np.cos(t2)
        th = np.arccos(0.5 * (c1 + c2) + 0.5 * (c2 - c1) * g)
        ph = 0.5 * (self.a1[i] + self.a2[i]) + 0.5 * (self.a2[i] - self.a1[i]) * g
        return (np.tan(th / 2)[:, None] * np.exp(1j * ph)[None, :]).ravel()

    # basic protocol -----------------------------------------------------------
    def __len__(self):
        return self.kind.size

    @property
    def fill_distance(self) -> float:
        """Half the largest cell size, in chordal units of the unit-diameter sphere."""
        return float(0.25 * self.size.max())

    def describe(self) -> dict:
        counts = {KIND_NAMES[k]: int((self.kind == k).sum()) for k in (POINT, ARC, PATCH)}
        return {"label": self.label, "cells": len(self), "kinds": counts, "fill_distance": self.fill_distance}

    @property
    def self_terms(self) -> np.ndarray:
        """Diagonal of the cell-averaged kernel ``2 log[x, y]``."""
        if self._self_terms is None:
            out = np.empty(len(self))
            ln2 = np.log(2.0)
            for i in range(len(self)):
                k = self.kind[i]
                if k == PATCH:
                    t2 = 2 * np.arctan(self.r2[i])
                    if self.is_cap[i]:
                        out[i] = 2 * (cap_self_log(round(float(t2), 14)) - ln2)
                    else:
                        t1 = 2 * np.arctan(self.r1[i])
                        out[i] = 2 * (patch_self_log(round(float(t1), 14), round(float(t2), 14),
                                                     round(float(self.a2[i] - self.a1[i]), 14)) - ln2)
                elif k == ARC:
                    r = self.r1[i]
                    out[i] = 2 * np.log(r * (self.a2[i] - self.a1[i]) / (2 * np.pi)) - 2 * np.log1p(r * r)
                else:
                    a = self.radius[i]
                    if a <= 0:
                        out[i] = -np.inf
                    else:
                        r2 = np.abs(self.nodes.coord[i]) ** 2
                        # radius is given in the defining chart; convert to the canonical one
                        if self.nodes.chart[i] != self.cell_chart[i]:
                            a = a * r2
                        out[i] = 2 * np.log(a) - 0.5 - 2 * np.log1p(r2)
            self._self_terms = out
        return self._self_terms

    # kernel assembly ----------------------------------------------------------
    def interaction(self, other: "CellSet | None" = None) -> np.ndarray:
        """Cell-averaged ``2 log[x, y]`` between the cells of ``self`` and ``other``."""
        if other is None or other is self:
            if self._L is None:
                self._L = _assemble(self, self, same=True)
            return self._L
        return _assemble(self, other, same=False)

    def phi_bar(self, metric: Metric) -> np.ndarray:
        """Cell averages of the perturbation ``Phi``."""
        key = id(metric)
        if key not in self._phi_cache:
            vals = metric.Phi(self.fine_pts).reshape(self.fine_w.shape)
            self._phi_cache[key] = (metric, np.sum(vals * self.fine_w, axis=1))
        return self._phi_cache[key][1]

    def affine_log_bar(self) -> np.ndarray:
        """Cell averages of ``log(1 + |z|^2)`` in chart 0; DomainError if a cell reaches infinity."""
        z = self.fine_pts.affine().reshape(self.fine_w.shape)
        used = self.fine_w > 0
        if not np.all(np.isfinite(z[used])) or np.any(self.is_cap & (self.cell_chart == 1)):
            raise DomainError("measure support touches the point at infinity")
        vals = np.where(used, np.log1p(np.abs(np.where(used, z, 0)) ** 2), 0.0)
        return np.sum(vals * self.fine_w, axis=1)

    def touches_infinity(self) -> bool:
        return bool(np.any(self.nodes.at_infinity) or np.any(self.is_cap & (self.cell_chart == 1)))

    def subset(self, idx) -> "CellSet":
        idx = np.asarray(idx, dtype=int) if not np.asarray(idx).dtype == bool else np.asarray(idx)
        return CellSet(self.kind[idx], self.cell_chart[idx], self.r1[idx], self.r2[idx], self.a1[idx],
                       self.a2[idx], self.radius[idx], label=f"{self.label}[subset]")

    @classmethod
    def concat(cls, sets, label=None) -> "CellSet":
        cat = lambda name: np.concatenate([getattr(s, name) for s in sets])
        return cls(cat("kind"), cat("cell_chart"), cat("r1"), cat("r2"), cat("a1"), cat("a2"),
                   cat("radius"), label=label or "+".join(s.label for s in sets))

    def to_json(self) -> list:
        return [[int(k), int(c), float(a), float(b), float(x), float(y), float(r)]
                for k, c, a, b, x, y, r in zip(self.kind, self.cell_chart, self.r1, self.r2,
                                                self.a1, self.a2, self.radius)]


# --------------------------------------------------------------------------- assembly


def _far_field(A: CellSet, B: CellSet) -> np.ndarray:
    XB = B.coarse_X.reshape(-1, 3)
    nb = len(B)
    out = np.empty((len(A), nb))
    for s in range(0, len(A), BLOCK):
        XA = A.coarse_X[s:s + BLOCK].reshape(-1, 3)
        # 2 log[x, y] = log(|X - Y|^2 / 4) = log((1 - X.Y) / 2) on the unit sphere
        lg = np.log(np.maximum(1.0 - XA @ XB.T, 1e-300) * 0.5)
        out[s:s + BLOCK] = lg.reshape(-1, 4, nb, 4).mean(axis=(1, 3))
    return out


def _pair_values(A: CellSet, B: CellSet, ia, ib):
    """Fine-quadrature averages for cell pairs (ia[k], ib[k])."""
    vals = np.empty(len(ia))
    ca, cb = A.fine_count[ia], B.fine_count[ib]
    keys = ca * 100000 + cb
    for key in np.unique(keys):
        sel = np.nonzero(keys == key)[0]
        na, nb = int(ca[sel[0]]), int(cb[sel[0]])
        step = max(1, 2_000_000 // (na * nb))
        for s in range(0, len(sel), step):
            k = sel[s:s + step]
            vals[k] = _batched_log_mean(A.fine_X[ia[k], :na], A.fine_w[ia[k], :na],
                                        B.fine_X[ib[k], :nb], B.fine_w[ib[k], :nb])
    return vals


def _batched_log_mean(XA, wA, XB, wB):
    """sum_ab wA[p,a] wB[p,b] 2 log[x_a, y_b] for each pair p of unit-vector clouds."""
    dots = np.matmul(XA, XB.transpose(0, 2, 1))
    lg = np.log(np.maximum(1.0 - dots, 1e-300) * 0.5)
    return np.einsum("pa,pab,pb->p", wA, lg, wB)


def _probe_arc_values(A: CellSet, B: CellSet, ia, ib, q=24):
    """Average of 2 log[z, y] over arc ``ib`` (angle-uniform weights) for probe nodes ``ia``.

    The arc is split at the probe's angle and each side uses a cubically graded
    Gauss rule, which resolves the near-logarithmic peak of probes close to the arc.
    """
    g, gw = leggauss(q)
    x, xw = 0.5 * (g + 1), 0.5 * gw
    s, sw = x ** 3, 3 * x ** 2 * xw
    a1, a2 = B.a1[ib], B.a2[ib]
    ca = np.where(B.cell_chart[ib] == A.cell_chart[ia], np.angle(A.nodes.coord[ia]),
                  -np.angle(A.nodes.coord[ia]))
    mid = 0.5 * (a1 + a2)
    tp = mid + np.clip(np.angle(np.exp(1j * (ca - mid))), a1 - mid, a2 - mid)
    left, right = tp - a1, a2 - tp
    ang = np.concatenate([tp[:, None] - left[:, None] * s, tp[:, None] + right[:, None] * s], axis=1)
    w = np.concatenate([left[:, None] * sw, right[:, None] * sw], axis=1) / (a2 - a1)[:, None]
    u = B.r1[ib][:, None] * np.exp(1j * ang)
    Y = PointSet(np.repeat(B.cell_chart[ib], 2 * q), u.ravel()).xyz().reshape(len(ib), 2 * q, 3)
    d2 = np.sum((A.centroid[ia][:, None, :] - Y) ** 2, axis=-1)
    return np.sum(np.log(np.maximum(d2, 1e-300) * 0.25) * w, axis=1)


def _probe_arc_far(A: CellSet, B: CellSet, pa, pb, q=4):
    """Probe-to-arc averages with a q-point Gauss rule along each arc (for well-separated pairs)."""
    g, gw = leggauss(q)
    a1, a2 = B.a1[pb], B.a2[pb]
    ang = 0.5 * (a1 + a2)[:, None] + 0.5 * (a2 - a1)[:, None] * g[None, :]
    u = B.r1[pb][:, None] * np.exp(1j * ang)
    Y = PointSet(np.repeat(B.cell_chart[pb], q), u.ravel()).xyz()
    out = np.empty((len(pa), len(pb)))
    step = max(1, 4_000_000 // Y.shape[0])
    for s in range(0, len(pa), step):
        lg = np.log(np.maximum(1.0 - A.centroid[pa[s:s + step]] @ Y.T, 1e-300) * 0.5)
        out[s:s + step] = lg.reshape(-1, len(pb), q) @ (0.5 * gw)
    return out


def _quad_xyz(X: CellSet, idx, q):
    out = []
    for j in idx:
        u, w = X._cell_quadrature(j, q)
        out.append((PointSet(X.cell_chart[j], u).xyz(), w / w.sum()))
    return out


def _cap_neighbours(A: CellSet, B: CellSet, L: np.ndarray, same: bool):
    """Recompute pairs of caps and wide wedges with their neighbours using order-Q_CAP rules."""
    for X, Y, flip in ((A, B, False), (B, A, True)):
        if same and flip:
            break
        for i in np.nonzero(X.is_wide)[0]:
            d = np.linalg.norm(Y.centroid - X.centroid[i], axis=1)
            nbr = np.nonzero((d < NEAR * (X.size[i] + Y.size)) & (d >= COINCIDE))[0]
            if same:
                nbr = nbr[nbr != i]
            if len(nbr) == 0:
                continue
            Xi, wi = _quad_xyz(X, [i], Q_CAP)[0]
            quads = _quad_xyz(Y, nbr, Q_CAP)
            counts = np.array([len(w) for _, w in quads])
            v = np.empty(len(nbr))
            for c in np.unique(counts):
                sel = np.nonzero(counts == c)[0]
                XB = np.array([quads[t][0] for t in sel])
                wB = np.array([quads[t][1] for t in sel])
                v[sel] = _batched_log_mean(np.broadcast_to(Xi, (len(sel),) + Xi.shape),
                                           np.broadcast_to(wi, (len(sel),) + wi.shape), XB, wB)
            if flip:
                L[nbr, i] = v
            else:
                L[i, nbr] = v
                if same:
                    L[nbr, i] = v


def _assemble(A: CellSet, B: CellSet, same: bool) -> np.ndarray:
    L = _far_field(A, B)
    reach = NEAR * (A.size.max() + B.size.max())
    ta, tb = cKDTree(A.centroid), cKDTree(B.centroid)
    sdm = ta.sparse_distance_matrix(tb, reach, output_type="coo_matrix")
    ia, ib, d = sdm.row, sdm.col, sdm.data
    near = d < NEAR * (A.size[ia] + B.size[ib])
    # caps and wide polar wedges are badly served by the four-point rule; treat all their pairs as near
    capa = np.nonzero(A.is_wide)[0]
    capb = np.nonzero(B.is_wide)[0]
    extra_a = [np.repeat(capa, len(B)), np.tile(np.arange(len(B)), len(capa))]
    extra_b = [np.tile(np.arange(len(A)), len(capb)), np.repeat(capb, len(A))]
    ia = np.concatenate([ia[near], extra_a[0], extra_b[0]]).astype(np.int64)
    ib = np.concatenate([ib[near], extra_a[1], extra_b[1]]).astype(np.int64)
    if len(ia):
        pairs = np.unique(np.stack([ia, ib], axis=1), axis=0)
        ia, ib = pairs[:, 0], pairs[:, 1]
    if same:
        keep = ia != ib
        ia, ib = ia[keep], ib[keep]
        # evaluate each unordered pair once
        up = ia < ib
        ia, ib = ia[up], ib[up]
        v = _pair_values(A, B, ia, ib)
        L[ia, ib] = v
        L[ib, ia] = v
        _cap_neighbours(A, B, L, same)
        np.fill_diagonal(L, A.self_terms)
        return L
    # zero-radius probes integrate along nearby arcs rather than using the arc node
    probe_a = (A.kind == POINT) & (A.radius == 0)
    arc_b = B.kind == ARC
    if np.any(probe_a) and np.any(arc_b):
        arcp = probe_a[ia] & arc_b[ib]
        ia, ib = ia[~arcp], ib[~arcp]
        pa, pb = np.nonzero(probe_a)[0], np.nonzero(arc_b)[0]
        L[np.ix_(pa, pb)] = _probe_arc_far(A, B, pa, pb)
        sdm = cKDTree(A.centroid[pa]).sparse_distance_matrix(
            cKDTree(B.centroid[pb]), ARC_REACH * B.size[pb].max(), output_type="coo_matrix")
        qa, qb = pa[sdm.row], pb[sdm.col]
        # the graded rule also covers a probe sitting on the arc (integrable log endpoint)
        for s in range(0, len(qa), 20000):
            L[qa[s:s + 20000], qb[s:s + 20000]] = _probe_arc_values(A, B, qa[s:s + 20000], qb[s:s + 20000])
    # cross assembly: coincident cells of equal geometry take the self term
    coincide = np.zeros(len(ia), dtype=bool)
    if len(ia):
        dd = np.linalg.norm(A.centroid[ia] - B.centroid[ib], axis=1)
        coincide = dd < COINCIDE
    v = _pair_values(A, B, ia[~coincide], ib[~coincide])
    L[ia[~coincide], ib[~coincide]] = v
    ci, cj = ia[coincide], ib[coincide]
    if len(ci):
        same_geom = ((A.kind[ci] == B.kind[cj]) & np.isclose(A.r1[ci], B.r1[cj]) & np.isclose(A.r2[ci], B.r2[cj])
                     & np.isclose(A.a2[ci] - A.a1[ci], B.a2[cj] - B.a1[cj]) & (A.cell_chart[ci] == B.cell_chart[cj]))
        # a zero-radius probe sitting on a node sees that cell's self-averaged value
        use_b = same_geom | ((A.kind[ci] == POINT) & (A.radius[ci] == 0))
        vals = np.where(use_b, B.self_terms[cj], 0.0)
        rest = ~use_b
        if np.any(rest):
            vals[rest] = _pair_values(A, B, ci[rest], cj[rest])
        L[ci, cj] = vals
    _cap_neighbours(A, B, L, same)
    return L


# --------------------------------------------------------------------------- constructors


def _igloo_rings(theta_max: float, n_rings: int):
    """Cap plus rings of near-square cells covering 0 <= theta <= theta_max."""
    tau = theta_max / (n_rings + 0.5)
    rows = [(0.0, 0.5 * tau, 0.0, 2 * np.pi)]
    for k in range(1, n_rings + 1):
        a, b = (k - 0.5) * tau, (k + 0.5) * tau
        m = max(3, int(round(2 * np.pi * np.sin(k * tau) / tau)))
        off = (np.pi / m) * (k % 2)
        e = off + 2 * np.pi * np.arange(m + 1) / m
        rows.extend((a, b, e[j], e[j + 1]) for j in range(m))
    return np.array(rows), tau


def sphere_grid(resolution: int = 128) -> CellSet:
    """Whole sphere: igloo grid on each hemisphere with ``resolution`` cells along the equator."""
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    n_rings = max(1, resolution // 4)
    rows, _ = _igloo_rings(np.pi / 2, n_rings)
    r1, r2 = np.tan(rows[:, 0] / 2), np.tan(rows[:, 1] / 2)
    r2 = np.minimum(r2, 1.0)
    n = len(rows)
    return CellSet(np.full(2 * n, PATCH), np.repeat([0, 1], n), np.tile(r1, 2), np.tile(r2, 2),
                   np.tile(rows[:, 2], 2), np.tile(rows[:, 3], 2), label=f"sphere_grid({resolution})")


def circle(r: float = 1.0, n: int = 2048) -> CellSet:
    """Circle |z| = r split into ``n`` equal arcs with nodes at r exp(2 pi i k / n)."""
    if r <= 0 or n < 3:
        raise ValueError("circle needs r > 0 and n >= 3")
    e = 2 * np.pi * (np.arange(n) - 0.5) / n
    return CellSet(np.full(n, ARC), np.zeros(n), np.full(n, r), np.full(n, r), e, e + 2 * np.pi / n,
                   label=f"circle(r={r:g},n={n})")


def disk(r: float = 1.0, n: int = 4096, n_boundary: int | None = None) -> CellSet:
    """Closed disk |z| <= r: igloo patches in the interior plus boundary arcs."""
    if r <= 0:
        raise ValueError("disk needs r > 0")
    theta_r = 2 * np.arctan(r)
    area = 2 * np.pi * (1 - np.cos(theta_r))
    n_rings = max(1, int(round(theta_r / np.sqrt(area / max(n, 1)) - 0.5)))
    rows, tau = _igloo_rings(theta_r, n_rings)
    m = len(rows)
    patches = CellSet(np.full(m, PATCH), np.zeros(m), np.tan(rows[:, 0] / 2), np.tan(rows[:, 1] / 2),
                      rows[:, 2], rows[:, 3])
    if n_boundary is None:
        n_boundary = max(8, int(round(2 * np.pi * np.sin(theta_r) / tau)))
    return CellSet.concat([patches, circle(r, n_boundary)], label=f"disk(r={r:g},n={m}+{n_boundary})")


def from_nodes(points, radius=None, label="nodes") -> CellSet:
    """POINT cells at explicit nodes; default radius is half the nearest-neighbour spacing."""
    p = as_points(points)
    n = len(p)
    if n == 0:
        raise DomainError("empty node list")
    if radius is None:
        if n == 1:
            radius = np.full(1, 1e-3)
        else:
            X = p.xyz()
            d, _ = cKDTree(X).query(X, k=2)
            rho = 0.5 * d[:, 1]
            # sphere length to canonical chart length
            radius = 0.5 * rho * (1 + np.abs(p.coord) ** 2)
    u = p.coord
    return CellSet(np.full(n, POINT), p.chart, np.abs(u), np.abs(u), np.angle(u), np.angle(u), radius,
                   label=label)


def probes(points) -> CellSet:
    """Zero-radius POINT cells used to evaluate potentials at arbitrary points."""
    return from_nodes(points, radius=np.zeros(len(as_points(points))), label="probes")


def from_descriptor(desc) -> CellSet:
    """Build a cell set from a JSON-style descriptor or a list of affine nodes."""
    if isinstance(desc, (list, tuple)):
        return from_nodes(np.array([complex(*x) if isinstance(x, (list, tuple)) else complex(x) for x in desc]))
    kind = desc.get("kind")
    if kind == "circle":
        return circle(desc.get("r", 1.0), desc.get("n", 2048))
    if kind == "disk":
        return disk(desc.get("r", 1.0), desc.get("n", 4096), desc.get("n_boundary"))
    if kind == "sphere_grid":
        return sphere_grid(desc.get("resolution", 128))
    if kind == "nodes":
        pts = desc["nodes"]
        chart = [int(x[0]) for x in pts]
        coord = [complex(x[1], x[2]) for x in pts]
        return from_nodes(PointSet(chart, coord), desc.get("radius"))
    if kind == "union":
        return CellSet.concat([from_descriptor(d) for d in desc["parts"]])
    raise ValueError(f"unknown compact-set kind {kind!r}")
