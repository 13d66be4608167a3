"""Probability measures on the sphere and their potential-theoretic functionals.

Two representations are used:

* ``GridMeasure``: weights on the cells of a ``CellSet``; mass is spread over
  each cell, so self-interactions are the cell-averaged kernel;
* ``AtomicMeasure``: ``N`` equal atoms (a zero set); energies exclude the diagonal.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import cells as _cells
from .cells import CellSet
from .errors import CollisionWarning, DiagonalError, DomainError
from .geometry import COLLISION_TOL, GreenConstant, Metric, PointSet, SpherePoint, as_points, chordal

CompactSupport = CellSet
M_DIAG = 50.0


@dataclass(frozen=True)
class RateValue:
    """Rate functional split into its parts; ``I = energy_term + sup_term`` and ``I_tilde = I - E0``."""

    energy_term: float
    sup_term: float
    I: float
    I_tilde: float
    E0: float
    fill_distance: float = 0.0

    def as_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


class GridMeasure:
    """Probability weights on the cells of a discretised set.

    Parameters
    ----------
    cells : CellSet
    weights : array_like
        Non-negative, summing to one within 1e-12 (pass ``normalize=True`` to rescale).
    """

    def __init__(self, cells: CellSet, weights, normalize: bool = False):
        w = np.asarray(weights, dtype=float).copy()
        if w.shape != (len(cells),):
            raise ValueError("weights must match the number of cells")
        # clip round-off produced by solvers
        w[(w < 0) & (w > -1e-14)] = 0.0
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if normalize:
            w = w / w.sum()
        elif abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"weights sum to {w.sum():.15g}, expected 1")
        self.cells = cells
        self.weights = w

    @classmethod
    def from_nodes(cls, nodes, weights, cell_radius=None, normalize=False):
        return cls(_cells.from_nodes(nodes, cell_radius), weights, normalize)

    @classmethod
    def uniform(cls, cells: CellSet):
        """Arc-length on arcs, FS area on patches, equal weights otherwise (per connected kind)."""
        w = np.where(cells.kind == _cells.PATCH, cells.fs_mass, 0.0)
        arcs = cells.kind == _cells.ARC
        if np.any(arcs):
            w = np.where(arcs, cells.r1 * (cells.a2 - cells.a1) / (1 + cells.r1 ** 2), w)
        w = np.where(cells.kind == _cells.POINT, 1.0, w)
        return cls(cells, w, normalize=True)

    @property
    def nodes(self) -> PointSet:
        return self.cells.nodes

    @property
    def cell_radius(self) -> np.ndarray:
        return 0.25 * self.cells.size

    def __len__(self):
        return len(self.weights)

    def mix(self, other: "GridMeasure", t: float) -> "GridMeasure":
        """``t * self + (1 - t) * other``."""
        if other.cells is self.cells:
            return GridMeasure(self.cells, t * self.weights + (1 - t) * other.weights, normalize=True)
        cs = CellSet.concat([self.cells, other.cells])
        return GridMeasure(cs, np.concatenate([t * self.weights, (1 - t) * other.weights]), normalize=True)

    def to_json(self):
        return [[int(c), float(u.real), float(u.imag), float(w)]
                for c, u, w in zip(self.nodes.chart, self.nodes.coord, self.weights)]


class AtomicMeasure:
    """Normalised counting measure of ``N`` atoms (with multiplicity)."""

    def __init__(self, atoms):
        self.atoms = as_points(atoms)
        self.N = len(self.atoms)
        if self.N == 0:
            raise ValueError("empty atomic measure")

    @property
    def weights(self):
        return np.full(self.N, 1.0 / self.N)

    def to_json(self):
        return [[int(c), float(u.real), float(u.imag), 1.0 / self.N]
                for c, u in zip(self.atoms.chart, self.atoms.coord)]


# --------------------------------------------------------------------------- matrices


def green_matrix(metric: Metric, gc: GreenConstant, A: CellSet, B: CellSet | None = None) -> np.ndarray:
    """Cell-averaged Green matrix between the cells of ``A`` and ``B`` (``B = A`` by default)."""
    L = A.interaction(B)
    pa = A.phi_bar(metric)
    pb = pa if B is None or B is A else B.phi_bar(metric)
    return L - pa[:, None] - pb[None, :] + gc.E


def _atomic_green(metric, gc, mu: AtomicMeasure, z: PointSet, M: float):
    g = _pairwise_green(metric, gc, z, mu.atoms)
    hit = ~np.isfinite(g)
    if np.any(hit):
        warnings.warn("potential evaluated at an atom; using the truncated kernel", CollisionWarning, stacklevel=3)
        g = np.where(hit, -M, g)
    return g


def _pairwise_green(metric, gc, P: PointSet, Q: PointSet) -> np.ndarray:
    a = PointSet.__new__(PointSet)
    a.chart, a.coord = P.chart[:, None], P.coord[:, None]
    b = PointSet.__new__(PointSet)
    b.chart, b.coord = Q.chart[None, :], Q.coord[None, :]
    d = chordal(a, b)
    with np.errstate(divide="ignore"):
        g = 2 * np.log(d) - metric.Phi(P)[:, None] - metric.Phi(Q)[None, :] + gc.E
    return np.where(d < COLLISION_TOL, -np.inf, g)


# --------------------------------------------------------------------------- functionals


def potential(metric: Metric, gc: GreenConstant, mu, z, M_diag: float = M_DIAG):
    """Green potential of ``mu`` at ``z``.

    For grid measures the kernel is averaged over each cell; at a cell's own
    node the cell's self-averaged value is used.  For atomic measures an atom
    hit by ``z`` is handled with the kernel truncated at ``-M_diag``.
    """
    scalar = isinstance(z, SpherePoint)
    pts = as_points(z)
    if isinstance(mu, AtomicMeasure):
        U = _atomic_green(metric, gc, mu, pts, M_diag).mean(axis=1)
    else:
        P = _cells.probes(pts)
        L = P.interaction(mu.cells)
        U = L @ mu.weights - mu.cells.phi_bar(metric) @ mu.weights - metric.Phi(pts) + gc.E
    return float(U[0]) if scalar else U


def potential_on(metric: Metric, gc: GreenConstant, mu, K: CellSet) -> np.ndarray:
    """Potential of ``mu`` averaged over each cell of ``K``."""
    if isinstance(mu, AtomicMeasure):
        # atoms act on the cell quadrature of K
        X = K.fine_pts
        g = _atomic_green(metric, gc, mu, X, M_DIAG).mean(axis=1)
        return np.sum(g.reshape(K.fine_w.shape) * K.fine_w, axis=1)
    return green_matrix(metric, gc, K, mu.cells) @ mu.weights


def green_energy(metric: Metric, gc: GreenConstant, mu, strict: bool = False, M: float | None = None) -> float:
    """Green energy; off-diagonal for atomic measures, cell-averaged for grid measures.

    ``M`` truncates the kernel at ``-M`` (pairs and cell self terms alike).
    """
    if isinstance(mu, AtomicMeasure):
        G = _pairwise_green(metric, gc, mu.atoms, mu.atoms)
        np.fill_diagonal(G, 0.0)
        if np.any(~np.isfinite(G)):
            if strict:
                raise DiagonalError("coincident atoms")
            if M is None:
                return float("nan")
        if M is not None:
            G = np.maximum(G, -M)
            np.fill_diagonal(G, 0.0)
        return float(G.sum() / mu.N ** 2)
    G = green_matrix(metric, gc, mu.cells)
    if M is not None:
        G = np.maximum(G, -M)
    w = mu.weights
    return float(w @ G @ w)


def log_energy(mu) -> float:
    """Unweighted logarithmic energy in chart 0, with the same diagonal policy as ``green_energy``."""
    if isinstance(mu, AtomicMeasure):
        z = mu.atoms.affine()
        if not np.all(np.isfinite(z)):
            raise DomainError("atom at infinity")
        d = np.abs(z[:, None] - z[None, :])
        np.fill_diagonal(d, 1.0)
        with np.errstate(divide="ignore"):
            return float(np.log(d).sum() / mu.N ** 2)
    abar = mu.cells.affine_log_bar()
    w = mu.weights
    return float(0.5 * w @ mu.cells.interaction() @ w + w @ abar)


def sup_potential(metric: Metric, gc: GreenConstant, mu, K: CellSet, return_arg: bool = False):
    """Largest cell-averaged potential of ``mu`` over the cells of ``K``."""
    U = potential_on(metric, gc, mu, K)
    j = int(np.argmax(U))
    return (float(U[j]), j) if return_arg else float(U[j])


def rate(metric: Metric, gc: GreenConstant, mu, K: CellSet, E0: float) -> RateValue:
    """``I = -E(mu)/2 + sup_K U^mu`` and its recentring by ``E0``."""
    e = -0.5 * green_energy(metric, gc, mu)
    s = sup_potential(metric, gc, mu, K)
    I = e + s
    return RateValue(e, s, I, I - E0, E0, K.fill_distance)


def rate_local(metric: Metric, mu: GridMeasure, K: CellSet) -> float:
    """``-Sigma(mu) + sup_K (2 int log|z - w| dmu(w) - phi_0(z))`` evaluated cell by cell."""
    if K.touches_infinity():
        raise DomainError("K touches the point at infinity")
    sigma = log_energy(mu)
    abar_mu = mu.cells.affine_log_bar()
    abar_K = K.affine_log_bar()
    w = mu.weights
    # cell average of 2 log|z - w| = 2 log[z, w] + log(1+|z|^2) + log(1+|w|^2)
    inner = K.interaction(mu.cells) @ w + abar_K + abar_mu @ w
    phi0 = abar_K + K.phi_bar(metric)
    return float(-sigma + np.max(inner - phi0))


def energy_form_distance(metric: Metric, gc: GreenConstant, mu, nu) -> float:
    """``<mu - nu, mu - nu>`` in the Green energy form (non-positive for mass-zero differences).

    Grid measures on the same cells use the cell-averaged matrix; other
    combinations are assembled on the union of supports, with atoms
    contributing off-diagonal terms only.
    """
    if isinstance(mu, GridMeasure) and isinstance(nu, GridMeasure):
        if mu.cells is nu.cells:
            d = mu.weights - nu.weights
            return float(d @ green_matrix(metric, gc, mu.cells) @ d)
        cs = CellSet.concat([mu.cells, nu.cells])
        d = np.concatenate([mu.weights, -nu.weights])
        return float(d @ green_matrix(metric, gc, cs) @ d)
    if isinstance(mu, AtomicMeasure) and isinstance(nu, AtomicMeasure):
        pts = PointSet.concat([mu.atoms, nu.atoms])
        d = np.concatenate([mu.weights, -nu.weights])
        G = _pairwise_green(metric, gc, pts, pts)
        np.fill_diagonal(G, 0.0)
        if not np.all(np.isfinite(G)):
            raise DiagonalError("coincident atoms")
        return float(d @ G @ d)
    if isinstance(mu, GridMeasure):
        mu, nu = nu, mu
    e_mu = green_energy(metric, gc, mu)
    cross = float(np.mean(potential(metric, gc, nu, mu.atoms)))
    e_nu = green_energy(metric, gc, nu)
    return e_mu - 2 * cross + e_nu


def smooth_grid_measure(mu: GridMeasure, passes: int = 1) -> GridMeasure:
    """Local averaging with neighbouring cells (plumbing, no accuracy guarantee)."""
    from scipy.spatial import cKDTree
    cs = mu.cells
    tree = cKDTree(cs.centroid)
    w = mu.weights.copy()
    for _ in range(passes):
        nb = tree.query_ball_point(cs.centroid, r=1.5 * cs.size.max())
        dens = w / np.where(cs.fs_mass > 0, cs.fs_mass, 1.0)
        new = np.array([dens[idx].mean() for idx in nb]) * np.where(cs.fs_mass > 0, cs.fs_mass, 1.0)
        w = new / new.sum()
    return GridMeasure(cs, w)
