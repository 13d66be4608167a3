"""Charts on the Riemann sphere, Hermitian metrics on O(1), Green's function and quadrature.

Points are stored in one of two affine charts: chart 0 with coordinate ``z`` and
chart 1 with coordinate ``w = 1/z`` (``w = 0`` is the point at infinity).  The
canonical representative uses the chart in which ``|coord| <= 1 + EPS_CHART``,
with ties resolved in favour of chart 0.

A metric is stored as a smooth global perturbation ``Phi`` of the Fubini-Study
weight, so the chart potentials are

    phi_0(z) = log(1 + |z|^2) + Phi,      phi_1(w) = log(1 + |w|^2) + Phi,

which satisfy ``phi_1(w) = phi_0(1/w) + log|w|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RectSphereBivariateSpline

from .errors import DiagonalError, DomainError, ResolutionError, SmoothnessError

EPS_CHART = 1e-9
COLLISION_TOL = 1e-13
# partition of unity between the charts switches over 1/R_PU < |coord| < R_PU
R_PU = 1.5
FD_STEP = 1e-3
RADIAL_FACTOR = 2
# probe-centred quadratures resolve curvature bands that are not concentric with the probe
CENTERED_MIN = 256


# --------------------------------------------------------------------------- points


@dataclass(frozen=True, eq=False)
class SpherePoint:
    """A single point of the sphere given in a chart."""

    chart: int
    coord: complex

    def canonical(self) -> "SpherePoint":
        ps = PointSet(self.chart, self.coord)
        return SpherePoint(int(ps.chart[0]), complex(ps.coord[0]))

    def in_chart(self, chart: int) -> complex:
        return complex(PointSet(self.chart, self.coord).in_chart(chart)[0])

    @property
    def z(self) -> complex:
        """Chart-0 coordinate (``inf`` at the point at infinity)."""
        return complex(PointSet(self.chart, self.coord).affine()[0])

    def __eq__(self, other):
        if not isinstance(other, SpherePoint):
            return NotImplemented
        return bool(chordal(PointSet(self.chart, self.coord), PointSet(other.chart, other.coord))[0]
                    < COLLISION_TOL)

    __hash__ = None


class PointSet:
    """Vectorised set of sphere points in canonical chart form.

    Parameters
    ----------
    chart : int or array of int
        Chart index of each coordinate (0 or 1).
    coord : complex or array of complex
        Chart coordinates.  Infinite entries denote the pole of that chart.
    """

    __slots__ = ("chart", "coord")

    def __init__(self, chart, coord):
        coord = np.atleast_1d(np.asarray(coord, dtype=complex))
        chart = np.asarray(chart, dtype=np.int8)
        chart, coord = np.broadcast_arrays(chart, coord)
        chart = chart.copy()
        coord = coord.copy()
        if np.any((chart != 0) & (chart != 1)):
            raise DomainError("chart index must be 0 or 1")
        inf = ~np.isfinite(coord)
        if np.any(inf):
            coord[inf] = 0.0
            chart[inf] = 1 - chart[inf]
        a = np.abs(coord)
        flip = ((chart == 0) & (a > 1 + EPS_CHART)) | ((chart == 1) & (a >= 1 / (1 + EPS_CHART)))
        if np.any(flip):
            coord[flip] = 1.0 / coord[flip]
            chart[flip] = 1 - chart[flip]
        self.chart = chart
        self.coord = coord

    @classmethod
    def from_affine(cls, z) -> "PointSet":
        return cls(0, z)

    @classmethod
    def from_xyz(cls, X) -> "PointSet":
        """Inverse stereographic projection of unit vectors (south pole is z = 0)."""
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        south = X[:, 2] <= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (X[:, 0] + 1j * X[:, 1]) / (1 - X[:, 2])
            w = (X[:, 0] - 1j * X[:, 1]) / (1 + X[:, 2])
        return cls(np.where(south, 0, 1), np.where(south, z, w))

    @classmethod
    def concat(cls, sets: Sequence["PointSet"]) -> "PointSet":
        out = cls.__new__(cls)
        out.chart = np.concatenate([s.chart for s in sets])
        out.coord = np.concatenate([s.coord for s in sets])
        return out

    def __len__(self):
        return self.coord.size

    @property
    def shape(self):
        return self.coord.shape

    def __getitem__(self, idx) -> "PointSet":
        out = PointSet.__new__(PointSet)
        out.chart = np.atleast_1d(self.chart[idx])
        out.coord = np.atleast_1d(self.coord[idx])
        return out

    def reshape(self, *shape) -> "PointSet":
        out = PointSet.__new__(PointSet)
        out.chart = self.chart.reshape(*shape)
        out.coord = self.coord.reshape(*shape)
        return out

    def point(self, i: int) -> SpherePoint:
        return SpherePoint(int(self.chart.flat[i]), complex(self.coord.flat[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self.point(i)

    def in_chart(self, chart: int) -> np.ndarray:
        """Coordinates in ``chart``; ``inf`` where the point is that chart's pole."""
        out = self.coord.copy()
        other = self.chart != chart
        with np.errstate(divide="ignore", invalid="ignore"):
            out[other] = 1.0 / out[other]
        out[other & (self.coord == 0)] = complex(np.inf, 0)
        return out

    def affine(self) -> np.ndarray:
        return self.in_chart(0)

    @property
    def at_infinity(self) -> np.ndarray:
        return (self.chart == 1) & (self.coord == 0)

    def xyz(self) -> np.ndarray:
        u = self.coord
        s = 1.0 + np.abs(u) ** 2
        sign = np.where(self.chart == 0, 1.0, -1.0)
        return np.stack([2 * u.real / s, sign * 2 * u.imag / s, sign * (np.abs(u) ** 2 - 1) / s], axis=-1)

    def to_json(self):
        return [[int(c), float(u.real), float(u.imag)] for c, u in zip(self.chart.ravel(), self.coord.ravel())]


def as_points(p) -> PointSet:
    """Coerce a SpherePoint, a PointSet, a sequence of SpherePoints or affine numbers."""
    if isinstance(p, PointSet):
        return p
    if isinstance(p, SpherePoint):
        return PointSet(p.chart, p.coord)
    if isinstance(p, (list, tuple)) and p and isinstance(p[0], SpherePoint):
        return PointSet([q.chart for q in p], [q.coord for q in p])
    return PointSet.from_affine(p)


def chordal(p, q) -> np.ndarray:
    """Chordal distance ``[p, q]`` (at most 1, antipodes at distance 1)."""
    p, q = as_points(p), as_points(q)
    a, b = np.broadcast_arrays(p.coord, q.coord)
    ca, cb = np.broadcast_arrays(p.chart, q.chart)
    # mixed charts: |z - 1/w'| rewritten as |z w' - 1| / |w'| to avoid division
    num = np.where(ca == cb, np.abs(a - b), np.abs(a * b - 1))
    return num / np.sqrt((1 + np.abs(a) ** 2) * (1 + np.abs(b) ** 2))


# --------------------------------------------------------------------------- smooth steps


def _bump_psi(u):
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smooth_step(x):
    """C-infinity step on [-1, 1] with S(x) + S(-x) = 1."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    a, b = _bump_psi(1 + x), _bump_psi(1 - x)
    return a / (a + b)


def smooth_step_deriv(x):
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1
    xi = x[inside]
    a, b = _bump_psi(1 + xi), _bump_psi(1 - xi)
    da, db = a / (1 + xi) ** 2, b / (1 - xi) ** 2
    out = np.zeros_like(x)
    out[inside] = (da * b + a * db) / (a + b) ** 2
    return out


def chart_partition(r):
    """Weight of the chart in which a node has modulus ``r`` (complements the other chart)."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        x = -np.log(r) / np.log(R_PU)
    return smooth_step(x)


# --------------------------------------------------------------------------- perturbations


class Perturbation:
    """Smooth real function on the sphere, evaluated from chart coordinates.

    Subclasses implement ``__call__(chart, coord)`` for any finite coordinate
    in the given chart.  They may implement ``density_ratio`` to supply
    d(omega_h)/d(omega_FS) analytically; otherwise finite differences are used.
    """

    kind = "abstract"
    analytic_density = False

    def __call__(self, chart, coord) -> np.ndarray:
        raise NotImplementedError

    def density_ratio(self, chart, coord) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}


class ZeroPerturbation(Perturbation):
    kind = "fs"
    analytic_density = True

    def __call__(self, chart, coord):
        return np.zeros(np.broadcast(chart, coord).shape)

    def density_ratio(self, chart, coord):
        return np.ones(np.broadcast(chart, coord).shape)


class LinearBump(Perturbation):
    """``Phi(z) = amplitude * Re(z) / (1 + |z|^2)``, half the first coordinate of the unit sphere."""

    kind = "bump"

    def __init__(self, amplitude: float = 0.1):
        self.amplitude = float(amplitude)

    def __call__(self, chart, coord):
        coord = np.asarray(coord, dtype=complex)
        return self.amplitude * coord.real / (1 + np.abs(coord) ** 2) + 0.0 * np.asarray(chart)

    def describe(self):
        return {"kind": self.kind, "amplitude": self.amplitude}


class _RadialProfile:
    """Psi(t) with Psi' = -(1 - sigma(t)) (1 + tanh t), Psi = -log(1 + e^{2t}) for t <= t1.

    sigma is a smooth step rising from 0 at t1 to 1 at t2, so Psi is constant for t >= t2.
    """

    def __init__(self, t1: float, t2: float, panels: int = 64, order: int = 24):
        self.t1, self.t2 = float(t1), float(t2)
        self.edges = np.linspace(t1, t2, panels + 1)
        self.gx, self.gw = leggauss(order)
        h = np.diff(self.edges)
        mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        s = mid[:, None] + 0.5 * h[:, None] * self.gx[None, :]
        vals = (self._integrand(s) * self.gw).sum(axis=1) * 0.5 * h
        self.cum = np.concatenate([[0.0], np.cumsum(vals)])
        self.F1 = np.logaddexp(0.0, 2 * t1)
        self.tail = -self.F1 - self.cum[-1]

    def sigma(self, t):
        return smooth_step(2 * (t - self.t1) / (self.t2 - self.t1) - 1)

    def dsigma(self, t):
        return smooth_step_deriv(2 * (t - self.t1) / (self.t2 - self.t1) - 1) * 2 / (self.t2 - self.t1)

    def _integrand(self, s):
        return (1 - self.sigma(s)) * (1 + np.tanh(s))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        lo = t <= self.t1
        hi = t >= self.t2
        mid = ~(lo | hi)
        out[lo] = -np.logaddexp(0.0, 2 * t[lo])
        out[hi] = self.tail
        if np.any(mid):
            tm = t[mid]
            k = np.clip(np.searchsorted(self.edges, tm, side="right") - 1, 0, len(self.edges) - 2)
            a = self.edges[k]
            half = 0.5 * (tm - a)
            s = (a + half)[:, None] + half[:, None] * self.gx[None, :]
            part = (self._integrand(s) * self.gw).sum(axis=1) * half
            out[mid] = -self.F1 - self.cum[k] - part
        return out


class FlatOnCircle(Perturbation):
    """Weight that is flat (phi_0 = 0) on |z| <= 1 + s and Fubini-Study up to a constant far out.

    The chart-0 potential is ``phi_0 = g(log|z|)`` with ``g' = sigma(t) (1 + tanh t)``,
    where sigma is a smooth step between ``log(1 + s)`` and ``log(outer_radius)``.
    """

    kind = "kh_flat"
    analytic_density = True

    def __init__(self, smoothing_radius: float = 0.25, outer_radius: float | None = None):
        s = float(smoothing_radius)
        if s <= 0:
            raise ValueError("smoothing_radius must be positive")
        rout = 3 * (1 + s) if outer_radius is None else float(outer_radius)
        if rout <= 1 + s:
            raise ValueError("outer_radius must exceed 1 + smoothing_radius")
        self.smoothing_radius = s
        self.outer_radius = rout
        self.profile = _RadialProfile(np.log1p(s), np.log(rout))

    def _t(self, chart, coord):
        chart, coord = np.broadcast_arrays(np.asarray(chart), np.asarray(coord, dtype=complex))
        a = np.abs(coord)
        with np.errstate(divide="ignore"):
            la = np.log(a)
        return np.where(chart == 0, la, -la)

    def __call__(self, chart, coord):
        return self.profile(self._t(chart, coord))

    def density_ratio(self, chart, coord):
        t = self._t(chart, coord)
        p = self.profile
        out = p.sigma(t)
        band = (t > p.t1) & (t < p.t2)
        tb = t[band]
        out[band] = out[band] + p.dsigma(tb) * np.exp(tb) * np.cosh(tb)
        return out

    def describe(self):
        return {"kind": self.kind, "smoothing_radius": self.smoothing_radius,
                "outer_radius": self.outer_radius}


class GridPerturbation(Perturbation):
    """Bicubic spherical spline through samples on a colatitude/longitude grid.

    Colatitude is measured from the point z = 0 (so the unit circle is the equator);
    ``theta`` must lie strictly inside (0, pi) and ``lon`` inside [0, 2 pi).
    """

    kind = "grid"

    def __init__(self, theta, lon, values, smoothing: float = 0.0):
        self.theta = np.asarray(theta, dtype=float)
        self.lon = np.asarray(lon, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self._spline = RectSphereBivariateSpline(self.theta, self.lon, self.values, s=smoothing)

    def __call__(self, chart, coord):
        X = PointSet(chart, coord).xyz()
        th = np.arccos(np.clip(-X[..., 2], -1, 1))
        lon = np.mod(np.arctan2(X[..., 1], X[..., 0]), 2 * np.pi)
        shape = th.shape
        return self._spline.ev(th.ravel(), lon.ravel()).reshape(shape)

    def describe(self):
        return {"kind": self.kind, "theta": self.theta.tolist(), "lon": self.lon.tolist(),
                "values": self.values.tolist()}


# --------------------------------------------------------------------------- metric


class Metric:
    """Hermitian metric on O(1) given as a perturbation of Fubini-Study.

    Parameters
    ----------
    perturbation : Perturbation or callable, optional
        ``Phi(chart, coord)``; ``None`` gives the Fubini-Study metric.
    name : str, optional
        Label used in reports.
    fd_step : float
        Step of the finite-difference Laplacian.
    smooth_tol : float
        Allowed disagreement between Laplacians at steps h and 2h, relative to
        the FS density scale.
    """

    def __init__(self, perturbation: Perturbation | Callable | None = None, name: str | None = None,
                 fd_step: float = FD_STEP, smooth_tol: float = 1e-4):
        if perturbation is None:
            perturbation = ZeroPerturbation()
        self.perturbation = perturbation
        self.name = name or getattr(perturbation, "kind", "custom")
        self.fd_step = fd_step
        self.smooth_tol = smooth_tol
        self._quad_cache: dict = {}
        self._gc_cache: dict = {}

    @property
    def is_fs(self) -> bool:
        return isinstance(self.perturbation, ZeroPerturbation)

    def describe(self) -> dict:
        d = self.perturbation.describe() if hasattr(self.perturbation, "describe") else {"kind": "custom"}
        return dict(d, name=self.name)

    # potentials -----------------------------------------------------------
    def Phi(self, p) -> np.ndarray:
        p = as_points(p)
        return np.asarray(self.perturbation(p.chart, p.coord), dtype=float)

    def phi(self, p, chart: int = 0) -> np.ndarray:
        p = as_points(p)
        u = p.in_chart(chart)
        if not np.all(np.isfinite(u)):
            raise DomainError(f"point at the pole of chart {chart}")
        return np.log1p(np.abs(u) ** 2) + self.Phi(p)

    # curvature ------------------------------------------------------------
    def _laplacian_fd(self, chart, coord, h):
        f = self.perturbation
        c0 = f(chart, coord)
        acc = -60.0 * c0
        for d in (1, 1j):
            acc = acc + 16 * (f(chart, coord + h * d) + f(chart, coord - h * d))
            acc = acc - (f(chart, coord + 2 * h * d) + f(chart, coord - 2 * h * d))
        return acc / (12 * h * h)

    def density_ratio(self, p, check: bool = True) -> np.ndarray:
        """d(omega_h)/d(omega_FS) at ``p``."""
        p = as_points(p)
        if getattr(self.perturbation, "analytic_density", False):
            return np.asarray(self.perturbation.density_ratio(p.chart, p.coord), dtype=float)
        h = self.fd_step
        lap = self._laplacian_fd(p.chart, p.coord, h)
        if check:
            lap2 = self._laplacian_fd(p.chart, p.coord, 2 * h)
            # compare on the FS density scale, where 4 is the Laplacian of log(1+|u|^2) at 0
            bad = np.abs(lap - lap2) > self.smooth_tol * 4.0
            if np.any(bad):
                raise SmoothnessError(
                    f"finite-difference Laplacian unstable at {int(bad.sum())} points "
                    f"(max discrepancy {np.abs(lap - lap2).max():.2e})")
        return 1.0 + 0.25 * (1 + np.abs(p.coord) ** 2) ** 2 * lap

    def curvature_density(self, p, check: bool = True) -> np.ndarray:
        """Density of omega_h against Lebesgue area in the canonical chart."""
        p = as_points(p)
        fs = 1.0 / (np.pi * (1 + np.abs(p.coord) ** 2) ** 2)
        return fs * self.density_ratio(p, check=check)

    # cached derived objects -------------------------------------------------
    def quadrature(self, resolution: int = 128) -> "SphereQuadrature":
        if resolution not in self._quad_cache:
            self._quad_cache[resolution] = sphere_quadrature(self, resolution)
        return self._quad_cache[resolution]

    def green_constant(self, resolution: int = 128) -> "GreenConstant":
        if resolution not in self._gc_cache:
            self._gc_cache[resolution] = compute_green_constant(self, self.quadrature(resolution))
        return self._gc_cache[resolution]

    def __repr__(self):
        return f"Metric({self.name!r})"


def fubini_study() -> Metric:
    return Metric(None, name="fs")


def metric_from_descriptor(desc: dict) -> Metric:
    """Build a metric from a JSON-style descriptor."""
    kind = desc.get("kind", "fs")
    name = desc.get("name")
    if kind == "fs":
        return Metric(None, name=name or "fs")
    if kind == "bump":
        return Metric(LinearBump(desc.get("amplitude", 0.1)), name=name or "bump")
    if kind in ("kh_flat", "kh"):
        return Metric(FlatOnCircle(desc.get("smoothing_radius", 0.25), desc.get("outer_radius")),
                      name=name or "kh_flat")
    if kind == "grid":
        try:
            pert = GridPerturbation(desc["theta"], desc["lon"], desc["values"], desc.get("smoothing", 0.0))
        except KeyError as exc:
            raise ValueError(f"grid metric descriptor missing {exc}") from None
        return Metric(pert, name=name or "grid")
    raise ValueError(f"unknown metric kind {kind!r}")


def phi(metric: Metric, p, chart: int = 0):
    """Chart potential of ``metric`` at ``p``."""
    v = metric.phi(p, chart)
    return float(v[0]) if isinstance(p, SpherePoint) else v


def curvature_density(metric: Metric, p, check: bool = True):
    v = metric.curvature_density(p, check=check)
    return float(v[0]) if isinstance(p, SpherePoint) else v


# --------------------------------------------------------------------------- quadrature


def _chart_nodes(n_r: int, n_psi: int, grading: int = 1, r_max: float = R_PU, offset: float = 0.5):
    """Radial Gauss-Legendre x uniform angle nodes on |u| <= r_max with FS probability weights."""
    x, wx = leggauss(n_r)
    s = 0.5 * (x + 1)
    ws = 0.5 * wx
    r = r_max * s ** grading
    dr = r_max * grading * s ** (grading - 1) * ws
    psi = 2 * np.pi * (np.arange(n_psi) + offset) / n_psi
    u = r[:, None] * np.exp(1j * psi)[None, :]
    w = (r * dr / (np.pi * (1 + r * r) ** 2) * chart_partition(r))[:, None] * np.full(n_psi, 2 * np.pi / n_psi)
    return u.ravel(), w.ravel()


def fs_nodes(n_r: int, n_psi: int | None = None, grading: tuple = (1, 1)):
    """Two-chart FS quadrature: returns (PointSet, weights, chart-local coordinates, chart index)."""
    n_psi = n_r if n_psi is None else n_psi
    us, ws, cs = [], [], []
    for c in (0, 1):
        u, w = _chart_nodes(n_r, n_psi, grading[c], offset=0.5 if c == 0 else 0.25)
        keep = w > 0
        us.append(u[keep])
        ws.append(w[keep])
        cs.append(np.full(keep.sum(), c, dtype=np.int8))
    u = np.concatenate(us)
    c = np.concatenate(cs)
    return PointSet(c, u), np.concatenate(ws), u, c


@dataclass(frozen=True)
class SphereQuadrature:
    """Probability quadrature for omega_h.

    Two-chart tensor scheme: ``2 * resolution`` radial Gauss-Legendre nodes on
    ``|u| <= 1.5`` times ``resolution`` equispaced angles in each chart, glued by
    a smooth partition of unity.  Integrates trigonometric modes of order below
    ``resolution`` exactly in angle and converges spectrally in the radius for
    smooth integrands.  Nodes where omega_h vanishes are dropped.

    Attributes
    ----------
    nodes : PointSet
    weights : ndarray
        Positive, normalised to sum 1.
    raw_mass : float
        Quadrature value of the total curvature before normalisation.
    """

    nodes: PointSet
    weights: np.ndarray
    raw_mass: float
    resolution: int
    metric_name: str = ""

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def __len__(self):
        return len(self.weights)


def sphere_quadrature(metric: Metric, resolution: int = 128) -> SphereQuadrature:
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    pts, w, _, _ = fs_nodes(RADIAL_FACTOR * resolution, resolution)
    f = metric.density_ratio(pts)
    f = np.where(np.abs(f) < 1e-12, 0.0, f)
    if np.any(f < 0):
        raise DomainError("metric curvature is negative somewhere; omega_h is not a positive measure")
    w = w * f
    keep = w > 0
    raw = float(w.sum())
    return SphereQuadrature(pts[keep], w[keep] / raw, raw, resolution, metric.name)


def _centered_nodes(p: SpherePoint, resolution: int):
    """FS quadrature graded around ``p``: returns (PointSet, FS weights, 2 log[p, node])."""
    _, w, u, c = fs_nodes(RADIAL_FACTOR * resolution, resolution, grading=(3, 1))
    p = p.canonical()
    zeta = p.coord
    # Moebius rotation taking 0 to zeta; its numerator/denominator pair is split to avoid overflow
    num = np.where(c == 0, u + zeta, 1 + zeta * u)
    den = np.where(c == 0, 1 - np.conj(zeta) * u, u - np.conj(zeta))
    big = np.abs(num) > np.abs(den)
    with np.errstate(divide="ignore", invalid="ignore"):
        coord = np.where(big, den / num, num / den)
    chart = np.where(big, 1 - p.chart, p.chart)
    pts = PointSet(chart, coord)
    au2 = np.abs(u) ** 2
    with np.errstate(divide="ignore"):
        logc = np.where(c == 0, np.log(au2) - np.log1p(au2), -np.log1p(au2))
    return pts, w, logc


@dataclass(frozen=True)
class GreenConstant:
    """Normalisation constant of the Green function and its global upper bound.

    Attributes
    ----------
    E : float
        Constant making the omega_h-average of G(z, .) vanish.
    C_G : float
        Upper bound for G over the whole sphere.
    residual : float
        Largest deviation of the per-probe constants from ``E``.
    """

    E: float
    C_G: float
    residual: float
    resolution: int
    probe_values: tuple = field(default=(), repr=False)


DEFAULT_PROBES = (0.0, np.inf, 1.0, 1j, -0.6 + 0.3j, 2.0 - 1.5j, 0.3 + 0.9j, -1.7j)


def compute_green_constant(metric: Metric, quad: SphereQuadrature, probes=DEFAULT_PROBES,
                           tol: float = 1e-5) -> GreenConstant:
    """Fix E so that the omega_h-average of G(p, .) vanishes at each probe ``p``.

    The log-singular average is done with a probe-centred graded quadrature
    of resolution ``max(256, quad.resolution)``.  Raises ResolutionError when the
    per-probe constants spread by more than ``tol``.
    """
    mean_Phi = quad.integrate(metric.Phi(quad.nodes))
    probes = as_points(np.asarray(probes, dtype=complex))
    vals = []
    for p in probes:
        pts, w, logc = _centered_nodes(p, max(CENTERED_MIN, quad.resolution))
        f = metric.density_ratio(pts)
        wf = w * f
        vals.append(-np.dot(wf, logc) / wf.sum() + float(metric.Phi(p)[0]) + mean_Phi)
    vals = np.array(vals)
    E = float(vals.mean())
    resid = float(np.abs(vals - E).max())
    if resid > tol:
        raise ResolutionError(f"probe normalisations disagree by {resid:.2e}; increase resolution")
    Phi_min = float(np.min(metric.Phi(quad.nodes)))
    C_G = E - 2 * Phi_min + 1e-9
    return GreenConstant(E, C_G, resid, quad.resolution, tuple(vals))


def green_average(metric: Metric, gc: GreenConstant, z, resolution: int | None = None) -> float:
    """Integral of G(z, .) against omega_h using a quadrature graded at ``z``."""
    p = as_points(z).point(0)
    pts, w, logc = _centered_nodes(p, resolution or max(CENTERED_MIN, gc.resolution))
    wf = w * metric.density_ratio(pts)
    wf = wf / wf.sum()
    return float(np.dot(wf, logc - metric.Phi(pts)) - metric.Phi(p)[0] + gc.E)


# --------------------------------------------------------------------------- Green function


def green(metric: Metric, gc: GreenConstant, z, w, strict: bool = False):
    """G_h(z, w) = 2 log[z, w] - Phi(z) - Phi(w) + E, chart independent.

    Returns ``-inf`` on collisions (chordal distance below 1e-13) unless
    ``strict`` is set, in which case DiagonalError is raised.
    """
    scalar = isinstance(z, SpherePoint) and isinstance(w, SpherePoint)
    z, w = as_points(z), as_points(w)
    d = chordal(z, w)
    hit = d < COLLISION_TOL
    if strict and np.any(hit):
        raise DiagonalError("green evaluated on the diagonal")
    with np.errstate(divide="ignore"):
        g = 2 * np.log(d) - metric.Phi(z) - metric.Phi(w) + gc.E
    g = np.where(hit, -np.inf, g)
    return float(g[0]) if scalar else g


def green_truncated(metric: Metric, gc: GreenConstant, z, w, M: float):
    """max(G_h, -M); finite on the diagonal."""
    if M <= 0:
        raise ValueError("M must be positive")
    g = green(metric, gc, z, w)
    return max(g, -M) if np.isscalar(g) else np.maximum(g, -M)
