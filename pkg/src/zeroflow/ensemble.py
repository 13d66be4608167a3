"""Gaussian polynomial ensembles on the sphere: Gram matrices, orthonormal bases, sampling and roots."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cells as _cells
from .cells import CellSet
from .errors import ConditioningWarning, DomainError, PrecisionWarning
from .geometry import Metric, PointSet, as_points, fubini_study, metric_from_descriptor, sphere_quadrature

COND_LIMIT = 1e14
DROP_TOL = 1e-13
ROOT_TOL = 1e-8
MP_DPS = 40


# --------------------------------------------------------------------------- reference measures


@dataclass
class ReferenceMeasure:
    """Discrete probability measure used to define the L2 inner product on sections.

    Attributes
    ----------
    nodes : PointSet
    weights : ndarray
        Positive, summing to one.
    K : CellSet
        Discretisation of the support, used for sup norms and equilibrium problems.
    exact_degree : int or None
        Largest N for which the monomial Gram matrix is free of angular aliasing.
    """

    nodes: PointSet
    weights: np.ndarray
    K: CellSet
    name: str = "custom"
    exact_degree: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = as_points(self.nodes)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.nodes),) or np.any(w <= 0):
            raise ValueError("reference weights must be positive, one per node")
        if abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"reference weights sum to {w.sum():.15g}")
        self.weights = w

    def __len__(self):
        return len(self.weights)

    def describe(self) -> dict:
        return dict(self.params, name=self.name, nodes=len(self), K=self.K.describe())


def uniform_circle(n: int = 1024, radius: float = 1.0, n_K: int = 2048) -> ReferenceMeasure:
    """Equal weights at ``n`` equispaced points of ``|z| = radius``; exact for degrees below ``n``."""
    z = radius * np.exp(2j * np.pi * np.arange(n) / n)
    return ReferenceMeasure(PointSet.from_affine(z), np.full(n, 1.0 / n), _cells.circle(radius, n_K),
                            "uniform_circle", n - 1, {"n": n, "radius": radius, "n_K": n_K})


def fs_area(resolution: int = 128, K_resolution: int = 64) -> ReferenceMeasure:
    """Fubini-Study area quadrature; angularly exact for degrees below ``resolution``."""
    q = sphere_quadrature(fubini_study(), resolution)
    return ReferenceMeasure(q.nodes, q.weights, _cells.sphere_grid(K_resolution), "fs_area", resolution - 1,
                            {"resolution": resolution, "K_resolution": K_resolution})


def reference_from_descriptor(desc, N: int | None = None) -> ReferenceMeasure:
    """Build a reference measure from a name or a JSON-style dict."""
    if isinstance(desc, str):
        desc = {"kind": desc}
    kind = desc.get("kind", "uniform_circle")
    if kind == "uniform_circle":
        n = desc.get("n", max(1024, 2 * (N or 0) + 2))
        return uniform_circle(n, desc.get("radius", 1.0), desc.get("n_K", 2048))
    if kind == "fs_area":
        res = desc.get("resolution", max(128, -(-((N or 0) + 2) // 8) * 8))
        return fs_area(res, desc.get("K_resolution", 64))
    if kind == "nodes":
        pts = PointSet(np.asarray(desc.get("chart", 0)), np.asarray(desc["re"]) + 1j * np.asarray(desc["im"]))
        w = np.asarray(desc.get("weights", np.full(len(pts), 1.0 / len(pts))), dtype=float)
        K = _cells.from_descriptor(desc["K"]) if "K" in desc else _cells.from_nodes(pts)
        return ReferenceMeasure(pts, w / w.sum(), K, "nodes")
    raise ValueError(f"unknown reference measure kind {kind!r}")


PRESETS = {
    "kh": ({"kind": "kh_flat"}, {"kind": "uniform_circle"}),
    "fs": ({"kind": "fs"}, {"kind": "fs_area"}),
}


def preset(name: str, N: int | None = None):
    """``(metric, reference measure)`` for a built-in ensemble name."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    m, r = PRESETS[name]
    return metric_from_descriptor(m), reference_from_descriptor(r, N)


# --------------------------------------------------------------------------- Gram and basis


def weighted_monomials(metric: Metric, p, N: int, allow_infinity: bool = False) -> np.ndarray:
    """``V[j, i] = z_i^j exp(-N phi(z_i) / 2)``, evaluated without overflow in both charts.

    For a chart-1 point ``w = 1/z`` the value is ``(conj(w)/|w|)^j |w|^(N-j)`` times
    ``(1+|w|^2)^(-N/2) exp(-N Phi / 2)``, which stays bounded for all ``j <= N``.
    """
    p = as_points(p)
    if not allow_infinity and np.any(p.at_infinity):
        raise DomainError("reference node at infinity")
    u = p.coord
    a = np.abs(u)
    c1 = p.chart == 1
    loga = np.log(np.where(a > 0, a, 1.0))
    logscale = -0.5 * N * (np.log1p(a * a) + metric.Phi(p))
    phase = np.where(a > 0, np.where(c1, np.conj(u), u) / np.where(a > 0, a, 1.0), 1.0)
    j = np.arange(N + 1)[:, None]
    mag = np.where(c1, N - j, j) * loga + logscale
    # u = 0 keeps only z^0 at the origin and z^N at infinity
    mag = np.where((a == 0) & np.where(c1, j < N, j > 0), -np.inf, mag)
    V = np.exp(mag) * np.cumprod(np.vstack([np.ones_like(phase), np.broadcast_to(phase, (N, len(u)))]), axis=0)
    return V


def gram(metric: Metric, nu: ReferenceMeasure, N: int) -> np.ndarray:
    """``G[j, k] = sum_i w_i z_i^j conj(z_i)^k exp(-N phi(z_i))``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if nu.exact_degree is not None and N > nu.exact_degree:
        warnings.warn(f"reference quadrature is exact only up to degree {nu.exact_degree}; N = {N}",
                      PrecisionWarning, stacklevel=2)
    G = np.zeros((N + 1, N + 1), dtype=complex)
    step = max(1, 4_000_000 // (N + 1))
    for s in range(0, len(nu), step):
        V = weighted_monomials(metric, nu.nodes[s:s + step], N)
        G += (V * nu.weights[s:s + step]) @ V.conj().T
    return 0.5 * (G + G.conj().T)


@dataclass
class Orthonormalization:
    transform: np.ndarray
    logdetA: float
    k_N: float
    min_eig: float
    cond: float
    rank: int
    extended: bool = False


def _mp_cholesky(H: np.ndarray, d: np.ndarray):
    """Inverse Cholesky factor of the Jacobi-scaled ``H`` and ``log det H``, both from extended precision.

    Scaling happens inside mpmath: rounding the scaled entries in double would
    move the determinant by about ``cond * eps``.
    """
    import mpmath as mp
    with mp.workdps(MP_DPS):
        n = H.shape[0]
        s = [1 / mp.sqrt(mp.mpf(float(x))) for x in d]
        A = mp.matrix(n, n)
        for j in range(n):
            for k in range(n):
                A[j, k] = mp.mpc(complex(H[j, k])) * s[j] * s[k]
        L = mp.cholesky(A)
        Linv = mp.inverse(L)
        logdet = 2 * mp.fsum(mp.log(mp.re(L[j, j])) for j in range(n)) - 2 * mp.fsum(mp.log(x) for x in s)
        return np.array([[complex(Linv[j, k]) for k in range(n)] for j in range(n)]), float(logdet)


def orthonormalize(G: np.ndarray) -> Orthonormalization:
    """Upper-triangular ``T`` with ``T^H G^T T = I``, so ``psi_m = sum_j T[j, m] z^j`` has degree ``m``.

    ``G^T`` is the matrix of the quadratic form ``|sum_j a_j z^j|^2`` in the
    coefficients ``a``.  ``logdetA = log|det(<z^j, psi_k>)| = log det(G) / 2``.
    """
    G = np.asarray(G, dtype=complex)
    n = G.shape[0]
    H = G.T
    d = np.real(np.diag(H))
    if np.any(d <= 0):
        raise DomainError("Gram matrix has a non-positive diagonal entry")
    s = 1.0 / np.sqrt(d)
    Hs = H * s[:, None] * s[None, :]
    ev = np.linalg.eigvalsh(Hs)
    min_eig = float(np.linalg.eigvalsh(H)[0])
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else np.inf
    if ev[0] <= 0 or not np.isfinite(cond):
        # rank report; the basis is then only defined on the numerical range
        U, sv, _ = np.linalg.svd(Hs)
        rank = int(np.sum(sv > sv[0] * n * np.finfo(float).eps))
        raise DomainError(f"Gram matrix is not positive definite (numerical rank {rank} of {n})")
    extended = cond > COND_LIMIT
    if extended:
        warnings.warn(f"Gram condition number {cond:.2e}; using extended precision", PrecisionWarning, stacklevel=2)
        Linv, logdetG = _mp_cholesky(H, d)
    else:
        Ls = np.linalg.cholesky(Hs)
        Linv = np.linalg.solve(Ls, np.eye(n))
        logdetG = 2 * np.sum(np.log(np.real(np.diag(Ls)))) - 2 * np.sum(np.log(s))
    # H = (D^-1 Ls)(D^-1 Ls)^H with D = diag(s); T = (D^-1 Ls)^-H = D Ls^-H
    T = s[:, None] * Linv.conj().T
    return Orthonormalization(T, 0.5 * float(logdetG), float(np.real(T[-1, -1])), min_eig, cond, n, extended)


@dataclass
class Ensemble:
    """Gaussian ensemble of degree-``N`` sections for a metric and reference measure."""

    metric: Metric
    nu: ReferenceMeasure
    N: int
    gram: np.ndarray
    transform: np.ndarray
    logdetA: float
    k_N: float
    min_eig: float
    cond: float
    extended: bool = False

    @classmethod
    def build(cls, metric: Metric, nu: ReferenceMeasure, N: int) -> "Ensemble":
        G = gram(metric, nu, N)
        o = orthonormalize(G)
        return cls(metric, nu, N, G, o.transform, o.logdetA, o.k_N, o.min_eig, o.cond, o.extended)

    def describe(self) -> dict:
        return {"N": self.N, "metric": self.metric.describe(), "reference": self.nu.describe(),
                "logdetA": self.logdetA, "k_N": self.k_N, "min_eig": self.min_eig, "cond": self.cond,
                "extended_precision": self.extended}

    def monomial(self, c) -> np.ndarray:
        """Monomial coefficients (ascending) of ``sum_m c_m psi_m``."""
        return self.transform @ np.asarray(c, dtype=complex)

    def section_norm(self, a, p) -> np.ndarray:
        """Pointwise ``|s(z)| exp(-N phi(z) / 2)`` for monomial coefficients ``a``."""
        V = weighted_monomials(self.metric, p, self.N, allow_infinity=True)
        return np.abs(np.asarray(a) @ V)

    @property
    def monomial_scale(self) -> np.ndarray:
        """``||z^k||`` in the ensemble's L2 norm."""
        return np.sqrt(np.real(np.diag(self.gram)))

    def l2_norm(self, a) -> float:
        vals = self.section_norm(a, self.nu.nodes)
        return float(np.sqrt(np.sum(self.nu.weights * vals ** 2)))


def build_ensemble(metric: Metric, nu: ReferenceMeasure, N: int) -> Ensemble:
    return Ensemble.build(metric, nu, N)


def ensemble_from_descriptor(desc: dict, N: int | None = None) -> Ensemble:
    """``{"preset": name}`` or ``{"metric": {...}, "reference_measure": {...}}`` plus ``N``."""
    N = int(desc.get("N", N) if N is None else N)
    if "preset" in desc:
        metric, nu = preset(desc["preset"], N)
    else:
        metric = metric_from_descriptor(desc.get("metric", {"kind": "fs"}))
        nu = reference_from_descriptor(desc.get("reference_measure", "fs_area"), N)
    return Ensemble.build(metric, nu, N)


# --------------------------------------------------------------------------- sampling and roots


def rng_for(seed: int, trial: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, trial)``; independent of scheduling."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, trial], dtype=np.uint64)))


def gaussian_coefficients(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standard circular complex Gaussians: real and imaginary parts of variance 1/2."""
    x = rng.standard_normal((2, n))
    return (x[0] + 1j * x[1]) / np.sqrt(2)


@dataclass
class ZeroConfig:
    """Zero set of a section, with multiplicity; roots at infinity are chart-1 points ``w = 0``.

    Attributes
    ----------
    points : PointSet
    residual : float
        Largest normalised residual ``|p(r)| / sum_k |a_k| |r|^k`` over finite roots.
    vieta_residual : float
        Relative mismatch between the monic coefficients and the product of root factors.
    """

    points: PointSet
    residual: float
    vieta_residual: float = float("nan")
    n_infinite: int = 0
    method: str = "aberth"
    perturbed: bool = False

    @property
    def N(self) -> int:
        return len(self.points)

    @property
    def roots(self) -> np.ndarray:
        """Affine roots; ``inf`` for roots at infinity."""
        return self.points.affine()

    def measure(self):
        from .measures import AtomicMeasure
        return AtomicMeasure(self.points)

    def to_json(self) -> dict:
        return {"points": self.points.to_json(), "residual": self.residual, "vieta_residual": self.vieta_residual,
                "n_infinite": self.n_infinite, "method": self.method, "perturbed": self.perturbed}


def _eval_ratio(a: np.ndarray, z: np.ndarray):
    """Newton ratio ``p/p'`` and normalised residual, using the reversed polynomial for ``|z| > 1``."""
    d = len(a) - 1
    out = np.empty(z.shape, dtype=complex)
    res = np.empty(z.shape)
    inner = np.abs(z) <= 1
    if np.any(inner):
        x = z[inner]
        p = np.full(x.shape, a[-1], dtype=complex)
        dp = np.zeros(x.shape, dtype=complex)
        sc = np.full(x.shape, abs(a[-1]))
        ax = np.abs(x)
        for c in a[-2::-1]:
            dp = dp * x + p
            p = p * x + c
            sc = sc * ax + abs(c)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[inner] = p / dp
        res[inner] = np.abs(p) / sc
    if np.any(~inner):
        y = 1.0 / z[~inner]
        b = a[::-1]
        q = np.full(y.shape, b[-1], dtype=complex)
        dq = np.zeros(y.shape, dtype=complex)
        sc = np.full(y.shape, abs(b[-1]))
        ay = np.abs(y)
        for c in b[-2::-1]:
            dq = dq * y + q
            q = q * y + c
            sc = sc * ay + abs(c)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[~inner] = z[~inner] * q / (d * q - y * dq)
        res[~inner] = np.abs(q) / sc
    return out, res


def _initial_guesses(a: np.ndarray) -> np.ndarray:
    """Circles with radii from the upper convex hull of ``(k, log|a_k|)``."""
    d = len(a) - 1
    with np.errstate(divide="ignore"):
        la = np.log(np.abs(a))
    hull = [0]
    for k in range(1, d + 1):
        if not np.isfinite(la[k]):
            continue
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            if (la[j] - la[i]) * (k - i) <= (la[k] - la[i]) * (j - i):
                hull.pop()
            else:
                break
        hull.append(k)
    z = []
    sigma = 0.7
    for i, j in zip(hull[:-1], hull[1:]):
        m = j - i
        r = np.exp((la[i] - la[j]) / m)
        ang = 2 * np.pi * np.arange(m) / m + 2 * np.pi * i / d + sigma
        z.append(r * np.exp(1j * ang))
    return np.concatenate(z)


def _aberth(a: np.ndarray, z: np.ndarray, max_iter: int = 500):
    d = len(z)
    done = np.zeros(d, dtype=bool)
    eye = np.eye(d, dtype=bool)
    for it in range(max_iter):
        ratio, _ = _eval_ratio(a, z)
        diff = z[:, None] - z[None, :]
        diff[eye] = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.sum(np.where(eye, 0.0, 1.0 / diff), axis=1)
            step = ratio / (1 - ratio * s)
        step = np.where(np.isfinite(step), step, 0.0)
        step[done] = 0.0
        z = z - step
        done |= np.abs(step) <= 4 * np.finfo(float).eps * np.abs(z)
        if np.all(done):
            return z, True, it + 1
    return z, False, max_iter


def _companion_roots(a: np.ndarray) -> np.ndarray:
    d = len(a) - 1
    nz = np.nonzero(np.abs(a))[0]
    rho = np.exp((np.log(abs(a[nz[0]])) - np.log(abs(a[-1]))) / max(d - nz[0], 1)) if d > nz[0] else 1.0
    b = a * rho ** np.arange(d + 1)
    return np.roots(b[::-1]) * rho


def leja_order(r: np.ndarray) -> np.ndarray:
    """Leja ordering; keeps partial products of root factors well scaled."""
    r = np.asarray(r, dtype=complex)
    if len(r) < 3:
        return r
    out = np.empty_like(r)
    rem = np.ones(len(r), dtype=bool)
    k = int(np.argmax(np.abs(r)))
    prod = np.ones(len(r))
    for i in range(len(r)):
        out[i] = r[k]
        rem[k] = False
        if not rem.any():
            break
        prod = prod * np.abs(r - r[k])
        prod /= max(prod[rem].max(), 1e-300)
        k = int(np.argmax(np.where(rem, prod, -1.0)))
    return out


def _vieta_residual(a: np.ndarray, r: np.ndarray) -> float:
    if len(r) == 0:
        return 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        rec = np.poly(leja_order(r))[::-1]
        ref = a / a[-1]
        err = np.linalg.norm(rec - ref) / np.linalg.norm(ref)
    return float(err) if np.isfinite(err) else float("nan")


def roots(coeffs, tol: float = ROOT_TOL, drop_tol: float = DROP_TOL, rng: np.random.Generator | None = None,
          scale=None) -> ZeroConfig:
    """Roots of ``sum_k a_k z^k`` (ascending coefficients, degree ``len - 1`` as a section).

    ``scale[k]`` is the size of ``z^k`` in the ensemble's norm (default 1); a
    leading coefficient with ``|a_k| scale[k] < drop_tol * ||a scale||`` counts
    as a root at infinity.
    """
    a = np.asarray(coeffs, dtype=complex).ravel()
    N = len(a) - 1
    sc = np.ones(N + 1) if scale is None else np.asarray(scale, dtype=float)
    aw = np.abs(a) * sc
    norm = np.linalg.norm(aw)
    if norm == 0 or not np.isfinite(norm):
        raise DomainError("zero or non-finite polynomial")
    deg = N
    while aw[deg] < drop_tol * norm:
        deg -= 1
    n_inf = N - deg
    low = 0
    while a[low] == 0:
        low += 1
    core = a[low:deg + 1]
    finite = np.zeros(low, dtype=complex)
    method, perturbed, resid = "aberth", False, 0.0
    if len(core) > 1:
        r, ok, _ = _aberth(core, _initial_guesses(core))
        _, res = _eval_ratio(core, r)
        resid = float(res.max())
        if not ok or resid > tol:
            rc = _companion_roots(core)
            rc, _, _ = _aberth(core, rc, max_iter=50)
            _, resc = _eval_ratio(core, rc)
            if resc.max() < resid:
                r, resid, method = rc, float(resc.max()), "companion"
        if resid > tol:
            rng = rng or np.random.default_rng(0)
            pert = core * (1 + 1e-14 * (rng.standard_normal(len(core)) + 1j * rng.standard_normal(len(core))))
            rp, _, _ = _aberth(pert, _companion_roots(pert))
            _, resp = _eval_ratio(core, rp)
            if resp.max() < resid:
                r, resid, method = rp, float(resp.max()), "perturbed"
            perturbed = True
            warnings.warn(f"root finder residual {resid:.2e} above {tol:.0e}", ConditioningWarning, stacklevel=2)
        finite = np.concatenate([finite, r])
    pts = PointSet.concat([PointSet.from_affine(finite) if len(finite) else PointSet(0, np.zeros(0)),
                           PointSet(np.ones(n_inf, dtype=np.int8), np.zeros(n_inf))])
    return ZeroConfig(pts, resid, _vieta_residual(a[:deg + 1], finite), n_inf, method, perturbed)


def sample(ens: Ensemble, rng_seed: int, trial: int = 0):
    """Draw a Gaussian section; returns ``(monomial coefficients, ZeroConfig)``."""
    rng = rng_for(rng_seed, trial)
    c = gaussian_coefficients(rng, ens.N + 1)
    a = ens.monomial(c)
    return a, roots(a, rng=rng, scale=ens.monomial_scale)


# --------------------------------------------------------------------------- Bernstein-Markov


@dataclass
class BMResult:
    N: int
    ratio: float
    log_ratio_over_N: float
    trials: int

    def as_dict(self):
        return dict(self.__dict__)


def _K_points(K: CellSet) -> PointSet:
    return PointSet.concat([K.nodes, K.fine_pts])


def bernstein_markov_ratio(metric: Metric, nu: ReferenceMeasure, N: int, trials: int = 20, seed: int = 0,
                           ens: Ensemble | None = None) -> BMResult:
    """Largest ``sup_K |s|_{h^N} / ||s||_{L2}`` over random Gaussian sections."""
    ens = ens or Ensemble.build(metric, nu, N)
    V = weighted_monomials(metric, _K_points(nu.K), N, allow_infinity=True)
    best = 0.0
    for t in range(trials):
        c = gaussian_coefficients(rng_for(seed, t), N + 1)
        # orthonormal coefficients give the L2 norm directly
        sup = np.abs(ens.monomial(c) @ V).max()
        best = max(best, float(sup / np.linalg.norm(c)))
    return BMResult(N, best, float(np.log(best) / N) if best > 0 else float("nan"), trials)
