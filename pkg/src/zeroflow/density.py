"""Joint densities of zeros, finite-N rate functionals and normalising constants."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .ensemble import Ensemble, ReferenceMeasure, ZeroConfig
from .errors import DiagonalError, DomainError, PrecisionWarning
from .geometry import GreenConstant, Metric, PointSet, as_points
from .measures import AtomicMeasure, _pairwise_green


def _points(zeta) -> PointSet:
    if isinstance(zeta, ZeroConfig):
        return zeta.points
    return as_points(zeta)


def constant_block(logdetA: float, N: int, E: float) -> float:
    """``log|det A_N|^2 + (-N(N-1)/2 + N(N+1)) E``."""
    return 2.0 * logdetA + (-0.5 * N * (N - 1) + N * (N + 1)) * E


def _log_weighted_integral(nu: ReferenceMeasure, logf: np.ndarray) -> float:
    """``log sum_i w_i exp(logf_i)`` with a max shift."""
    return float(logsumexp(logf, b=nu.weights))


def log_jpd_affine(ens: Ensemble, metric: Metric, nu: ReferenceMeasure, zeta) -> float:
    """Affine-chart log joint density (without ``pi`` factors)::

        log|det A|^2 + sum_{i<j} log|z_i - z_j|^2 - (N+1) log int prod_j |z - z_j|^2 e^{-N phi} dnu
    """
    pts = _points(zeta)
    N = len(pts)
    if N != ens.N:
        raise ValueError(f"configuration has {N} roots, ensemble degree is {ens.N}")
    z = pts.affine()
    if not np.all(np.isfinite(z)):
        raise DomainError("root at infinity; use the Green form")
    d = np.abs(z[:, None] - z[None, :])
    iu = np.triu_indices(N, 1)
    with np.errstate(divide="ignore"):
        vdm = 2.0 * np.sum(np.log(d[iu]))
        x = nu.nodes.affine()
        logf = np.sum(np.log(np.abs(x[:, None] - z[None, :]) ** 2), axis=1) - N * metric.phi(nu.nodes, 0)
    return float(2.0 * ens.logdetA + vdm - (N + 1) * _log_weighted_integral(nu, logf))


def _log_int_exp_NU(metric, gc, nu, pts, N=None) -> float:
    """``log int exp(N U^{mu_zeta}) dnu`` for the counting measure of ``pts``."""
    M = len(pts)
    N = M if N is None else N
    g = _pairwise_green(metric, gc, nu.nodes, pts)
    return _log_weighted_integral(nu, (N / M) * np.sum(g, axis=1))


def _offdiag_green_sum(metric, gc, pts) -> float:
    G = _pairwise_green(metric, gc, pts, pts)
    np.fill_diagonal(G, 0.0)
    if not np.all(np.isfinite(G)):
        raise DiagonalError("coincident roots")
    return float(G.sum())


def log_jpd_green(metric: Metric, gc: GreenConstant, nu: ReferenceMeasure, zeta, constants: float = 0.0,
                  chart: int = 0) -> float:
    """Green-form log joint density::

        1/2 sum_{i!=j} G(z_i, z_j) - (N+1) log int e^{N U} dnu - 2 sum_j phi(z_j) + constants

    ``phi`` is the potential in ``chart``; ``constants`` is usually ``constant_block(...)``.
    """
    pts = _points(zeta)
    N = len(pts)
    pair = 0.5 * _offdiag_green_sum(metric, gc, pts)
    return float(pair - (N + 1) * _log_int_exp_NU(metric, gc, nu, pts) - 2.0 * np.sum(metric.phi(pts, chart))
                 + constants)


@dataclass
class DensityEval:
    log_affine: float
    log_green: float
    logZ: float
    logZhat: float
    constant: float

    @property
    def rel_diff(self) -> float:
        return abs(self.log_affine - self.log_green) / max(1.0, abs(self.log_affine))

    def as_dict(self):
        return dict(self.__dict__, rel_diff=self.rel_diff)


def evaluate_density(ens: Ensemble, gc: GreenConstant, zeta) -> DensityEval:
    """Both forms of the log density for one configuration, with the normalising constants."""
    N = ens.N
    const = constant_block(ens.logdetA, N, gc.E)
    la = log_jpd_affine(ens, ens.metric, ens.nu, zeta)
    lg = log_jpd_green(ens.metric, gc, ens.nu, zeta, const)
    logZ = -2.0 * ens.logdetA
    return DensityEval(la, lg, logZ, logZ - (-0.5 * N * (N - 1) + N * (N + 1)) * gc.E, const)


@dataclass
class RateN:
    N: int
    E_N: float
    J_N: float
    I_N: float

    def as_dict(self):
        return dict(self.__dict__)


def j_n(metric: Metric, gc: GreenConstant, nu: ReferenceMeasure, zeta, N: int | None = None) -> float:
    """``(1/N) log int exp(N U^{mu_zeta}) dnu``; ``N`` defaults to the number of atoms."""
    pts = _points(zeta)
    N = len(pts) if N is None else N
    return _log_int_exp_NU(metric, gc, nu, pts, N) / N


def rate_n(metric: Metric, gc: GreenConstant, nu: ReferenceMeasure, zeta) -> RateN:
    """``I_N = -E_N / 2 + (N+1)/N J_N`` with ``E_N`` the off-diagonal Green energy."""
    pts = _points(zeta)
    N = len(pts)
    E_N = _offdiag_green_sum(metric, gc, pts) / N ** 2
    J = j_n(metric, gc, nu, pts)
    return RateN(N, E_N, J, -0.5 * E_N + (N + 1) / N * J)


def atomic(zeta) -> AtomicMeasure:
    return AtomicMeasure(_points(zeta))


def log_zhat_sequence(metric: Metric, nu: ReferenceMeasure | Callable[[int], ReferenceMeasure], N_list,
                      gc: GreenConstant | None = None):
    """``[(N, log(Zhat_N) / N^2)]``; stops with a warning when an ensemble cannot be built."""
    gc = gc or metric.green_constant()
    out = []
    for N in N_list:
        ref = nu(N) if callable(nu) else nu
        try:
            ens = Ensemble.build(metric, ref, N)
        except (DomainError, np.linalg.LinAlgError) as exc:
            warnings.warn(f"normalising-constant sequence truncated at N = {N}: {exc}", PrecisionWarning,
                          stacklevel=2)
            break
        logzhat = -2.0 * ens.logdetA - (-0.5 * N * (N - 1) + N * (N + 1)) * gc.E
        out.append((int(N), float(logzhat / N ** 2)))
    return out
