"""Weighted equilibrium measures, capacities and constrained rate minimisation on cell sets."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .cells import CellSet
from .errors import ConditioningWarning, DomainError, IterationError
from .geometry import GreenConstant, Metric
from .measures import GridMeasure, green_matrix, potential

SUPPORT_TOL = 1e-6


@dataclass
class EquilibriumOptions:
    gap_tol: float = 1e-8
    max_iters: int = 20000
    init: str = "auto"            # "auto" | "uniform" | "vertex" | int (start vertex)
    refactor_every: int = 64
    certify: bool = True
    support_tol: float = SUPPORT_TOL


@dataclass
class EquilibriumResult:
    """Discrete equilibrium measure of a cell set and its diagnostics."""

    measure: GridMeasure
    energy: float
    capacity: float
    E0: float
    F: float
    kkt_residual: float
    gap: float
    iterations: int
    history: list = field(repr=False, default_factory=list)
    max_mass_zero_eig: float = float("nan")

    def summary(self) -> dict:
        w = self.measure.weights
        return {"energy": self.energy, "capacity": self.capacity, "E0": self.E0, "F": self.F,
                "kkt_residual": self.kkt_residual, "gap": self.gap, "iterations": self.iterations,
                "support_size": int((w > SUPPORT_TOL).sum()), "cells": len(w),
                "max_mass_zero_eig": self.max_mass_zero_eig}


class _BorderedInverse:
    """Inverse of [[0, 1^T], [1, G_SS]] maintained under insertions and deletions."""

    def __init__(self, G, S):
        self.G = G
        self.S = list(S)
        self.updates = 0
        self.refactor()

    def refactor(self):
        S = np.asarray(self.S)
        B = np.empty((len(S) + 1, len(S) + 1))
        B[0, 0] = 0.0
        B[0, 1:] = 1.0
        B[1:, 0] = 1.0
        B[1:, 1:] = self.G[np.ix_(S, S)]
        self.P = np.linalg.inv(B)
        self.updates = 0

    def solve(self):
        """Affine maximiser on span(S): returns (weights on S, multiplier)."""
        z = self.P[:, 0]
        return z[1:].copy(), -z[0]

    def add(self, j):
        S = np.asarray(self.S)
        v = np.concatenate([[1.0], self.G[S, j]])
        Pv = self.P @ v
        s = self.G[j, j] - v @ Pv
        if abs(s) < 1e-300:
            raise np.linalg.LinAlgError("singular insertion")
        n = len(v)
        P = np.empty((n + 1, n + 1))
        P[:n, :n] = self.P + np.outer(Pv, Pv) / s
        P[:n, n] = -Pv / s
        P[n, :n] = -Pv / s
        P[n, n] = 1.0 / s
        self.P = P
        self.S.append(j)
        self.updates += 1

    def remove(self, pos):
        k = pos + 1
        col = self.P[:, k]
        P = self.P - np.outer(col, self.P[k, :]) / self.P[k, k]
        P = np.delete(np.delete(P, k, axis=0), k, axis=1)
        self.P = P
        del self.S[pos]
        self.updates += 1


def _max_mass_zero_eig(G: np.ndarray) -> float:
    """Largest eigenvalue of G restricted to mass-zero vectors."""
    n = G.shape[0]
    if n < 3:
        return float("nan")

    def mv(x):
        x = x - x.mean()
        y = G @ x
        return y - y.mean()

    op = LinearOperator((n, n), matvec=mv, dtype=float)
    try:
        val = eigsh(op, k=1, which="LA", tol=1e-8, maxiter=5000, return_eigenvectors=False)[0]
    except Exception:
        return float("nan")
    return float(val)


def maximize_quadratic(G: np.ndarray, opts: EquilibriumOptions | None = None, w0=None):
    """Maximise ``w^T G w`` over the probability simplex for conditionally negative definite ``G``.

    Fully corrective Frank-Wolfe: the iterate is always the maximiser over
    the face spanned by its support, found with a bordered inverse that is
    updated as vertices enter (toward-steps) or leave (away/drop steps with a
    ratio test).  Returns ``(w, lam, gap, iterations, history)`` with ``G w = lam``
    on the support.
    """
    opts = opts or EquilibriumOptions()
    n = G.shape[0]
    history = []

    def finish_ratio(w_cur, S, target):
        # move from w_cur toward target; drop the first coordinate hitting zero
        cur = w_cur[S]
        neg = target < cur
        t = 1.0
        blocking = None
        if np.any(target < 0):
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg & (target < 0), cur / (cur - target), np.inf)
            blocking = int(np.argmin(ratios))
            t = float(ratios[blocking])
        return t, blocking

    if w0 is not None:
        w = np.asarray(w0, dtype=float).copy()
    else:
        init = opts.init
        if init == "auto" or init == "uniform":
            S = np.arange(n)
            B = np.empty((n + 1, n + 1))
            B[0, 0] = 0.0
            B[0, 1:] = 1.0
            B[1:, 0] = 1.0
            B[1:, 1:] = G
            rhs = np.zeros(n + 1)
            rhs[0] = 1.0
            z = np.linalg.solve(B, rhs)
            target = z[1:]
            if np.all(target >= 0):
                w = target
                lam = -z[0]
                Gw = G @ w
                history.append(float(w @ Gw))
                gap = 2 * max(0.0, float(Gw.max() - w @ Gw))
                return w, lam, gap, 1, history
            if init == "auto" and np.mean(target < 0) > 0.25:
                init = "vertex"
            else:
                w = np.full(n, 1.0 / n)
        if init == "vertex" or isinstance(init, (int, np.integer)):
            j0 = int(np.argmax(np.diag(G))) if init == "vertex" else int(init)
            w = np.zeros(n)
            w[j0] = 1.0
    S = list(np.nonzero(w > 0)[0])
    inv = _BorderedInverse(G, S)
    Gw = G @ w
    history.append(float(w @ Gw))
    it = 0
    gap = np.inf
    lam = float(w @ Gw)
    while it < opts.max_iters:
        it += 1
        target, lam_t = inv.solve()
        Sarr = np.asarray(inv.S)
        t, blocking = finish_ratio(w, Sarr, target)
        new = np.zeros(n)
        new[Sarr] = w[Sarr] + t * (target - w[Sarr])
        new[new < 0] = 0.0
        new /= new.sum()
        w = new
        Gw = G @ w
        history.append(float(w @ Gw))
        if blocking is not None:
            w[Sarr[blocking]] = 0.0
            w /= w.sum()
            inv.remove(blocking)
            if inv.updates >= opts.refactor_every:
                inv.refactor()
            continue
        lam = lam_t
        obj = float(w @ Gw)
        j = int(np.argmax(Gw))
        gap = 2 * max(0.0, float(Gw[j] - obj))
        if gap < opts.gap_tol:
            return w, lam, gap, it, history
        if j in inv.S:
            # support already optimal up to round-off; refresh the factorisation once
            inv.refactor()
            target, _ = inv.solve()
            if np.allclose(target, w[np.asarray(inv.S)], atol=1e-14):
                return w, lam, gap, it, history
            continue
        inv.add(j)
        if inv.updates >= opts.refactor_every:
            inv.refactor()
    raise IterationError(f"equilibrium solver did not converge in {opts.max_iters} iterations", gap=gap)


def solve_equilibrium(metric: Metric, gc: GreenConstant, K: CellSet,
                      opts: EquilibriumOptions | None = None) -> EquilibriumResult:
    """Equilibrium measure of ``K``: the maximiser of the Green energy over probability weights on K."""
    opts = opts or EquilibriumOptions()
    if len(K) < 2:
        raise DomainError("K needs at least two cells")
    G = green_matrix(metric, gc, K)
    eig = float("nan")
    if opts.certify:
        eig = _max_mass_zero_eig(K.interaction())
        if eig > 1e-9 * max(1.0, np.abs(np.diag(G)).max()):
            warnings.warn(f"Green matrix not negative on mass-zero vectors (eigenvalue {eig:.2e})",
                          ConditioningWarning, stacklevel=2)
    w, lam, gap, it, hist = maximize_quadratic(G, opts)
    w[w < 0] = 0.0
    w /= w.sum()
    Gw = G @ w
    energy = float(w @ Gw)
    F = -energy
    sup = w > opts.support_tol
    kkt = float(np.max(np.abs(Gw[sup] + F))) if np.any(sup) else float("nan")
    return EquilibriumResult(GridMeasure(K, w), energy, float(np.exp(energy)), 0.5 * energy, F, kkt,
                             gap, it, hist, eig)


def extremal_function(metric: Metric, gc: GreenConstant, eq: EquilibriumResult, z):
    """``V*(z) = U^nu(z) + F``."""
    return potential(metric, gc, eq.measure, z) + eq.F


def constrained_rate_inf(metric: Metric, gc: GreenConstant, K: CellSet, allowed: CellSet, E0: float,
                         tol: float = 1e-9):
    """Minimise ``I - E0`` over probability weights on ``allowed``.

    Epigraph form solved as a convex QP with cvxopt::

        min  -w^T G_AA w / 2 + t   s.t.  G_KA w <= t,  w >= 0,  sum(w) = 1.

    ``-G_AA`` is only positive on mass-zero vectors, so ``c 1 1^T`` is added
    with ``c`` above the affine maximum of the energy; on the simplex this
    shifts the objective by the constant ``c / 2``.

    Returns ``(inf I_tilde, minimising GridMeasure, info)``.
    """
    from cvxopt import matrix, solvers

    if len(allowed) == 0:
        raise DomainError("empty allowed region")
    GAA = green_matrix(metric, gc, allowed)
    GKA = green_matrix(metric, gc, K, allowed)
    nA, nK = GAA.shape[0], GKA.shape[0]
    if nA == 1:
        w = np.ones(1)
        I = -0.5 * GAA[0, 0] + GKA[:, 0].max()
        return I - E0, GridMeasure(allowed, w), {"status": "trivial", "I": float(I)}
    # affine maximum of w^T G w on sum(w) = 1
    B = np.block([[np.zeros((1, 1)), np.ones((1, nA))], [np.ones((nA, 1)), GAA]])
    rhs = np.zeros(nA + 1)
    rhs[0] = 1.0
    c = -np.linalg.solve(B, rhs)[0]
    c = c + 1e-6 * max(1.0, abs(c))
    # scale rows so the QP sees O(1) numbers
    Q = -GAA + c
    P = np.zeros((nA + 1, nA + 1))
    P[:nA, :nA] = 0.5 * (Q + Q.T)
    q = np.zeros(nA + 1)
    q[-1] = 1.0
    Gin = np.zeros((nK + nA, nA + 1))
    Gin[:nK, :nA] = GKA
    Gin[:nK, -1] = -1.0
    Gin[nK:, :nA] = -np.eye(nA)
    h = np.zeros(nK + nA)
    Aeq = np.zeros((1, nA + 1))
    Aeq[0, :nA] = 1.0
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": 200}
    sol = solvers.qp(matrix(P), matrix(q), matrix(Gin), matrix(h), matrix(Aeq), matrix(1.0), options=opts)
    x = np.array(sol["x"]).ravel()
    w = np.clip(x[:nA], 0.0, None)
    w /= w.sum()
    I = float(-0.5 * w @ GAA @ w + np.max(GKA @ w))
    status = sol["status"]
    if status != "optimal":
        if not np.isfinite(I):
            raise IterationError(f"QP solver status {status}")
        # cvxopt stops on stagnation; accept certificates within a decade of the tolerances
        cert = [sol.get(k) for k in ("relative gap", "primal infeasibility", "dual infeasibility")]
        if all(c is not None and c < 10 * tol for c in cert):
            status = "near_optimal"
        else:
            warnings.warn(f"QP solver status {status}", ConditioningWarning, stacklevel=2)
    info = {"status": status, "relative_gap": sol.get("relative gap"),
            "dual_infeasibility": sol.get("dual infeasibility"), "I": I, "qp_objective": float(sol["primal objective"]) - 0.5 * c,
            "iterations": int(sol["iterations"])}
    return I - E0, GridMeasure(allowed, w), info
