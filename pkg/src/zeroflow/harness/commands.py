"""Experiment drivers behind the CLI; each returns ``(report, tables, stage timings)``."""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import cells as _cells
from ..density import evaluate_density, log_zhat_sequence
from ..ensemble import (Ensemble, PRESETS, bernstein_markov_ratio, gaussian_coefficients, preset,
                        reference_from_descriptor, rng_for, sample)
from ..equilibrium import EquilibriumOptions, constrained_rate_inf, solve_equilibrium
from ..errors import DiagonalError, DomainError
from ..geometry import PointSet, metric_from_descriptor
from ..measures import AtomicMeasure, GridMeasure, energy_form_distance, rate, rate_local
from .config import ExperimentConfig
from .io import versions

RADIAL_BINS = np.linspace(-1.0, 1.0, 21)
ANGULAR_BINS = np.linspace(-np.pi, np.pi, 17)


# --------------------------------------------------------------------------- context


class Context:
    """Objects shared by all trials of a run: metric, reference measures, Green constant, K, equilibrium."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        ens = cfg["ensemble"]
        self.preset = ens.get("preset")
        if self.preset:
            self.metric = metric_from_descriptor(PRESETS[self.preset][0])
            self._ref_desc = PRESETS[self.preset][1]
        else:
            self.metric = metric_from_descriptor(ens.get("metric", {"kind": "fs"}))
            self._ref_desc = ens.get("reference_measure", "fs_area")
        self.gc = self.metric.green_constant(cfg.tol["green_resolution"])
        self._nu = {}
        self._K = None
        self._eq = None

    def nu(self, N: int | None = None):
        if N not in self._nu:
            self._nu[N] = reference_from_descriptor(self._ref_desc, N)
        return self._nu[N]

    @property
    def K(self):
        if self._K is None:
            self._K = _cells.from_descriptor(self.cfg["K"]) if "K" in self.cfg.data else self.nu(None).K
        return self._K

    @property
    def equilibrium(self):
        if self._eq is None:
            opts = EquilibriumOptions(gap_tol=self.cfg.tol["gap_tol"])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._eq = solve_equilibrium(self.metric, self.gc, self.K, opts)
        return self._eq

    def ensemble(self, N: int) -> Ensemble:
        return Ensemble.build(self.metric, self.nu(N), N)


_WORKER: dict = {}


def _init_worker(payload):
    _WORKER.update(payload)


def _call(args):
    fn = _WORKER["fn"]
    return fn(_WORKER, *args)


def parallel_map(fn, items, threads: int, shared: dict):
    """Ordered map; results do not depend on the number of workers."""
    items = list(items)
    payload = dict(shared, fn=fn)
    if threads <= 1 or len(items) < 2:
        return [fn(payload, *it) for it in items]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(payload,)) as ex:
        return list(ex.map(_call, items, chunksize=max(1, len(items) // (4 * threads))))


def _base_report(cfg: ExperimentConfig, records, summary) -> dict:
    return {"experiment": cfg.experiment, "config": cfg.echo(), "seed": cfg.seed, "version": versions(),
            "records": records, "summary": summary}


# --------------------------------------------------------------------------- sample


def _sample_trial(sh, N, trial):
    ens, gc, eq, seed, hw = sh["ens"][N], sh["gc"], sh["eq"], sh["seed"], sh["hw"]
    _, zc = sample(ens, seed, trial)
    z = zc.roots
    fin = np.isfinite(z)
    mu = AtomicMeasure(zc.points)
    try:
        d2 = energy_form_distance(ens.metric, gc, mu, eq)
    except DiagonalError:
        d2 = float("nan")
    X = zc.points.xyz()
    rec = {"N": N, "trial": trial, "residual": zc.residual, "vieta_residual": zc.vieta_residual,
           "n_infinite": zc.n_infinite, "method": zc.method, "dist2": d2, "neg_dist2": -d2,
           "frac_annulus": float(np.mean(fin & (np.abs(np.abs(np.where(fin, z, 0)) - 1) < hw))),
           "radial_hist": np.histogram(X[:, 2], RADIAL_BINS)[0],
           "angular_hist": np.histogram(np.arctan2(X[:, 1], X[:, 0]), ANGULAR_BINS)[0]}
    roots = [{"N": N, "trial": trial, "chart": int(c), "re": float(u.real), "im": float(u.imag)}
             for c, u in zip(zc.points.chart, zc.points.coord)]
    return rec, roots


def cmd_sample(cfg: ExperimentConfig, threads: int = 1):
    ctx = Context(cfg)
    stages = {}
    t = time.perf_counter()
    eq = ctx.equilibrium.measure if cfg["trials"] > 0 else None
    stages["equilibrium"] = time.perf_counter() - t
    t = time.perf_counter()
    ens = {N: ctx.ensemble(N) for N in cfg.N_list} if cfg["trials"] > 0 else {}
    stages["ensembles"] = time.perf_counter() - t
    t = time.perf_counter()
    items = [(N, k) for N in cfg.N_list for k in range(cfg["trials"])]
    shared = {"ens": ens, "gc": ctx.gc, "eq": eq, "seed": cfg.seed, "hw": cfg.tol["annulus_halfwidth"]}
    out = parallel_map(_sample_trial, items, threads, shared)
    stages["trials"] = time.perf_counter() - t
    records = [r for r, _ in out]
    roots = [x for _, rs in out for x in rs]
    per_N = {}
    for N in cfg.N_list:
        rs = [r for r in records if r["N"] == N]
        if not rs:
            continue
        d = np.array([abs(r["dist2"]) for r in rs])
        per_N[str(N)] = {"trials": len(rs), "median_abs_dist2": float(np.nanmedian(d)),
                         "mean_frac_annulus": float(np.mean([r["frac_annulus"] for r in rs])),
                         "max_residual": float(max(r["residual"] for r in rs)),
                         "radial_hist": np.sum([r["radial_hist"] for r in rs], axis=0),
                         "angular_hist": np.sum([r["angular_hist"] for r in rs], axis=0)}
    meds = [per_N[str(N)]["median_abs_dist2"] for N in cfg.N_list if str(N) in per_N]
    summary = {"per_N": per_N, "median_dist2_decreasing": bool(all(b < a for a, b in zip(meds, meds[1:]))),
               "radial_bins": RADIAL_BINS, "angular_bins": ANGULAR_BINS}
    trials_tab = [{k: r[k] for k in ("N", "trial", "residual", "n_infinite", "dist2", "frac_annulus")}
                  for r in records]
    return _base_report(cfg, records, summary), {"trials": trials_tab, "roots": roots}, stages


# --------------------------------------------------------------------------- equilibrium and rates


def _density_error(ctx, eq) -> float | None:
    K = ctx.K
    if not np.all(K.kind == _cells.PATCH) or abs(K.fs_mass.sum() - 1) > 1e-6:
        return None
    f = ctx.metric.density_ratio(K.nodes, check=False) * K.fs_mass
    target = f / f.sum()
    return float(np.max(np.abs(eq.measure.weights / target - 1)))


def cmd_equilibrium(cfg: ExperimentConfig, threads: int = 1):
    ctx = Context(cfg)
    t = time.perf_counter()
    eq = ctx.equilibrium
    stages = {"solve": time.perf_counter() - t}
    summary = dict(eq.summary(), K=ctx.K.describe(), E=ctx.gc.E, C_G=ctx.gc.C_G,
                   green_constant_residual=ctx.gc.residual, density_sup_rel_error=_density_error(ctx, eq))
    w = eq.measure
    rows = [{"chart": int(c), "re": float(u.real), "im": float(u.imag), "weight": float(x)}
            for c, u, x in zip(w.nodes.chart, w.nodes.coord, w.weights)]
    return _base_report(cfg, [], summary), {"weights": rows}, stages


def _measure_from_spec(ctx, spec):
    if spec == "equilibrium":
        return "equilibrium", ctx.equilibrium.measure
    if spec == "uniform":
        return "uniform", GridMeasure.uniform(ctx.K)
    kind = spec.get("kind")
    if kind == "nodes":
        pts = PointSet([int(x[0]) for x in spec["nodes"]], [complex(x[1], x[2]) for x in spec["nodes"]])
        w = spec.get("weights")
        if w is None:
            return spec.get("name", "atoms"), AtomicMeasure(pts)
        return spec.get("name", "nodes"), GridMeasure.from_nodes(pts, w, normalize=True)
    if kind == "zeros":
        N = int(spec["N"])
        _, zc = sample(ctx.ensemble(N), ctx.cfg.seed, int(spec.get("trial", 0)))
        return spec.get("name", f"zeros_N{N}"), AtomicMeasure(zc.points)
    raise DomainError(f"unknown measure specification {spec!r}")


def cmd_rate(cfg: ExperimentConfig, threads: int = 1):
    ctx = Context(cfg)
    t = time.perf_counter()
    E0 = ctx.equilibrium.E0
    rows = []
    for spec in cfg["measures"]:
        name, mu = _measure_from_spec(ctx, spec)
        rv = rate(ctx.metric, ctx.gc, mu, ctx.K, E0)
        row = dict(rv.as_dict(), measure=name)
        if isinstance(mu, GridMeasure) and not ctx.K.touches_infinity() and not mu.cells.touches_infinity():
            row["rate_local"] = rate_local(ctx.metric, mu, ctx.K)
        rows.append(row)
    stages = {"rates": time.perf_counter() - t}
    summary = {"E0": E0, "half_log_cap": 0.5 * ctx.equilibrium.energy, "fill_distance": ctx.K.fill_distance}
    return _base_report(cfg, rows, summary), {"rates": rows}, stages


# --------------------------------------------------------------------------- density check


def cmd_density_check(cfg: ExperimentConfig, threads: int = 1):
    ctx = Context(cfg)
    t = time.perf_counter()
    scale = cfg["density"]["scale"]
    records, skipped = [], []
    constants = {}
    cid = 0
    for N in cfg.N_list:
        ens = ctx.ensemble(N)
        for k in range(cfg["trials"]):
            z = scale * gaussian_coefficients(rng_for(cfg.seed, 1_000_000 * N + k), N)
            if k < cfg["density"]["duplicates"] and N >= 2:
                z[1] = z[0]
            try:
                d = evaluate_density(ens, ctx.gc, z)
            except DiagonalError as exc:
                skipped.append({"config_id": cid, "N": N, "reason": str(exc)})
                cid += 1
                continue
            constants[str(N)] = d.constant
            records.append({"config_id": cid, "N": N, "log_affine": d.log_affine, "log_green": d.log_green,
                            "diff": d.log_affine - d.log_green, "rel_diff": d.rel_diff, "constant": d.constant,
                            "logZ": d.logZ, "logZhat": d.logZhat, "roots": [[c.real, c.imag] for c in z]})
            cid += 1
    stages = {"evaluate": time.perf_counter() - t}
    mx = max((r["rel_diff"] for r in records), default=0.0)
    summary = {"configs": len(records), "skipped": skipped, "max_rel_diff": mx,
               "pass": bool(mx < cfg.tol["density_rel_tol"]), "constant_block": constants, "E": ctx.gc.E}
    rows = [{k: r[k] for k in ("config_id", "N", "log_affine", "log_green", "diff")} for r in records]
    return _base_report(cfg, records, summary), {"density": rows}, stages


# --------------------------------------------------------------------------- hole


def _hole_event_counts(ctx, N, r, trials, seed):
    ens = ctx.ensemble(N)
    hits = 0
    for k in range(trials):
        _, zc = sample(ens, seed, 10_000_000 + 1000 * N + k)
        hits += int(np.all(np.abs(zc.roots) <= r))
    return hits


def cmd_hole(cfg: ExperimentConfig, threads: int = 1):
    ctx = Context(cfg)
    h = cfg["hole"]
    t = time.perf_counter()
    eq = ctx.equilibrium
    stages = {"equilibrium": time.perf_counter() - t}
    t = time.perf_counter()
    rows, mc_rows = [], []
    for r in h["r"]:
        allowed_desc = h.get("allowed")
        if allowed_desc == "everything":
            allowed = _cells.CellSet.concat([ctx.K, _cells.sphere_grid(32)])
        elif allowed_desc is not None:
            allowed = _cells.from_descriptor(allowed_desc)
        else:
            allowed = _cells.disk(r, h["n_cells"], h["n_boundary"])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            val, mu, info = constrained_rate_inf(ctx.metric, ctx.gc, ctx.K, allowed, eq.E0, tol=cfg.tol["qp_tol"])
        rad = np.abs(mu.nodes.affine())
        row = {"r": r, "inf_I_tilde": val, "rate_bound": -val,
               "analytic": float(np.log(r)) if (ctx.preset == "kh" and r < 1 and allowed_desc is None) else "",
               "annulus_mass": float(mu.weights[np.abs(rad - r) <= 0.02].sum()), "qp_status": info["status"],
               "warnings": [str(w.message) for w in caught]}
        rows.append(row)
        for N in h["mc_N"]:
            hits = _hole_event_counts(ctx, N, r, h["mc_trials"], cfg.seed)
            freq = hits / h["mc_trials"] if h["mc_trials"] else float("nan")
            mc_rows.append({"N": N, "trials": h["mc_trials"], "hits": hits, "r": r,
                            "log_freq_over_N2": float(np.log(freq) / N ** 2) if freq > 0 else "-inf"})
    stages["rates"] = time.perf_counter() - t
    summary = {"E0": eq.E0, "K": ctx.K.describe(),
               "rel_error_vs_analytic": {str(x["r"]): abs(x["rate_bound"] / x["analytic"] - 1)
                                         for x in rows if x["analytic"] != ""}}
    tables = {"hole": [{k: v for k, v in x.items() if k != "warnings"} for x in rows]}
    if mc_rows:
        tables["hole_mc"] = mc_rows
    return _base_report(cfg, rows + mc_rows, summary), tables, stages


# --------------------------------------------------------------------------- normalising constants


def cmd_normconst(cfg: ExperimentConfig, threads: int = 1):
    ctx = Context(cfg)
    t = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        seq = log_zhat_sequence(ctx.metric, ctx.nu, cfg.N_list, ctx.gc)
    stages = {"sequence": time.perf_counter() - t}
    t = time.perf_counter()
    half_log_cap = 0.5 * ctx.equilibrium.energy
    stages["equilibrium"] = time.perf_counter() - t
    ref = -half_log_cap
    rows = [{"N": N, "logZhat_normalized": v, "reference": ref, "gap": v - ref} for N, v in seq]
    gaps = {r["N"]: abs(r["gap"]) for r in rows}
    pairs = [(N, 2 * N) for N in gaps if 2 * N in gaps]
    summary = {"half_log_cap": half_log_cap, "reference": ref, "E": ctx.gc.E,
               "truncated": len(seq) < len(cfg.N_list), "warnings": [str(w.message) for w in caught],
               "final_gap": rows[-1]["gap"] if rows else None,
               "final_rel_gap": abs(rows[-1]["gap"]) / max(abs(ref), 1e-300) if rows else None,
               "monotone_gap": bool(all(gaps[b] < gaps[a] for a, b in pairs)), "gap_pairs": pairs}
    return _base_report(cfg, rows, summary), {"normconst": rows}, stages


# --------------------------------------------------------------------------- Bernstein-Markov


def cmd_bm(cfg: ExperimentConfig, threads: int = 1):
    ctx = Context(cfg)
    t = time.perf_counter()
    rows = []
    for N in cfg.N_list:
        res = bernstein_markov_ratio(ctx.metric, ctx.nu(N), N, cfg["trials"], cfg.seed)
        rows.append(dict(res.as_dict(), bound_over_N=0.5 * np.log(N + 1) / N))
    stages = {"ratios": time.perf_counter() - t}
    vals = [r["log_ratio_over_N"] for r in rows]
    summary = {"decreasing": bool(all(b < a for a, b in zip(vals, vals[1:]))),
               "below_bound": bool(all(r["log_ratio_over_N"] <= r["bound_over_N"] + 1e-12 for r in rows))}
    return _base_report(cfg, rows, summary), {"bm": rows}, stages


COMMANDS = {
    "sample": cmd_sample,
    "equilibrium": cmd_equilibrium,
    "rate": cmd_rate,
    "density-check": cmd_density_check,
    "hole": cmd_hole,
    "normconst": cmd_normconst,
    "bm-diagnostic": cmd_bm,
}


def run(cfg: ExperimentConfig, threads: int = 1):
    return COMMANDS[cfg.experiment](cfg, threads)
