"""Experiment configuration: JSON loading, schema validation and materialised defaults."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError
from .io import load_schema

EXPERIMENTS = ("sample", "equilibrium", "rate", "density-check", "hole", "normconst", "bm-diagnostic")

TOLERANCES = {
    "gap_tol": 1e-8,
    "root_tol": 1e-8,
    "qp_tol": 1e-9,
    "green_resolution": 128,
    "annulus_halfwidth": 0.1,
    "density_rel_tol": 1e-6,
}

DEFAULTS = {
    "sample": {"N_list": [25, 50, 100], "trials": 100},
    "equilibrium": {},
    "rate": {"measures": ["equilibrium", "uniform"]},
    "density-check": {"N_list": [2, 3, 4, 5], "trials": 10, "density": {"scale": 1.0, "duplicates": 0}},
    "hole": {"hole": {"r": [0.5, 0.9], "n_cells": 1024, "n_boundary": 256, "mc_N": [], "mc_trials": 0}},
    "normconst": {"N_list": [10, 20, 40, 80, 100]},
    "bm-diagnostic": {"N_list": [10, 20, 40, 80], "trials": 20},
}


@dataclass
class ExperimentConfig:
    experiment: str
    data: dict
    threads: int | None = None

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def tol(self) -> dict:
        return self.data["tolerances"]

    @property
    def N_list(self) -> list:
        return list(self.data["N_list"])

    def echo(self) -> dict:
        # the output location does not influence results, so reruns elsewhere stay byte-identical
        return {k: copy.deepcopy(v) for k, v in self.data.items() if k != "output"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(data: dict):
    import jsonschema
    schema = load_schema("config")
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(data), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        field = "/".join(str(p) for p in e.path) or "<root>"
        raise ConfigError(e.message, field=field)


def build_config(experiment: str, raw: dict | None = None, seed: int | None = None, output: str | None = None,
                 threads: int | None = None) -> ExperimentConfig:
    """Validate ``raw`` and fill every default so the echo in reports is complete."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}", field="experiment")
    raw = dict(raw or {})
    if raw.get("experiment", experiment) != experiment:
        raise ConfigError(f"config is for {raw['experiment']!r}, command is {experiment!r}", field="experiment")
    validate(raw)
    data = {"experiment": experiment, "ensemble": {"preset": "kh"}, "seed": 0, "output": "zeroflow_out",
            "tolerances": dict(TOLERANCES), "dat": False}
    data = _merge(data, DEFAULTS[experiment])
    if "N" in raw and "N_list" not in raw:
        raw["N_list"] = [raw["N"]]
    data = _merge(data, raw)
    if "N_list" in data:
        data["N"] = data["N_list"][-1]
    if seed is not None:
        data["seed"] = int(seed)
    if output is not None:
        data["output"] = output
    # worker count never enters the echo: results must not depend on it
    cfg_threads = data.pop("threads", None)
    threads = int(threads) if threads is not None else cfg_threads
    ens = data["ensemble"]
    if "preset" in ens and ("metric" in ens or "reference_measure" in ens):
        raise ConfigError("ensemble takes either a preset or metric/reference_measure", field="ensemble")
    if experiment == "normconst" and data["N_list"] != sorted(data["N_list"]):
        raise ConfigError("N_list must be ascending", field="N_list")
    if experiment == "density-check" and max(data["N_list"]) > 8:
        raise ConfigError("density checks are limited to N <= 8", field="N_list")
    validate(data)
    return ExperimentConfig(experiment, data, threads)


def load_config(path, experiment: str, **overrides) -> ExperimentConfig:
    """Read a JSON config file; syntax errors report the line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="<file>") from None
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}", field=f"line {exc.lineno}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", field="<root>")
    return build_config(experiment, raw, **overrides)
