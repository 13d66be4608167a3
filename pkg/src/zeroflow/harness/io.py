"""Report, table and timing emission with schema validation."""
from __future__ import annotations

import csv
import json
import math
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("zeroflow.harness").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def table_columns() -> dict:
    return load_schema("tables")["default"]


def versions() -> dict:
    import scipy

    from .. import __version__
    return {"zeroflow": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def to_jsonable(x):
    """Plain JSON types; non-finite floats become strings so output stays strict JSON."""
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.complexfloating, complex)):
        return [to_jsonable(x.real), to_jsonable(x.imag)]
    return x


def validate_report(report: dict):
    import jsonschema
    jsonschema.validate(report, load_schema("report"))


def validate_table(name: str, rows: list[dict]):
    cols = table_columns().get(name)
    if cols is None:
        raise ValueError(f"no schema for table {name!r}")
    for r in rows:
        missing = [c for c in cols if c not in r]
        if missing:
            raise ValueError(f"table {name!r} row lacks columns {missing}")


def write_json(path: Path, obj):
    path.write_text(json.dumps(to_jsonable(obj), indent=1, sort_keys=True, allow_nan=False) + "\n")


def write_csv(path: Path, name: str, rows: list[dict]):
    validate_table(name, rows)
    cols = list(table_columns()[name])
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k, "")) for k in cols})


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_dat(path: Path, rows: list[dict], cols: list[str]):
    """Whitespace-separated columns with a commented header, for gnuplot."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(cols) + "\n")
        for r in rows:
            fh.write(" ".join(str(_cell(r[c])) for c in cols) + "\n")


def emit(out_dir, report: dict, tables: dict, timing: dict, dat: bool = False) -> Path:
    """Write report.json, timing.json and one CSV per table; returns the output directory.

    Every artefact carries the run seed.
    """
    out = Path(out_dir)
    seed = report["seed"]
    timing = dict(timing, seed=seed)
    tables = {k: [dict(r, seed=seed) for r in rows] for k, rows in tables.items()}
    out.mkdir(parents=True, exist_ok=True)
    report = to_jsonable(report)
    validate_report(report)
    write_json(out / "report.json", report)
    import jsonschema
    timing = to_jsonable(timing)
    jsonschema.validate(timing, load_schema("timing"))
    write_json(out / "timing.json", timing)
    for name, rows in tables.items():
        write_csv(out / f"{name}.csv", name, rows)
        if dat and rows:
            cols = [c for c in table_columns()[name] if all(not isinstance(r[c], str) for r in rows)]
            write_dat(out / f"{name}.dat", rows, cols)
    return out
