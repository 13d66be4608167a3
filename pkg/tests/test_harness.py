import csv
import json

import jsonschema
import pytest

from zeroflow.errors import ConfigError
from zeroflow.harness import build_config, load_config
from zeroflow.harness.cli import main
from zeroflow.harness.io import load_schema, table_columns

SMALL_K = {"kind": "circle", "n": 256}


def run_cli(tmp_path, experiment, cfg, *extra, name="out"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([experiment, "--config", str(path), "--out", str(out), *extra])
    return code, out


def read_report(out):
    return json.loads((out / "report.json").read_text())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------- configuration


def test_defaults_are_materialised():
    cfg = build_config("sample")
    assert cfg.N_list == [25, 50, 100]
    assert cfg["trials"] == 100
    assert cfg["N"] == 100
    assert cfg.tol["gap_tol"] == 1e-8
    assert cfg["ensemble"] == {"preset": "kh"}
    assert "output" not in cfg.echo()


def test_single_N_becomes_list():
    cfg = build_config("bm-diagnostic", {"N": 12})
    assert cfg.N_list == [12]


@pytest.mark.parametrize("raw,field", [
    ({"N": "x"}, "N"),
    ({"bogus": 1}, "<root>"),
    ({"tolerances": {"gap_tol": -1}}, "tolerances/gap_tol"),
    ({"ensemble": {"preset": "kh", "metric": {"kind": "fs"}}}, "ensemble"),
])
def test_config_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError) as exc:
        build_config("sample", raw)
    assert exc.value.field == field


def test_experiment_specific_checks():
    with pytest.raises(ConfigError):
        build_config("normconst", {"N_list": [20, 10]})
    with pytest.raises(ConfigError):
        build_config("density-check", {"N_list": [9]})
    with pytest.raises(ConfigError):
        build_config("sample", {"experiment": "hole"})
    with pytest.raises(ConfigError):
        build_config("nonsense")


def test_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"trials": 0,\n "N": 3,,}')
    with pytest.raises(ConfigError, match=":2:"):
        load_config(p, "sample")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json", "sample")


def test_cli_config_error_exit_code(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "sample", {"N": "x"})
    assert code == 2
    assert "N" in capsys.readouterr().err


def test_cli_domain_error_exit_code(tmp_path):
    code, _ = run_cli(tmp_path, "rate", {"K": SMALL_K, "measures": [{"kind": "weird"}]})
    assert code == 1


def test_schemas_load():
    for name in ("config", "report", "timing", "tables"):
        assert isinstance(load_schema(name), dict)
    assert "dist2" in table_columns()["trials"]


# ----------------------------------------------------------------- commands


def test_sample_outputs(tmp_path):
    cfg = {"ensemble": {"preset": "kh"}, "K": SMALL_K, "N_list": [6, 10], "trials": 3, "seed": 4}
    code, out = run_cli(tmp_path, "sample", cfg)
    assert code == 0
    rep = read_report(out)
    jsonschema.validate(rep, load_schema("report"))
    assert rep["seed"] == 4 and rep["config"]["trials"] == 3
    trials = read_csv(out / "trials.csv")
    assert len(trials) == 6 and all(r["seed"] == "4" for r in trials)
    roots = read_csv(out / "roots.csv")
    assert len(roots) == 3 * (6 + 10)
    assert set(table_columns()["trials"]) <= set(trials[0])
    timing = json.loads((out / "timing.json").read_text())
    assert timing["seed"] == 4 and timing["threads"] == 1


def test_sample_zero_trials(tmp_path):
    code, out = run_cli(tmp_path, "sample", {"trials": 0, "N_list": [5]})
    assert code == 0
    assert read_report(out)["records"] == []


def test_sample_deterministic_across_threads(tmp_path):
    cfg = {"K": SMALL_K, "N_list": [8], "trials": 6, "seed": 2}
    c1, o1 = run_cli(tmp_path, "sample", cfg, "--threads", "1", name="a")
    c2, o2 = run_cli(tmp_path, "sample", cfg, "--threads", "2", name="b")
    assert c1 == c2 == 0
    assert (o1 / "report.json").read_bytes() == (o2 / "report.json").read_bytes()
    assert (o1 / "roots.csv").read_bytes() == (o2 / "roots.csv").read_bytes()


def test_seed_flag_overrides(tmp_path):
    cfg = {"K": SMALL_K, "N_list": [5], "trials": 1, "seed": 2}
    run_cli(tmp_path, "sample", cfg, name="a")
    run_cli(tmp_path, "sample", cfg, "--seed", "3", name="b")
    assert read_report(tmp_path / "b")["seed"] == 3
    assert (tmp_path / "a" / "roots.csv").read_text() != (tmp_path / "b" / "roots.csv").read_text()


def test_threads_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ZEROFLOW_THREADS", "2")
    code, out = run_cli(tmp_path, "bm-diagnostic", {"N_list": [4], "trials": 2})
    assert code == 0
    assert json.loads((out / "timing.json").read_text())["threads"] == 2
    monkeypatch.setenv("ZEROFLOW_THREADS", "zero")
    code, _ = run_cli(tmp_path, "bm-diagnostic", {"N_list": [4], "trials": 2}, name="c")
    assert code == 2


def test_equilibrium_command(tmp_path):
    code, out = run_cli(tmp_path, "equilibrium", {"ensemble": {"preset": "fs"},
                                                  "K": {"kind": "sphere_grid", "resolution": 16}})
    assert code == 0
    s = read_report(out)["summary"]
    assert s["capacity"] == pytest.approx(1.0, abs=1e-3)
    assert s["density_sup_rel_error"] < 0.05
    assert len(read_csv(out / "weights.csv")) == s["cells"]


def test_rate_command(tmp_path):
    code, out = run_cli(tmp_path, "rate", {"K": SMALL_K, "measures": ["equilibrium", "uniform"]})
    assert code == 0
    rows = read_report(out)["records"]
    assert [r["measure"] for r in rows] == ["equilibrium", "uniform"]
    assert all(abs(r["I_tilde"]) < 1e-9 for r in rows)


def test_density_check_command(tmp_path):
    cfg = {"ensemble": {"preset": "fs"}, "N_list": [2, 3], "trials": 3, "density": {"duplicates": 1}}
    code, out = run_cli(tmp_path, "density-check", cfg)
    assert code == 0
    s = read_report(out)["summary"]
    assert s["configs"] == 4 and len(s["skipped"]) == 2
    assert s["pass"] and s["max_rel_diff"] < 1e-10


def test_hole_command_everything_allowed(tmp_path):
    cfg = {"K": SMALL_K, "hole": {"r": [0.5], "allowed": "everything"}}
    code, out = run_cli(tmp_path, "hole", cfg)
    assert code == 0
    row = read_report(out)["records"][0]
    assert abs(row["inf_I_tilde"]) < 1e-6
    assert row["analytic"] == ""


def test_hole_command_disk(tmp_path):
    cfg = {"K": SMALL_K, "hole": {"r": [0.5], "n_cells": 256, "n_boundary": 128, "mc_N": [1], "mc_trials": 50}}
    code, out = run_cli(tmp_path, "hole", cfg)
    assert code == 0
    rep = read_report(out)
    assert rep["summary"]["rel_error_vs_analytic"]["0.5"] < 1e-5
    mc = read_csv(out / "hole_mc.csv")
    assert mc[0]["trials"] == "50"


def test_normconst_command(tmp_path):
    code, out = run_cli(tmp_path, "normconst", {"K": SMALL_K, "N_list": [5, 10]})
    assert code == 0
    rep = read_report(out)
    assert [r["N"] for r in rep["records"]] == [5, 10]
    assert rep["summary"]["gap_pairs"] == [[5, 10]]


def test_bm_command_with_dat(tmp_path):
    code, out = run_cli(tmp_path, "bm-diagnostic", {"N_list": [4, 8], "trials": 3, "dat": True})
    assert code == 0
    s = read_report(out)["summary"]
    assert s["below_bound"]
    assert (out / "bm.dat").exists()
