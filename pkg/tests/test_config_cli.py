import csv
import json

import numpy as np
import pytest

from harmaplab.cli import build_parser, main
from harmaplab.config import DEFAULT_CONFIG, load_config, parse_config
from harmaplab.errors import ConfigError
from harmaplab.grid import read_grid_function
from harmaplab.pipeline import boundary_family, removability_experiment


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config

def test_default_config_round_trip(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(DEFAULT_CONFIG)
    assert load_config(p) == load_config()


def test_missing_key_named():
    text = DEFAULT_CONFIG.replace("amplitude = 0.05\n", "")
    with pytest.raises(ConfigError, match="amplitude"):
        parse_config(text)


def test_unknown_key_reports_line():
    text = DEFAULT_CONFIG.replace("[decay]\n", "[decay]\nsteps_typo = 3\n")
    with pytest.raises(ConfigError, match=r":\d+: unknown key 'steps_typo'"):
        parse_config(text)


def test_bad_value_named():
    with pytest.raises(ConfigError, match="max_iter"):
        parse_config(DEFAULT_CONFIG.replace("max_iter = 100", "max_iter = many"))


@pytest.mark.parametrize("old,new", [("alpha = 0.5", "alpha = 1.5"),
                                     ("m = 2", "m = 4"),
                                     ("eps = 0.2, 0.1, 0.05\n", "eps = 0.2, 1.5\n"),
                                     ("workers = 1", "workers = 0")])
def test_validation(old, new):
    with pytest.raises(ConfigError):
        parse_config(DEFAULT_CONFIG.replace(old, new, 1))


def test_overrides():
    cfg = load_config().with_overrides(seed=7, cap_m=None)
    assert cfg.seed == 7 and cfg.cap_m == 2
    with pytest.raises(ConfigError):
        load_config().with_overrides(cap_m=5)


def test_boundary_families():
    x = np.random.default_rng(0).normal(size=(50, 2))
    for fam in ("modes", "trig"):
        g = boundary_family(fam, 3, 0.05, 1, (0, 0), 1.0)
        v = g(x)
        assert v.shape == (50, 3) and np.max(np.abs(v)) <= 0.05
        np.testing.assert_array_equal(v, boundary_family(fam, 3, 0.05, 1, (0, 0), 1.0)(x))
    with pytest.raises(ValueError):
        boundary_family("noise", 2, 0.1, 0, (0, 0), 1.0)


# ---------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def coarse_cfg():
    return load_config().with_overrides(h=1 / 32)


def test_pipeline_with_bump(coarse_cfg):
    rep = removability_experiment(coarse_cfg)
    assert rep.passed, rep.assertions
    assert [r.eps for r in rep.results] == [0.2, 0.1, 0.05]
    assert all(r.violations == 0 for r in rep.results)


def test_pipeline_control(coarse_cfg):
    rep = removability_experiment(coarse_cfg, sigma=0.0)
    assert rep.assertions == {"comparison_holds": True, "control_f_vanishes": True}


def test_pipeline_threads_match_serial(coarse_cfg):
    a = removability_experiment(coarse_cfg)
    b = removability_experiment(coarse_cfg.with_overrides(workers=3))
    for ra, rb in zip(a.results, b.results):
        assert ra.row() == rb.row()


# ---------------------------------------------------------------- CLI

def test_parser_lists_subcommands():
    p = build_parser()
    for cmd in ("geometry-check", "picard", "capacity-sweep", "decay", "maxprinciple-check",
                "removability", "holder-norms"):
        assert p.parse_args([cmd]).command == cmd


def test_decay_csv(tmp_path, capsys):
    assert main(["decay", "--out", str(tmp_path), "--steps", "10"]) == 0
    rows = read_csv(tmp_path / "decay.csv")
    assert len(rows) == 11 and rows[0]["a_k"] == "0.25"
    assert all(float(r["a_k"]) <= float(r["phi_k"]) + 1e-15 for r in rows)
    assert "PASS bounds_hold" in capsys.readouterr().out
    assert json.loads((tmp_path / "report.json").read_text())["passed"] is True


def test_capacity_sweep_csv(tmp_path):
    assert main(["capacity-sweep", "--out", str(tmp_path), "--h", "0.015625"]) == 0
    rows = read_csv(tmp_path / "capacity_sweep.csv")
    assert len(rows) == 4
    E = [float(r["E"]) for r in rows]
    assert all(a > b for a, b in zip(E, E[1:]))


def test_picard_and_grid_output(tmp_path):
    assert main(["picard", "--out", str(tmp_path)]) == 0
    u = read_grid_function(tmp_path / "ubar.grid")
    assert u.values.shape[1] == 2
    assert read_csv(tmp_path / "picard.csv")[0]["iteration"] == "1"


def test_runs_are_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["removability", "--out", str(tmp_path / d), "--seed", "3"]) == 0
    assert (tmp_path / "a" / "removability.csv").read_text() == \
        (tmp_path / "b" / "removability.csv").read_text()
    assert (tmp_path / "a" / "report.json").read_text() == (tmp_path / "b" / "report.json").read_text()


def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(DEFAULT_CONFIG.replace("seed = 0\n", ""))
    assert main(["decay", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err


def test_exit_code_runtime_error(tmp_path):
    assert main(["decay", "--a0", "0.7", "--out", str(tmp_path)]) == 1
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["passed"] is False and "DomainError" in rep["error"]


def test_exit_code_window_violation(tmp_path):
    # data amplitude beyond the comparison window: the pipeline refuses to run
    cfg = tmp_path / "big.ini"
    cfg.write_text(DEFAULT_CONFIG.replace("amplitude = 0.05", "amplitude = 0.5"))
    assert main(["removability", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
