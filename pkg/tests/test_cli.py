import csv
import json

import pytest

from quadbsde import cli, runner
from quadbsde.config import ConfigError, parse_config, parse_mapping
from quadbsde.runner import ResultRow, closed_form_y0


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- configuration --------------------------------------------------------


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, 'kind = "oracle"\ndriver.gamma = 1.0\nT = 1.0\nM = 100000\nseed = 7\n'))
    assert cfg.kind == "oracle" and cfg.seed == 7 and cfg.M == 100_000
    assert cfg.N == 256 and cfg["basis.degree"] == 3
    assert "N = 256  # default" in cfg.describe()
    assert "seed = 7\n" in cfg.describe() + "\n"


def test_gamma_rule_named(tmp_path):
    with pytest.raises(ConfigError, match="gamma > 0"):
        parse_config(write(tmp_path, 'kind = "oracle"\ndriver.gamma = 0\n'))


def test_unknown_key_listed(tmp_path):
    with pytest.raises(ConfigError, match="gama"):
        parse_config(write(tmp_path, 'kind = "oracle"\ngama = 1.0\n'))


def test_nested_tables_equal_dotted_keys(tmp_path):
    a = parse_config(write(tmp_path, 'kind = "solve"\n[driver]\ngamma = 2.0\n', "a.toml"))
    b = parse_config(write(tmp_path, 'kind = "solve"\ndriver.gamma = 2.0\n', "b.toml"))
    assert a.to_dict() == b.to_dict()


@pytest.mark.parametrize("mapping, rule", [
    ({"kind": "nope"}, "kind in"),
    ({"kind": "solve", "N": 0}, "N >= 1"),
    ({"kind": "solve", "comparison.thetas": [0.5, 1.0]}, r"theta in \(0, 1\)"),
    ({"kind": "solve", "terminal.func": "cube"}, "unknown Brownian functional"),
    ({"kind": "solve", "M": 1.5}, "expected an integer"),
    ({}, "kind is required"),
])
def test_invariant_violations(mapping, rule):
    with pytest.raises(ConfigError, match=rule):
        parse_mapping(mapping)


def test_overrides_win():
    cfg = parse_mapping({"kind": "solve", "seed": 1}, {"seed": 9, "M": 10, "N": None})
    assert cfg.seed == 9 and cfg.M == 10 and cfg.N == 256


def test_closed_form_reference():
    cfg = parse_mapping({"kind": "oracle", "driver.alpha": 0.3, "terminal.scale": 2.0, "terminal.shift": 1.0})
    p = cfg.problem()
    assert closed_form_y0(p.driver, p.terminal) == pytest.approx(1.0 + 0.3 + 0.5 * 4.0)


# --- runs -----------------------------------------------------------------


def test_oracle_run_csv(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["oracle", "--paths", "100000", "--steps", "16", "--seed", "7", "--out", str(out)])
    assert code == 0
    (row,) = read_rows(out / "results.csv")
    assert row["certificate"] == "y0" and row["pass"] == "true"
    assert abs(float(row["statistic"]) - 0.5) < 0.02
    assert list(row) == list(runner.COLUMNS)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["all_passed"] is True
    assert set(manifest["digests"]) >= {"results.csv", "summary.txt"}


def test_identical_comparison_passes(tmp_path):
    out = tmp_path / "cmp"
    code = cli.main(["verify-comparison", "--paths", "4000", "--steps", "8", "--out", str(out)])
    assert code == 0
    rows = read_rows(out / "results.csv")
    vf = [r for r in rows if r["certificate"].startswith("violation_fraction")]
    assert vf and all(float(r["statistic"]) == 0.0 for r in vf)


@pytest.mark.parametrize("kind", ["simulate", "verify-monotone", "pde-compare"])
def test_rerun_byte_identical(tmp_path, kind):
    cfg = write(tmp_path, '[terminal]\nfunc = "abs"\n[pde]\nJ = 61\nN = 100\n')
    first, second = tmp_path / "a", tmp_path / "b"
    assert cli.main([kind, "--config", cfg, "--paths", "3000", "--steps", "8", "--out", str(first)]) == 0
    assert cli.main(["rerun", str(first / "manifest.json"), "--out", str(second)]) == 0
    assert (first / "results.csv").read_bytes() == (second / "results.csv").read_bytes()


def test_pde_points_written(tmp_path):
    out = tmp_path / "pde"
    cli.main(["pde-compare", "--paths", "3000", "--steps", "10", "--out", str(out)])
    rows = read_rows(out / "pde_points.csv")
    assert len(rows) == 8 and list(rows[0]) == ["t", "x", "u_fd", "u_mc", "ci_lo", "ci_hi", "budget", "pass"]


def test_exit_status_on_failed_certificate(tmp_path, monkeypatch, capsys):
    def failing(cfg):
        return [ResultRow("simulate", "always_fails", 1.0, 0.0, 0.0, None, False, cfg.seed)], {}

    monkeypatch.setitem(runner.EXPERIMENTS, "simulate", failing)
    assert cli.main(["simulate", "--out", str(tmp_path / "f")]) == cli.EXIT_FAIL
    assert "FAIL  simulate/always_fails/" in capsys.readouterr().out


def test_exit_status_on_experiment_error(tmp_path, capsys):
    cfg = write(tmp_path, "picard.max_iter = 1\ndriver.family = \"linear-in-y\"\ndriver.beta = 1000.0\n")
    code = cli.main(["solve", "--config", cfg, "--paths", "100", "--steps", "4", "--out", str(tmp_path / "e")])
    assert code == cli.EXIT_ERROR
    assert "PicardDivergence" in capsys.readouterr().err


def test_config_error_exit(tmp_path, capsys):
    code = cli.main(["oracle", "--config", write(tmp_path, "gama = 1\n"), "--out", str(tmp_path / "x")])
    assert code == cli.EXIT_CONFIG
    assert "gama" in capsys.readouterr().err
