import csv
import os

import pytest

from uisadmm.bench import ConfigError, read_summary
from uisadmm.cli import OUTPUT_ENV, config_from_dict, load_config, main

CONFIG = """
[problem]
kind = "fused_lasso"
lambda1 = 1e-3

[problem.dataset]
kind = "synthetic"
n = 40
d = 4
seed = 0

[algorithms.SADMM]
[algorithms."AH-SADMM"]
m = 3

[run]
epochs = 2
seeds = [0, 1]
probe_interval = 2
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(CONFIG)
    return path


def test_load_config(cfg_file):
    cfg, raw = load_config(cfg_file)
    assert cfg.problem == "fused_lasso" and cfg.lambda1 == 1e-3
    assert cfg.algorithms == ("SADMM", "AH-SADMM")
    assert cfg.overrides == {"AH-SADMM": {"m": 3}}
    assert cfg.seeds == (0, 1) and cfg.epochs == 2
    assert raw["problem"]["dataset"]["n"] == 40


def test_run_writes_artifacts(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(cfg_file), "-o", str(out)]) == 0
    assert len(os.listdir(out)) == 2 * 2 * 2 + 1
    assert len(read_summary(out / "summary.csv")) == 4
    assert "AH-SADMM" in capsys.readouterr().out


def test_output_dir_from_environment(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env_out"))
    assert main(["run", str(cfg_file)]) == 0
    assert (tmp_path / "env_out" / "summary.csv").is_file()


def test_config_output_dir_beats_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, "ignored")
    cfg = config_from_dict({"algorithms": {"SADMM": {}}, "run": {"output_dir": "mine"}})
    assert cfg.output_dir == "mine"


def test_sweep(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text(CONFIG.replace("seeds = [0, 1]", "seeds = [0]")
                    + '\n[sweep]\n"problem.lambda1" = [1e-3, 1e-2]\nepochs = [1, 2]\n')
    out = tmp_path / "grid"
    assert main(["sweep", str(path), "-o", str(out), "-j", "1"]) == 0
    with open(out / "sweep_index.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert set(rows[0]) == {"point", "output_dir", "epochs", "problem.lambda1"}
    for r in rows:
        assert os.path.isfile(os.path.join(r["output_dir"], "summary.csv"))


def test_sweep_rejects_bad_section(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text(CONFIG + '\n[sweep]\n"algorithms.x" = [1]\n')
    assert main(["sweep", str(path), "-o", str(tmp_path / "g")]) == 2


def test_probe(tmp_path):
    path = tmp_path / "p.toml"
    path.write_text(CONFIG + "\n[probe]\nn = 6\nd = 3\nsteps = 4\nt_max = 2\nalphas = [0.5]\n")
    out = tmp_path / "probe"
    assert main(["probe", str(path), "-o", str(out)]) == 0
    with open(out / "probe_bias.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 4
    with open(out / "probe_variance.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 3


def test_validate_params_infeasible_defaults(cfg_file, capsys):
    assert main(["validate-params", str(cfg_file)]) == 1
    text = capsys.readouterr().out
    assert "infeasible" in text and "feasible w1 in" in text


def test_validate_params_feasible(tmp_path, capsys):
    path = tmp_path / "v.toml"
    path.write_text(CONFIG.replace(
        '[algorithms.SADMM]\n[algorithms."AH-SADMM"]\nm = 3\n',
        '[algorithms."SVRG-ADMM"]\nbeta = 1e4\nw1 = 1e-3\nw2 = 1e-3\n'))
    assert main(["validate-params", str(path)]) == 0
    assert "  feasible" in capsys.readouterr().out


@pytest.mark.parametrize("text", [
    CONFIG + "\n[extra]\n",
    CONFIG.replace("[run]", "[run]\nspeed = 3"),
    CONFIG.replace('kind = "fused_lasso"', 'kind = "lasso"'),
    CONFIG.replace("[algorithms.SADMM]", "[algorithms.ADAM]"),
    "[problem]\nkind = \"fused_lasso\"\n",
    "not toml [",
])
def test_config_errors_exit_2(tmp_path, text, capsys):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    assert main(["run", str(path), "-o", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "absent.toml")]) == 2


def test_config_from_dict_requires_algorithms():
    with pytest.raises(ConfigError):
        config_from_dict({"problem": {"kind": "fused_lasso"}})
