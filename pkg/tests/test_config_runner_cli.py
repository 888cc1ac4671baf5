import csv
import filecmp
import subprocess
import sys
from pathlib import Path

import pytest

from minbench.cli import main
from minbench.config import load_config, parse_config
from minbench.errors import ConfigError
from minbench.runner import expand_cells, run

ROOT = Path(__file__).resolve().parents[1]
EXAMPLE = ROOT / "configs" / "example.ini"

BASE = """
[run]
seeds = 0, 1
[dataset]
source = synthetic
n_users = 30
n_items = 25
interactions_per_user = 8
seed = 3
[split]
scheme = temporal_holdout
fraction = 0.25
[model.pop]
kind = popularity
[model.mf]
kind = mf_sgd
latent_dim = 2
epochs = 5
[plan.recent]
strategy = recency
budgets = 1, 2, 4
[metrics]
rmse = global_mean
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_cell_count(tmp_path):
    cfg = parse_config(BASE)
    assert len(expand_cells(cfg)) == 12
    res = run(cfg, tmp_path / "out")
    rows = _rows(tmp_path / "out" / "cells.csv")
    assert rows[0] == ["model", "kind", "plan", "strategy", "budget", "seed", "metric", "aggregation", "value", "status"]
    assert len(rows) == 13 and res.n_failed == 0
    assert {r[-1] for r in rows[1:]} == {"ok"}


def test_rerun_is_byte_identical(tmp_path):
    cfg = parse_config(BASE + "[stopping]\nepsilon = 0.05\n")
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert (tmp_path / "a" / "curves" / "mf__recent__rmse__global_mean.csv").exists()


def test_parallel_matches_serial(tmp_path):
    run(parse_config(BASE), tmp_path / "a")
    run(parse_config(BASE.replace("seeds = 0, 1", "seeds = 0, 1\nworkers = 2")), tmp_path / "b")
    assert (tmp_path / "a" / "cells.csv").read_bytes() == (tmp_path / "b" / "cells.csv").read_bytes()


def test_missing_metrics_section():
    text = BASE.split("[metrics]")[0]
    with pytest.raises(ConfigError, match=r"\[metrics\]"):
        parse_config(text)


@pytest.mark.parametrize(
    "patch",
    [
        ("[model.pop]\nkind = popularity", "[model.pop]\nkind = popularity\nneighbours = 3"),
        ("kind = popularity", "kind = svd"),
        ("budgets = 1, 2, 4", "budgets = 1, -2, 4"),
        ("budgets = 1, 2, 4", "budgets = 1, 2, 2"),
        ("rmse = global_mean", "rmse = per_item"),
        ("[split]", "[spilt]"),
        ("fraction = 0.25", "fraction = lots"),
    ],
)
def test_config_errors(patch):
    with pytest.raises(ConfigError):
        parse_config(BASE.replace(*patch))


def test_plan_composition():
    cfg = parse_config(BASE.replace("budgets = 1, 2, 4", "budgets = 1, 2, 4\nthen = random:1"))
    assert [p.strategy for p in expand_cells(cfg)[0].steps] == ["recency", "random"]


def test_example_config_runs(tmp_path):
    cfg = load_config(EXAMPLE)
    res = run(cfg, tmp_path / "ex")
    out = tmp_path / "ex"
    for name in ("cells.csv", "cells_detail.csv", "curves.csv", "compatibility.csv",
                 "disparity.csv", "cross_user.csv", "manifest.txt", "config.ini"):
        assert (out / name).is_file(), name
    assert res.n_failed == 0
    manifest = (out / "manifest.txt").read_text()
    assert f"config_sha256 = {cfg.sha256}" in manifest
    assert "sha256.cells.csv = " in manifest


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MINBENCH_OUTPUT_DIR", str(tmp_path / "env"))
    run(parse_config(BASE))
    assert (tmp_path / "env" / "cells.csv").exists()


# command line


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, BASE)
    bad = _write(tmp_path, BASE.split("[metrics]")[0], "bad.ini")
    assert main(["run", "--config", str(good), "--output", str(tmp_path / "o"), "--quiet"]) == 0
    assert main(["run", "--config", str(bad), "--quiet"]) == 2
    missing = _write(tmp_path, BASE.replace("source = synthetic", "source = csv\npath = nowhere.csv")
                     .replace("n_users = 30\nn_items = 25\ninteractions_per_user = 8\nseed = 3\n", ""), "m.ini")
    assert main(["run", "--config", str(missing), "--quiet"]) == 3
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 1
    assert "minbench: ConfigError" in capsys.readouterr().err


def test_cli_runtime_failure_exit(tmp_path):
    diverge = BASE.replace("epochs = 5", "epochs = 5\nlearning_rate = 100")
    cfg = _write(tmp_path, diverge)
    assert main(["run", "--config", str(cfg), "--output", str(tmp_path / "o"), "--quiet"]) == 4
    rows = _rows(tmp_path / "o" / "cells.csv")
    assert any(r[-1].startswith("failed: TrainingDivergedError") for r in rows[1:])


def test_cli_gen_is_deterministic(tmp_path):
    spec = _write(tmp_path, "[synthetic]\nn_users = 20\nn_items = 15\ninteractions_per_user = 5\nseed = 9\n", "s.ini")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen", "--spec", str(spec), "--out", str(a), "--quiet"]) == 0
    assert main(["gen", "--spec", str(spec), "--out", str(b), "--quiet"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 101


def test_cli_withdraw_unknown_user(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    code = main(["withdraw", "--config", str(cfg), "--users", "nobody", "--model", "mf", "--output", str(tmp_path)])
    assert code == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err and "nobody" in captured.err
    assert "exact=True" in captured.out
    assert (tmp_path / "ledger.csv").read_text().splitlines()[0].startswith("event_id,")


def test_cli_withdraw_known_user(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    assert main(["withdraw", "--config", str(cfg), "--users", "u00,u05", "--output", str(tmp_path)]) == 0
    assert "exact=True" in capsys.readouterr().out


def test_cli_curve_and_compat(tmp_path, capsys):
    text = BASE + "[stopping]\nepsilon = 0.05\n[analysis.compatibility]\ntask_a = pop:rmse\ntask_b = mf:rmse\nfractions = 0.2\nseeds = 0, 1, 2, 3, 4, 5, 6, 7\npermutations = 99\n"
    cfg = _write(tmp_path, text)
    assert main(["curve", "--config", str(cfg), "--model", "mf", "--metric", "rmse"]) == 0
    out = capsys.readouterr().out
    assert "budget,mean_value" in out and "fit: a=" in out
    report = tmp_path / "compat.csv"
    assert main(["compat", "--config", str(cfg), "--output", str(report)]) == 0
    assert "verdict=" in capsys.readouterr().out
    assert report.read_text().startswith("# purpose_a=")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "minbench", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("minbench ")
