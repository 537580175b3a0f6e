from __future__ import annotations

import json
from pathlib import Path

from click.testing import CliRunner

from sail.cli import main


def _write_config(tmp_path: Path, **overrides) -> Path:
    cfg = {
        "tasks": ["pick_place"],
        "seed_count": 3,
        "budgets": [1, 6],
        "out_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_run_and_plot_and_replay(tmp_path):
    runner = CliRunner()
    cfg_path = _write_config(tmp_path)
    result = runner.invoke(main, ["run", "--config", str(cfg_path)])
    assert result.exit_code == 0, result.output
    assert "results:" in result.output

    csv = tmp_path / "out" / "results.csv"
    result = runner.invoke(main, ["plot", "--csv", str(csv), "--out", str(tmp_path / "plots")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "plots" / "plot_average.svg").exists()

    tree_log = next((tmp_path / "out" / "trees").glob("*.jsonl"))
    result = runner.invoke(main, ["replay", "--tree-log", str(tree_log), "--seed", "1"])
    assert result.exit_code == 0, result.output
    assert "backup check: OK" in result.output


def test_run_bad_config_exits_1(tmp_path):
    runner = CliRunner()
    cfg_path = _write_config(tmp_path, tasks=["juggling"])
    result = runner.invoke(main, ["run", "--config", str(cfg_path)])
    assert result.exit_code == 1


def test_ablate_runs_grid(tmp_path):
    runner = CliRunner()
    cfg_path = _write_config(tmp_path, seed_count=2, tasks=["drawer_open"])
    result = runner.invoke(main, ["ablate", "--config", str(cfg_path), "--budget", "2"])
    assert result.exit_code == 0, result.output
    csv = (tmp_path / "out" / "results.csv").read_text()
    for token in ("random", "fixed", "final_score", "trajectory_only", "image_only", "image_and_trajectory"):
        assert token in csv


def test_aborted_seeds_exit_2(tmp_path):
    runner = CliRunner()
    cfg_path = _write_config(
        tmp_path,
        seed_count=1,
        budgets=[1],
        backend="remote",
        remote={"endpoint": "http://127.0.0.1:9", "timeout_s": 0.2, "max_retries": 0},
    )
    result = runner.invoke(main, ["run", "--config", str(cfg_path)])
    assert result.exit_code == 2
    assert (tmp_path / "out" / "errors.log").exists()


def test_replay_unknown_seed_exits_1(tmp_path):
    runner = CliRunner()
    cfg_path = _write_config(tmp_path, seed_count=2, budgets=[1])
    assert runner.invoke(main, ["run", "--config", str(cfg_path)]).exit_code == 0
    tree_log = next((tmp_path / "out" / "trees").glob("*.jsonl"))
    result = runner.invoke(main, ["replay", "--tree-log", str(tree_log), "--seed", "99"])
    assert result.exit_code == 1
