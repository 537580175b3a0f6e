"""Command line entry points: run, ablate, plot, replay.

Exit codes: 0 on success, 1 on config errors, 2 when any seed aborted.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from .harness import (
    CellSpec,
    ConfigError,
    ExperimentConfig,
    InsufficientData,
    MalformedCSV,
    emit_plots,
    run_experiment,
    summarize,
)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(path: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_json(path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)


def _run_and_report(cfg: ExperimentConfig) -> None:
    csv_path, aborted = run_experiment(cfg)
    click.echo(f"results: {csv_path}")
    summary = summarize(csv_path)
    click.echo(summary.text_table())
    (Path(cfg.out_dir) / "summary.json").write_text(summary.to_json())
    if aborted:
        click.echo(f"{aborted} seed(s) aborted, see {Path(cfg.out_dir) / 'errors.log'}", err=True)
        sys.exit(2)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run(config_path: str) -> None:
    """Run the experiment grid described by a JSON config."""
    _run_and_report(_load_config(config_path))


def _ablation_cells(budget: int) -> tuple[CellSpec, ...]:
    cells = [CellSpec("mcts", budget, retrieval, "step_level") for retrieval in ("similarity", "random", "fixed")]
    cells += [
        CellSpec("mcts", budget, "similarity", fb)
        for fb in ("final_score", "trajectory_only", "image_only", "image_and_trajectory")
    ]
    return tuple(cells)


@main.command(name="ablate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--budget", default=15, show_default=True, help="Fixed node budget for the ablations.")
def ablate_cmd(config_path: str, budget: int) -> None:
    """Run the retrieval-strategy and feedback-modality ablation grids."""
    cfg = _load_config(config_path)
    cfg = replace(cfg, cells=_ablation_cells(budget))
    _run_and_report(cfg)


@main.command()
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def plot(csv_path: str, out_dir: str) -> None:
    """Emit scaling-curve SVGs from a results CSV."""
    try:
        written = emit_plots(csv_path, out_dir)
    except (MalformedCSV, InsufficientData) as exc:
        click.echo(f"plot error: {exc}", err=True)
        sys.exit(1)
    for path in written:
        click.echo(str(path))


@main.command()
@click.option("--tree-log", "tree_log", required=True, type=click.Path(exists=True))
@click.option("--seed", required=True, type=int)
@click.option("--dump", "dump_dir", default=None, type=click.Path(), help="Also dump the best rollout's frame log here.")
def replay(tree_log: str, seed: int, dump_dir: str | None) -> None:
    """Re-check one seed's tree log: backup stats and best-trajectory re-execution."""
    from .harness import read_tree_log
    from .search import recompute_stats
    from .simulator import SimEnv, dump_rollout
    from .tasks import get_task
    from .trajectory import parse_trajectory_text

    runs = {r.meta["seed"]: r for r in read_tree_log(tree_log)}
    if seed not in runs:
        click.echo(f"seed {seed} not present in {tree_log}", err=True)
        sys.exit(1)
    run_data = runs[seed]
    records = run_data.records
    summary = run_data.summary
    replayed = recompute_stats(records)
    mismatches = 0
    for node_id, (visits, mean) in replayed.items():
        stored = summary["nodes"][str(node_id)]
        if stored[0] != visits or abs(stored[1] - mean) > 1e-9:
            mismatches += 1
    click.echo(f"nodes: {len(records)}; backup check: {'OK' if mismatches == 0 else f'{mismatches} MISMATCHES'}")
    meta = run_data.meta
    env = SimEnv(get_task(meta["task"]))
    state, _, _ = env.reset(seed)
    best = next(r for r in records if r.id == summary["best_id"])
    rollout = env.execute(state, parse_trajectory_text(best.trajectory_text))
    click.echo(
        f"best node {best.id}: recorded verified={best.verified_success}, "
        f"re-executed verified={rollout.verified_success}"
    )
    if dump_dir:
        dump_rollout(rollout, dump_dir)
        click.echo(f"rollout log written to {dump_dir}")
    if mismatches or rollout.verified_success != best.verified_success:
        sys.exit(2)


if __name__ == "__main__":
    main()
