#!/usr/bin/env python3
"""Reproduce the scaling study: success rate vs search budget.

Runs MCTS at budgets {1, 6, 15, 30, 45} plus the breadth- and depth-first
baselines at 15 nodes, 100 evaluation seeds per task, scripted policy and
oracle scorer. Writes results.csv, summary.json, and the scaling-curve SVGs.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from sail.harness import CellSpec, ExperimentConfig, emit_plots, run_experiment, summarize

BUDGETS = (1, 6, 15, 30, 45)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/scaling", help="output directory")
    parser.add_argument("--seeds", type=int, default=100, help="evaluation seeds per task")
    parser.add_argument("--rng-seed", type=int, default=0)
    args = parser.parse_args()

    cells = [CellSpec("mcts", b) for b in BUDGETS]
    cells += [CellSpec("breadth", 15), CellSpec("depth", 15)]
    cfg = ExperimentConfig(
        seed_count=args.seeds,
        cells=tuple(cells),
        out_dir=args.out,
        rng_seed=args.rng_seed,
    )
    csv_path, aborted = run_experiment(cfg)
    summary = summarize(csv_path)
    print(summary.text_table())
    (Path(args.out) / "summary.json").write_text(summary.to_json())
    for path in emit_plots(csv_path, args.out):
        print(f"wrote {path}")
    return 2 if aborted else 0


if __name__ == "__main__":
    raise SystemExit(main())
