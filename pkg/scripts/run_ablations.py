#!/usr/bin/env python3
"""Reproduce the ablation study at a fixed 15-node budget.

Grid A: retrieval strategy (similarity / random / fixed) with step-level
feedback. Grid B: feedback modality (step_level / final_score /
trajectory_only / image_only / image_and_trajectory) with similarity
retrieval. 100 evaluation seeds per task by default.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from sail.harness import CellSpec, ExperimentConfig, run_experiment, summarize


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablations")
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--budget", type=int, default=15)
    parser.add_argument("--rng-seed", type=int, default=0)
    args = parser.parse_args()

    cells = [CellSpec("mcts", args.budget, retrieval, "step_level") for retrieval in ("similarity", "random", "fixed")]
    cells += [
        CellSpec("mcts", args.budget, "similarity", fb)
        for fb in ("final_score", "trajectory_only", "image_only", "image_and_trajectory")
    ]
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
    return 2 if aborted else 0


if __name__ == "__main__":
    raise SystemExit(main())
