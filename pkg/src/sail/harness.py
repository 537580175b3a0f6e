"""Experiment driver: seed sweeps over strategy/budget/ablation grids.

One grid cell is a (strategy, budget, retrieval mode, feedback mode)
combination. Within a cell each task gets a fresh archive seeded with the
golden demonstrations, which then persists across evaluation seeds in
ascending order (cross-seed reuse); nothing leaks between cells. Each
(cell, task, seed) run appends one CSV row. With the scripted backend the
whole artifact tree is a deterministic function of the config and its
global rng seed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .archive import Archive, RetrievalMode
from .feedback import FeedbackMode
from .policy import NoiseConfig, PolicyBackend, RemoteConfig, RemotePolicy, ScriptedPolicy
from .scorer import OracleScorer, SubtaskList
from .search import SearchConfig, SearchResult, run_strategy
from .simulator import SimEnv
from .tasks import TASKS, get_task, template_trajectory

logger = logging.getLogger(__name__)

STRATEGY_NAMES = ("single", "breadth", "depth", "mcts")


class ConfigError(ValueError):
    """The experiment configuration is not runnable."""


class MalformedCSV(ValueError):
    """A results CSV is missing columns or cannot be parsed."""


class InsufficientData(ValueError):
    """Plotting needs at least two distinct budgets."""


@dataclass(frozen=True, slots=True)
class CellSpec:
    strategy: str
    budget: int
    retrieval: str = "similarity"
    feedback: str = "step_level"


@dataclass(frozen=True, slots=True)
class ResultRow:
    task: str
    strategy: str
    budget: int
    retrieval_mode: str
    feedback_mode: str
    seed: int
    success: bool
    best_reward: float
    nodes_expanded: int
    wall_time_s: float

    CSV_HEADER = "task,strategy,budget,retrieval_mode,feedback_mode,seed,success,best_reward,nodes_expanded,wall_time_s"

    def to_csv(self) -> str:
        return ",".join(
            [
                self.task,
                self.strategy,
                str(self.budget),
                self.retrieval_mode,
                self.feedback_mode,
                str(self.seed),
                "true" if self.success else "false",
                f"{self.best_reward:.6f}",
                str(self.nodes_expanded),
                f"{self.wall_time_s:.3f}",
            ]
        )


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    tasks: tuple[str, ...] = tuple(TASKS)
    seed_start: int = 0
    seed_count: int = 20
    demo_seeds: tuple[int, ...] = (10007, 10013, 10039)
    strategies: tuple[str, ...] = ("mcts",)
    budgets: tuple[int, ...] = (15,)
    retrieval_modes: tuple[str, ...] = ("similarity",)
    feedback_modes: tuple[str, ...] = ("step_level",)
    cells: tuple[CellSpec, ...] | None = None
    branching: int = 3
    k_retrieval: int = 1
    c_pucb: float = 1.0
    scorer_frames: int = 50
    keypoint_noise: float = 0.0
    backend: str = "scripted"
    remote: RemoteConfig | None = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    early_stop: bool = True
    rng_seed: int = 0
    out_dir: str = "runs"
    measure_wall_time: bool = False
    save_trees: bool = True

    def eval_seeds(self) -> tuple[int, ...]:
        return tuple(range(self.seed_start, self.seed_start + self.seed_count))

    def grid(self) -> tuple[CellSpec, ...]:
        if self.cells is not None:
            return self.cells
        out = []
        for strategy in self.strategies:
            budgets = (1,) if strategy == "single" else self.budgets
            for budget in budgets:
                for retr in self.retrieval_modes:
                    for fb in self.feedback_modes:
                        out.append(CellSpec(strategy, budget, retr, fb))
        return tuple(out)

    def validate(self) -> None:
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown:
            raise ConfigError(f"unknown tasks: {unknown}")
        if self.seed_count < 1:
            raise ConfigError("seed_count must be >= 1")
        overlap = set(self.eval_seeds()) & set(self.demo_seeds)
        if overlap:
            raise ConfigError(f"evaluation seeds must be disjoint from demo seeds, got {sorted(overlap)}")
        if not self.demo_seeds:
            raise ConfigError("at least one demo seed is required")
        for cell in self.grid():
            if cell.strategy not in STRATEGY_NAMES:
                raise ConfigError(f"unknown strategy {cell.strategy!r}")
            if cell.budget < 1:
                raise ConfigError("budgets must be >= 1")
            try:
                RetrievalMode.parse(cell.retrieval, rng_seed=self.rng_seed)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            try:
                FeedbackMode.parse(cell.feedback)
            except ValueError:
                raise ConfigError(f"unknown feedback mode {cell.feedback!r}") from None
        if self.backend not in ("scripted", "remote"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "remote" and self.remote is None:
            raise ConfigError("remote backend requires a remote config")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        for key in ("tasks", "demo_seeds", "strategies", "budgets", "retrieval_modes", "feedback_modes"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("cells") is not None:
            kwargs["cells"] = tuple(CellSpec(**c) for c in kwargs["cells"])
        if kwargs.get("remote") is not None:
            kwargs["remote"] = RemoteConfig(**kwargs["remote"])
        if "noise" in kwargs and isinstance(kwargs["noise"], dict):
            kwargs["noise"] = NoiseConfig(**kwargs["noise"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _seed_archive(env: SimEnv, archive: Archive, task, demo_seeds) -> None:
    """Golden template demonstrations on the demo seeds, verified on insert."""
    for ds in demo_seeds:
        state, obs, _ = env.reset(ds)
        truth = {label: obj.position for label, obj in state.objects.items()}
        traj = template_trajectory(task, truth)
        rollout = env.execute(state, traj)
        if not rollout.verified_success:
            raise ConfigError(f"golden demonstration failed for {task.task} seed {ds}")
        archive.add(obs, traj, task.task, ds, is_demo=True)


def _make_policy(cfg: ExperimentConfig, task, seed: int) -> PolicyBackend:
    if cfg.backend == "remote":
        return RemotePolicy(cfg.remote)
    return ScriptedPolicy(task, seed, noise=cfg.noise, run_key=cfg.rng_seed)


def _tree_log_path(out: Path, cell: CellSpec, task: str) -> Path:
    name = f"tree_{task}_{cell.strategy}_{cell.budget}_{cell.retrieval}_{cell.feedback}.jsonl"
    return out / "trees" / name


def _append_tree_log(path: Path, cell: CellSpec, task: str, seed: int, result: SearchResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(
            json.dumps(
                {
                    "type": "run",
                    "task": task,
                    "seed": seed,
                    "strategy": cell.strategy,
                    "budget": cell.budget,
                    "retrieval": cell.retrieval,
                    "feedback": cell.feedback,
                },
                sort_keys=True,
            )
            + "\n"
        )
        for rec in result.log:
            fh.write(rec.to_json() + "\n")
        fh.write(
            json.dumps(
                {
                    "type": "summary",
                    "seed": seed,
                    "best_id": result.best.id,
                    "success": result.success,
                    "nodes": {str(n.id): [n.visits, n.mean] for n in result.tree.values()},
                },
                sort_keys=True,
            )
            + "\n"
        )


@dataclass(frozen=True, slots=True)
class TreeRun:
    """One seed's search, parsed back from a tree-log file."""

    meta: dict
    records: tuple
    summary: dict


def read_tree_log(path) -> list[TreeRun]:
    from .search import NodeRecord

    runs: list[dict] = []
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        if rec["type"] == "run":
            runs.append({"meta": rec, "records": [], "summary": None})
        elif rec["type"] == "node":
            runs[-1]["records"].append(
                NodeRecord(
                    id=rec["id"], parent=rec["parent"], depth=rec["depth"],
                    reward=rec["reward"], prior=rec["prior"],
                    verified_success=rec["verified_success"],
                    demo_refs=tuple(rec["demo_refs"]),
                    feedback_source=rec["feedback_source"],
                    trajectory_text=rec["trajectory_text"],
                )
            )
        elif rec["type"] == "summary":
            runs[-1]["summary"] = rec
    return [TreeRun(meta=r["meta"], records=tuple(r["records"]), summary=r["summary"]) for r in runs]


def run_experiment(cfg: ExperimentConfig) -> tuple[Path, int]:
    """Run the grid; returns (csv path, number of aborted seeds)."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    diag_path = out / "errors.log"
    aborted = 0
    rows: list[str] = [ResultRow.CSV_HEADER]
    for cell in cfg.grid():
        strategy = cell.strategy
        budget = 1 if strategy == "single" else cell.budget
        for task_name in cfg.tasks:
            task = get_task(task_name)
            env = SimEnv(task, run_key=cfg.rng_seed, keypoint_noise=cfg.keypoint_noise)
            archive = Archive(run_key=cfg.rng_seed)
            _seed_archive(env, archive, task, cfg.demo_seeds)
            scorer = OracleScorer(task)
            subtask_cache: dict[str, SubtaskList] = {}
            search_cfg = SearchConfig(
                budget=budget,
                branching=cfg.branching,
                c_pucb=cfg.c_pucb,
                k_retrieval=cfg.k_retrieval,
                retrieval=RetrievalMode.parse(cell.retrieval, rng_seed=cfg.rng_seed),
                feedback=FeedbackMode.parse(cell.feedback),
                early_stop=cfg.early_stop,
                scorer_frames=cfg.scorer_frames,
            )
            for seed in cfg.eval_seeds():
                policy = _make_policy(cfg, task, seed)
                started = time.perf_counter() if cfg.measure_wall_time else 0.0
                try:
                    result = run_strategy(
                        strategy if strategy != "single" else "single",
                        env, policy, scorer, archive, task, seed, search_cfg, subtask_cache,
                    )
                except Exception as exc:  # per-seed failures recorded, not fatal
                    aborted += 1
                    with diag_path.open("a") as fh:
                        fh.write(f"{task_name} {cell} seed={seed}: {type(exc).__name__}: {exc}\n")
                    logger.warning("seed aborted: %s %s seed=%d: %s", task_name, cell, seed, exc)
                    rows.append(
                        ResultRow(
                            task=task_name, strategy=strategy, budget=budget,
                            retrieval_mode=cell.retrieval, feedback_mode=cell.feedback,
                            seed=seed, success=False, best_reward=0.0,
                            nodes_expanded=0, wall_time_s=0.0,
                        ).to_csv()
                    )
                    continue
                elapsed = time.perf_counter() - started if cfg.measure_wall_time else 0.0
                rows.append(
                    ResultRow(
                        task=task_name, strategy=strategy, budget=budget,
                        retrieval_mode=cell.retrieval, feedback_mode=cell.feedback,
                        seed=seed, success=result.success, best_reward=result.best.reward,
                        nodes_expanded=result.nodes_expanded, wall_time_s=elapsed,
                    ).to_csv()
                )
                if cfg.save_trees:
                    _append_tree_log(_tree_log_path(out, cell, task_name), cell, task_name, seed, result)
    csv_path.write_text("\n".join(rows) + "\n")
    return csv_path, aborted


# --- summaries ------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class SummaryRow:
    strategy: str
    budget: int
    retrieval_mode: str
    feedback_mode: str
    per_task: dict[str, float]
    counts: dict[str, int]

    @property
    def average(self) -> float:
        return sum(self.per_task.values()) / len(self.per_task)


@dataclass(frozen=True, slots=True)
class Summary:
    tasks: tuple[str, ...]
    rows: tuple[SummaryRow, ...]

    def text_table(self) -> str:
        def method_name(row: SummaryRow) -> str:
            extras = []
            if row.retrieval_mode != "similarity":
                extras.append(row.retrieval_mode)
            if row.feedback_mode != "step_level":
                extras.append(row.feedback_mode)
            return row.strategy + (f" ({','.join(extras)})" if extras else "")

        header = ["method", "nodes"] + list(self.tasks) + ["avg"]
        name_width = max([len(header[0])] + [len(method_name(r)) for r in self.rows])
        widths = [name_width, 5] + [max(6, len(t)) for t in self.tasks] + [6]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for row in self.rows:
            cells = [method_name(row), str(row.budget)]
            for t in self.tasks:
                cells.append(f"{row.per_task[t]:.2f}" if t in row.per_task else "-")
            cells.append(f"{row.average:.2f}")
            lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(
            {
                "tasks": list(self.tasks),
                "rows": [
                    {
                        "strategy": r.strategy,
                        "budget": r.budget,
                        "retrieval_mode": r.retrieval_mode,
                        "feedback_mode": r.feedback_mode,
                        "per_task": r.per_task,
                        "counts": r.counts,
                        "average": r.average,
                    }
                    for r in self.rows
                ],
            },
            sort_keys=True,
        )


def read_rows(csv_path) -> list[ResultRow]:
    lines = Path(csv_path).read_text().splitlines()
    if not lines or lines[0] != ResultRow.CSV_HEADER:
        raise MalformedCSV(f"bad or missing header in {csv_path}")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 10:
            raise MalformedCSV(f"line {i}: expected 10 columns, got {len(parts)}")
        try:
            rows.append(
                ResultRow(
                    task=parts[0], strategy=parts[1], budget=int(parts[2]),
                    retrieval_mode=parts[3], feedback_mode=parts[4], seed=int(parts[5]),
                    success=parts[6] == "true", best_reward=float(parts[7]),
                    nodes_expanded=int(parts[8]), wall_time_s=float(parts[9]),
                )
            )
        except ValueError as exc:
            raise MalformedCSV(f"line {i}: {exc}") from None
    return rows


def summarize(csv_path) -> Summary:
    """Mean success per (method, budget, ablation) cell, by task plus average."""
    rows = read_rows(csv_path)
    if not rows:
        raise MalformedCSV("no data rows")
    tasks: list[str] = []
    groups: dict[tuple, dict[str, list[bool]]] = {}
    order: list[tuple] = []
    for row in rows:
        if row.task not in tasks:
            tasks.append(row.task)
        key = (row.strategy, row.budget, row.retrieval_mode, row.feedback_mode)
        if key not in groups:
            groups[key] = {}
            order.append(key)
        groups[key].setdefault(row.task, []).append(row.success)
    out_rows = []
    for key in order:
        per_task = {}
        counts = {}
        for t in tasks:
            cell = groups[key].get(t)
            if not cell:
                logger.warning("empty cell for %s task=%s, omitted", key, t)
                continue
            per_task[t] = sum(cell) / len(cell)
            counts[t] = len(cell)
        out_rows.append(
            SummaryRow(
                strategy=key[0], budget=key[1], retrieval_mode=key[2],
                feedback_mode=key[3], per_task=per_task, counts=counts,
            )
        )
    return Summary(tasks=tuple(tasks), rows=tuple(out_rows))


# --- plots ------------------------------------------------------------------

_PALETTE = ("#1f6feb", "#d1242f", "#1a7f37", "#9a6700", "#8250df", "#bf3989", "#57606a")


def _svg_plot(title: str, series: dict[str, list[tuple[int, float]]]) -> str:
    width, height = 480, 340
    ml, mr, mt, mb = 56, 16, 34, 44
    pw, ph = width - ml - mr, height - mt - mb
    budgets = sorted({b for pts in series.values() for b, _ in pts})
    bmin, bmax = budgets[0], budgets[-1]
    span = max(bmax - bmin, 1)

    def sx(b: float) -> float:
        return ml + (b - bmin) / span * pw

    def sy(r: float) -> float:
        return mt + (1.0 - r) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml}" y="18" font-size="13">{title}</text>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt+ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt+ph}" x2="{ml+pw}" y2="{mt+ph}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(tick)
        parts.append(f'<line x1="{ml-4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{ml-8}" y="{y+4:.1f}" text-anchor="end">{tick:.2f}</text>')
    for b in budgets:
        x = sx(b)
        parts.append(f'<line x1="{x:.1f}" y1="{mt+ph}" x2="{x:.1f}" y2="{mt+ph+4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{mt+ph+16}" text-anchor="middle">{b}</text>')
    parts.append(
        f'<text x="{ml+pw/2:.1f}" y="{height-8}" text-anchor="middle">nodes (budget)</text>'
    )
    parts.append(
        f'<text x="14" y="{mt+ph/2:.1f}" text-anchor="middle" transform="rotate(-90 14 {mt+ph/2:.1f})">success rate</text>'
    )
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(b):.1f},{sy(r):.1f}" for b, r in sorted(pts))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for b, r in sorted(pts):
            parts.append(f'<circle cx="{sx(b):.1f}" cy="{sy(r):.1f}" r="2.5" fill="{color}"/>')
        parts.append(f'<text x="{ml+pw-2}" y="{mt+14+12*i}" text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_plots(csv_path, out_dir) -> list[Path]:
    """One scaling-curve SVG per task plus the across-task average."""
    rows = read_rows(csv_path)
    budgets = {r.budget for r in rows}
    if len(budgets) < 2:
        raise InsufficientData("plots need at least two distinct budgets")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def series_name(row: ResultRow) -> str:
        name = row.strategy
        if row.retrieval_mode != "similarity":
            name += f"/{row.retrieval_mode}"
        if row.feedback_mode != "step_level":
            name += f"/{row.feedback_mode}"
        return name

    tasks = []
    for r in rows:
        if r.task not in tasks:
            tasks.append(r.task)
    grouped: dict[str, dict[tuple[str, int], list[bool]]] = {t: {} for t in tasks}
    for r in rows:
        grouped[r.task].setdefault((series_name(r), r.budget), []).append(r.success)
    written = []
    avg_accum: dict[tuple[str, int], list[float]] = {}
    for t in tasks:
        series: dict[str, list[tuple[int, float]]] = {}
        for (name, budget), vals in grouped[t].items():
            rate = sum(vals) / len(vals)
            series.setdefault(name, []).append((budget, rate))
            avg_accum.setdefault((name, budget), []).append(rate)
        path = out / f"plot_{t}.svg"
        path.write_text(_svg_plot(f"{t}: success vs budget", series))
        written.append(path)
    avg_series: dict[str, list[tuple[int, float]]] = {}
    for (name, budget), rates in avg_accum.items():
        avg_series.setdefault(name, []).append((budget, sum(rates) / len(rates)))
    path = out / "plot_average.svg"
    path.write_text(_svg_plot("average: success vs budget", avg_series))
    written.append(path)
    return written
