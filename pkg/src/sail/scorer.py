"""Subtask decomposition and per-frame progress scoring of rollouts.

A rollout is scored by walking N uniformly sampled frames in order while
tracking the current subtask m (1-based). The backend reports a completion
percentage for the current subtask against the frame where that subtask
started; when it reaches 100 the subtask is marked complete and the same
frame is re-queried for the next one, so several subtasks may finish on a
single frame. Each sampled frame f contributes

    r(f) = ((m(f) - 1) + pct(f) / 100) / M

and the scalar reward is the mean of r over the sampled frames. If the
rollout ends with m <= M the trajectory failed at that subtask.

The oracle backend computes percentages from ground-truth simulator state
via the task's canonical subtask definitions, standing in for a learned
video scorer behind the same interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .simulator import Rollout, SimState
from .tasks import TaskSpec, UnknownSubtask


class BackendFailure(Exception):
    """A scorer backend failed to produce a usable answer."""


class EmptyDecomposition(ValueError):
    """Decomposition returned no subtasks."""


@dataclass(frozen=True, slots=True)
class SubtaskList:
    """Ordered natural-language subtasks; indices run 1..M."""

    task: str
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))
        if not self.labels:
            raise EmptyDecomposition(f"no subtasks for task {self.task!r}")

    @property
    def m_total(self) -> int:
        return len(self.labels)

    def label(self, index: int) -> str:
        """Label for a 1-based subtask index."""
        return self.labels[index - 1]


@dataclass(frozen=True, slots=True)
class ProgressReport:
    """Sampled per-frame progress and the scalar node reward."""

    frame_indices: tuple[int, ...]
    subtask_index: tuple[int, ...]
    pct: tuple[int, ...]
    r: tuple[float, ...]
    reward: float
    failed_at: int | None
    verified_success: bool

    def log_lines(self) -> list[str]:
        lines = [
            f"frame={f} m={m} pct={p} r={r:.6f}"
            for f, m, p, r in zip(self.frame_indices, self.subtask_index, self.pct, self.r)
        ]
        lines.append(f"reward={self.reward:.6f} failed_at={self.failed_at} verified={self.verified_success}")
        return lines


class ScorerBackend(Protocol):
    def decompose(self, goal_text: str, demo_rollout: Rollout) -> SubtaskList: ...

    def completion_pct(self, subtask_label: str, start: SimState, current: SimState) -> int: ...


def oracle_completion_pct(subtask_label: str, start: SimState, current: SimState, task: TaskSpec) -> int:
    """Ground-truth completion percentage for one subtask, clamped to [0, 100]."""
    sub = task.subtask(subtask_label)  # raises UnknownSubtask
    raw = sub.progress(start, current, task)
    return int(min(100.0, max(0.0, math.floor(raw + 0.5))))


class OracleScorer:
    """Deterministic scoring backend computed from simulator ground truth."""

    def __init__(self, task: TaskSpec):
        self.task = task

    def decompose(self, goal_text: str, demo_rollout: Rollout) -> SubtaskList:
        return SubtaskList(task=self.task.task, labels=self.task.subtask_labels)

    def completion_pct(self, subtask_label: str, start: SimState, current: SimState) -> int:
        return oracle_completion_pct(subtask_label, start, current, self.task)


def sample_frames(rollout: Rollout, n: int) -> list[int]:
    """Uniform frame indices, first and last included; duplicates when short.

    With n == 1 only the final frame is sampled (the single slot goes to the
    frame that decides the outcome).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    total = len(rollout.frames)
    if total < 1:
        raise ValueError("rollout has no frames")
    if n == 1:
        return [total - 1]
    return [int(math.floor(x + 0.5)) for x in np.linspace(0.0, total - 1, n)]


def decompose_once(
    task: TaskSpec,
    demo: Rollout,
    backend: ScorerBackend,
    cache: dict[str, SubtaskList] | None = None,
) -> SubtaskList:
    """Backend decomposition, computed once per task and cached for the run."""
    if cache is not None and task.task in cache:
        return cache[task.task]
    if not demo.verified_success:
        raise ValueError("decomposition demo must be a verified success")
    subtasks = backend.decompose(task.goal_text, demo)
    if subtasks.m_total < 1:
        raise EmptyDecomposition(task.task)
    if cache is not None:
        cache[task.task] = subtasks
    return subtasks


def _clamp_pct(value) -> int:
    return int(min(100, max(0, int(value))))


def score(rollout: Rollout, subtasks: SubtaskList, backend: ScorerBackend, n: int = 50) -> ProgressReport:
    """Sequential progress scoring over n sampled frames."""
    frames = rollout.frames
    indices = sample_frames(rollout, n)
    m_total = subtasks.m_total
    m = 1
    start_ref = frames[0]
    rec_m: list[int] = []
    rec_pct: list[int] = []
    rec_r: list[float] = []
    for f in indices:
        cur = frames[f]
        if m > m_total:
            this_m, this_pct = m_total, 100
        else:
            this_pct = _clamp_pct(backend.completion_pct(subtasks.label(m), start_ref, cur))
            this_m = m
            while this_pct >= 100:
                m += 1
                start_ref = cur
                if m > m_total:
                    this_m, this_pct = m_total, 100
                    break
                this_pct = _clamp_pct(backend.completion_pct(subtasks.label(m), start_ref, cur))
                this_m = m
        rec_m.append(this_m)
        rec_pct.append(this_pct)
        rec_r.append(((this_m - 1) + this_pct / 100.0) / m_total)
    return ProgressReport(
        frame_indices=tuple(indices),
        subtask_index=tuple(rec_m),
        pct=tuple(rec_pct),
        r=tuple(rec_r),
        reward=float(np.mean(rec_r)),
        failed_at=m if m <= m_total else None,
        verified_success=rollout.verified_success,
    )


def validate_report(report: ProgressReport, m_total: int, tol: float = 1e-9) -> None:
    """Assert the per-frame score identity and reward aggregation."""
    prev = 0
    for m, pct, r in zip(report.subtask_index, report.pct, report.r):
        if m < prev:
            raise AssertionError("subtask index decreased")
        prev = m
        expected = ((m - 1) + pct / 100.0) / m_total
        if abs(expected - r) > tol:
            raise AssertionError(f"score identity broken: {r} vs {expected}")
    if abs(report.reward - float(np.mean(report.r))) > tol:
        raise AssertionError("reward is not the mean of r")


__all__ = [
    "BackendFailure",
    "EmptyDecomposition",
    "OracleScorer",
    "ProgressReport",
    "ScorerBackend",
    "SubtaskList",
    "UnknownSubtask",
    "decompose_once",
    "oracle_completion_pct",
    "sample_frames",
    "score",
    "validate_report",
]
