"""Waypoint-aligned feedback for trajectory refinement.

Sampled progress scores are mapped onto the waypoints that produced them
(via the rollout's frame -> waypoint schedule) to build an annotated
trajectory. The annotated trajectory renders into one of five prompt-block
modalities; the step-level block suffixes each annotated waypoint line with

    score=<0.00-1.00> subtask=<label>

followed by the failure note and the preserve/modify instruction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .scorer import ProgressReport, SubtaskList, sample_frames
from .simulator import Rollout
from .trajectory import Trajectory, encode_waypoint

REFINEMENT_INSTRUCTION = "Preserve high-scoring segments; modify low-scoring segments."


class MismatchedProvenance(ValueError):
    """The report, rollout, and trajectory do not belong together."""


class FeedbackMode(Enum):
    STEP_LEVEL = "step_level"
    FINAL_SCORE = "final_score"
    TRAJECTORY_ONLY = "trajectory_only"
    IMAGE_ONLY = "image_only"
    IMAGE_AND_TRAJECTORY = "image_and_trajectory"

    @classmethod
    def parse(cls, name: str) -> "FeedbackMode":
        return cls(name)


@dataclass(frozen=True, slots=True)
class Annotation:
    score: float
    subtask: str


@dataclass(frozen=True, slots=True)
class AnnotatedTrajectory:
    trajectory: Trajectory
    annotations: Mapping[int, Annotation]
    failed_at: str | None
    final_reward: float


@dataclass(frozen=True, slots=True)
class FeedbackBlock:
    """Rendered feedback: prompt text plus optional rollout images."""

    text: str
    images: tuple[np.ndarray, ...] = field(default=())


def annotate(traj: Trajectory, report: ProgressReport, rollout: Rollout, subtasks: SubtaskList) -> AnnotatedTrajectory:
    """Attach each sampled frame's (score, subtask) to its waypoint.

    Several frames can land on one waypoint; the latest frame wins, since
    progress within a waypoint is cumulative.
    """
    total = len(rollout.frames)
    if len(rollout.frame_waypoint) != total:
        raise MismatchedProvenance("frame_waypoint length does not match frames")
    if rollout.frame_waypoint[-1] != len(traj) - 1:
        raise MismatchedProvenance("rollout does not end on the trajectory's last waypoint")
    if report.frame_indices and max(report.frame_indices) >= total:
        raise MismatchedProvenance("report samples frames beyond the rollout")
    annotations: dict[int, Annotation] = {}
    for f, m, r in zip(report.frame_indices, report.subtask_index, report.r):
        annotations[rollout.frame_waypoint[f]] = Annotation(score=r, subtask=subtasks.label(m))
    failed_label = subtasks.label(report.failed_at) if report.failed_at is not None else None
    return AnnotatedTrajectory(
        trajectory=traj,
        annotations=annotations,
        failed_at=failed_label,
        final_reward=report.reward,
    )


def _trajectory_lines(annotated: AnnotatedTrajectory, with_scores: bool) -> list[str]:
    lines = []
    for i, wp in enumerate(annotated.trajectory):
        line = encode_waypoint(i, wp)
        ann = annotated.annotations.get(i) if with_scores else None
        if ann is not None:
            line += f" score={ann.score:.2f} subtask={ann.subtask}"
        lines.append(line)
    return lines


def _subsampled_images(rollout: Rollout, limit: int) -> tuple[np.ndarray, ...]:
    from .rendering import render

    count = min(limit, len(rollout.frames))
    indices = sorted(set(sample_frames(rollout, count)))
    return tuple(render(rollout.frames[i]) for i in indices)


def render_feedback(annotated: AnnotatedTrajectory, rollout: Rollout, mode: FeedbackMode) -> FeedbackBlock:
    """Render one feedback modality as a prompt block."""
    t = len(annotated.trajectory)
    if mode is FeedbackMode.STEP_LEVEL:
        lines = _trajectory_lines(annotated, with_scores=True)
        if annotated.failed_at is not None:
            lines.append(f"failed_at={annotated.failed_at}")
        lines.append(REFINEMENT_INSTRUCTION)
        return FeedbackBlock(text="\n".join(lines))
    if mode is FeedbackMode.FINAL_SCORE:
        lines = _trajectory_lines(annotated, with_scores=False)
        lines.append(f"final_score={annotated.final_reward:.3f}")
        return FeedbackBlock(text="\n".join(lines))
    if mode is FeedbackMode.TRAJECTORY_ONLY:
        return FeedbackBlock(text="\n".join(_trajectory_lines(annotated, with_scores=False)))
    if mode is FeedbackMode.IMAGE_ONLY:
        return FeedbackBlock(text="", images=_subsampled_images(rollout, t))
    if mode is FeedbackMode.IMAGE_AND_TRAJECTORY:
        return FeedbackBlock(
            text="\n".join(_trajectory_lines(annotated, with_scores=False)),
            images=_subsampled_images(rollout, t),
        )
    raise ValueError(f"unhandled feedback mode {mode}")


_SCORE_SUFFIX_RE = re.compile(r"\s+score=([0-9.]+)\s+subtask=(\S+)\s*$")
_WAYPOINT_PREFIX_RE = re.compile(r"^\s*W\s+\d+\s*:\s*pos=\[")


def strip_annotations(text: str) -> str:
    """Remove score/subtask suffixes from waypoint lines; drop other lines."""
    kept = []
    for line in text.splitlines():
        if _WAYPOINT_PREFIX_RE.match(line):
            kept.append(_SCORE_SUFFIX_RE.sub("", line))
    return "\n".join(kept)


def parse_step_scores(text: str) -> list[float | None]:
    """Per-waypoint-line annotation scores, None where a line is bare."""
    scores: list[float | None] = []
    for line in text.splitlines():
        if not _WAYPOINT_PREFIX_RE.match(line):
            continue
        match = _SCORE_SUFFIX_RE.search(line)
        scores.append(float(match.group(1)) if match else None)
    return scores


def parse_step_subtasks(text: str) -> list[str | None]:
    """Per-waypoint-line annotation subtask labels, aligned with scores."""
    labels: list[str | None] = []
    for line in text.splitlines():
        if not _WAYPOINT_PREFIX_RE.match(line):
            continue
        match = _SCORE_SUFFIX_RE.search(line)
        labels.append(match.group(2) if match else None)
    return labels


_FAILED_AT_RE = re.compile(r"^failed_at=(\S+)\s*$", re.MULTILINE)


def parse_failed_at(text: str) -> str | None:
    match = _FAILED_AT_RE.search(text)
    return match.group(1) if match else None


def has_step_scores(text: str) -> bool:
    return any(s is not None for s in parse_step_scores(text))
