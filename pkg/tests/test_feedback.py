from __future__ import annotations

import numpy as np
import pytest

from conftest import golden_trajectory
from sail.feedback import (
    REFINEMENT_INSTRUCTION,
    Annotation,
    AnnotatedTrajectory,
    FeedbackMode,
    MismatchedProvenance,
    annotate,
    has_step_scores,
    parse_failed_at,
    parse_step_scores,
    parse_step_subtasks,
    render_feedback,
    strip_annotations,
)
from sail.scorer import OracleScorer, score
from sail.simulator import execute, reset
from sail.tasks import get_task
from sail.trajectory import EndEffectorState, Trajectory, encode_trajectory_text, parse_trajectory_text


def _scored(task_name, seed=3, n=50):
    spec = get_task(task_name)
    traj, state, _ = golden_trajectory(task_name, seed)
    rollout = execute(spec, state, traj)
    backend = OracleScorer(spec)
    subs = backend.decompose(spec.goal_text, rollout)
    report = score(rollout, subs, backend, n)
    return spec, traj, rollout, subs, report


def test_annotate_maps_frames_to_waypoints(task_name):
    spec, traj, rollout, subs, report = _scored(task_name)
    annotated = annotate(traj, report, rollout, subs)
    assert all(0 <= idx < len(traj) for idx in annotated.annotations)
    assert annotated.final_reward == report.reward
    assert annotated.failed_at is None
    # last-frame annotation lands on the last waypoint with full progress
    assert annotated.annotations[len(traj) - 1].score == 1.0


def test_annotate_single_waypoint_targets_index_zero():
    spec = get_task("pick_place")
    state, _, _ = reset(spec, 0)
    traj = Trajectory((state.robot,))
    rollout = execute(spec, state, traj)
    backend = OracleScorer(spec)
    subs = backend.decompose(spec.goal_text, execute(spec, *_demo(spec)))
    report = score(rollout, subs, backend, 10)
    annotated = annotate(traj, report, rollout, subs)
    assert set(annotated.annotations) == {0}


def _demo(spec):
    traj, state, _ = golden_trajectory(spec.task, 3)
    return state, traj


def test_annotate_provenance_checks():
    spec, traj, rollout, subs, report = _scored("pick_place")
    other = Trajectory((EndEffectorState(position=(0, 0, 0.1)),))
    with pytest.raises(MismatchedProvenance):
        annotate(other, report, rollout, subs)


def test_step_level_rendering_and_strip(task_name):
    spec, traj, rollout, subs, report = _scored(task_name)
    annotated = annotate(traj, report, rollout, subs)
    block = render_feedback(annotated, rollout, FeedbackMode.STEP_LEVEL)
    assert REFINEMENT_INSTRUCTION in block.text
    assert "score=1.00" in block.text
    stripped = strip_annotations(block.text)
    assert stripped == encode_trajectory_text(traj)
    reparsed = parse_trajectory_text(block.text)
    assert len(reparsed) == len(traj)


def test_step_level_failed_at_note():
    spec = get_task("pick_place")
    state, _, _ = reset(spec, 1)
    noop = Trajectory((state.robot,))
    rollout = execute(spec, state, noop)
    backend = OracleScorer(spec)
    subs = backend.decompose(spec.goal_text, execute(spec, *_demo(spec)))
    report = score(rollout, subs, backend, 10)
    annotated = annotate(noop, report, rollout, subs)
    block = render_feedback(annotated, rollout, FeedbackMode.STEP_LEVEL)
    assert "failed_at=reach" in block.text
    assert parse_failed_at(block.text) == "reach"


def test_score_suffix_formatting():
    traj = Trajectory((EndEffectorState(position=(0.0, 0.0, 0.1)),) * 5)
    annotated = AnnotatedTrajectory(
        trajectory=traj,
        annotations={4: Annotation(score=0.375, subtask="transport")},
        failed_at=None,
        final_reward=0.375,
    )
    lines = []
    for i, wp in enumerate(traj):
        from sail.trajectory import encode_waypoint

        lines.append(encode_waypoint(i, wp))
    block_lines = [l for l in render_feedback(annotated, _rollout_for(traj), FeedbackMode.STEP_LEVEL).text.splitlines()]
    assert block_lines[4].endswith("score=0.38 subtask=transport")
    assert block_lines[0] == lines[0]


def _rollout_for(traj):
    spec = get_task("pick_place")
    state, _, _ = reset(spec, 0)
    return execute(spec, state, traj)


def test_final_score_mode():
    spec, traj, rollout, subs, report = _scored("pick_place")
    annotated = annotate(traj, report, rollout, subs)
    block = render_feedback(annotated, rollout, FeedbackMode.FINAL_SCORE)
    score_lines = [l for l in block.text.splitlines() if l.startswith("final_score=")]
    assert score_lines == [f"final_score={report.reward:.3f}"]
    assert "score=" not in block.text.splitlines()[0]


def test_trajectory_only_round_trips():
    spec, traj, rollout, subs, report = _scored("drawer_open")
    annotated = annotate(traj, report, rollout, subs)
    block = render_feedback(annotated, rollout, FeedbackMode.TRAJECTORY_ONLY)
    assert block.text == encode_trajectory_text(traj)
    assert block.images == ()


def test_image_modes_bounded_by_t(task_name):
    spec, traj, rollout, subs, report = _scored(task_name)
    annotated = annotate(traj, report, rollout, subs)
    img_only = render_feedback(annotated, rollout, FeedbackMode.IMAGE_ONLY)
    assert img_only.text == ""
    assert 1 <= len(img_only.images) <= len(traj)
    assert all(im.shape == (128, 128, 3) for im in img_only.images)
    both = render_feedback(annotated, rollout, FeedbackMode.IMAGE_AND_TRAJECTORY)
    assert both.text == encode_trajectory_text(traj)
    assert len(both.images) == len(img_only.images)
    assert "score=" not in both.text


def test_mode_outputs_deterministic(task_name):
    spec, traj, rollout, subs, report = _scored(task_name)
    annotated = annotate(traj, report, rollout, subs)
    for mode in FeedbackMode:
        a = render_feedback(annotated, rollout, mode)
        b = render_feedback(annotated, rollout, mode)
        assert a.text == b.text
        assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))


def test_annotation_parsers():
    spec, traj, rollout, subs, report = _scored("hand_over")
    annotated = annotate(traj, report, rollout, subs)
    text = render_feedback(annotated, rollout, FeedbackMode.STEP_LEVEL).text
    scores = parse_step_scores(text)
    labels = parse_step_subtasks(text)
    assert len(scores) == len(labels) == len(traj)
    assert has_step_scores(text)
    assert not has_step_scores(encode_trajectory_text(traj))
    for idx, ann in annotated.annotations.items():
        assert scores[idx] == pytest.approx(ann.score, abs=0.005)
        assert labels[idx] == ann.subtask
