"""Trajectory-level test-time search for in-context robot imitation.

Complete end-effector trajectories are proposed by a policy backend,
executed in a deterministic tabletop micro-simulator, scored by a
subtask-progress evaluator, and refined via PUCB Monte Carlo tree search
with archive-retrieved demonstrations and step-level feedback.
"""

from .archive import Archive, ArchiveEntry, RetrievalMode, image_distance
from .feedback import AnnotatedTrajectory, FeedbackBlock, FeedbackMode, annotate, render_feedback
from .harness import ExperimentConfig, ResultRow, emit_plots, run_experiment, summarize
from .policy import NoiseConfig, ProposalRequest, RemoteConfig, RemotePolicy, ScriptedPolicy
from .scorer import OracleScorer, ProgressReport, SubtaskList, sample_frames, score
from .search import SearchConfig, SearchResult, pucb_select, run_breadth, run_depth, run_mcts
from .rendering import render
from .simulator import Rollout, SimEnv, SimState, execute, reset, verify
from .tasks import TASKS, TaskSpec, get_task, template_trajectory
from .trajectory import (
    EndEffectorState,
    Gripper,
    InitialState,
    Trajectory,
    encode_trajectory_text,
    parse_trajectory_text,
)

__version__ = "0.1.0"
