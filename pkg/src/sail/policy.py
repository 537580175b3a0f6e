"""Trajectory proposal backends.

`ScriptedPolicy` is the deterministic experimental workhorse: it builds the
task's template trajectory from the observed keypoints and perturbs it with
Gaussian noise drawn from a counter-based stream keyed on
(seed, attempt, child). Refinement is modeled explicitly:

* with step-level feedback, waypoints whose annotated score clears the keep
  threshold (75th percentile of the annotations, but at least 0.5 absolute)
  are copied verbatim from the parent; the rest are re-templated and
  re-perturbed with sigma shrunk by 0.7 per refinement depth (floor 2 mm);
* with any other feedback modality the whole trajectory is re-drawn with a
  uniform 0.9 sigma decay per attempt;
* imitation quality degrades with demonstration relevance: the starting
  sigma grows with the keypoint distance between the retrieved demo's scene
  and the current one (and shrinks with refinement like the rest), so
  retrieving a closer demonstration genuinely helps.

`RemotePolicy` adapts any model served over HTTP: it assembles the prompt
(goal, encoded initial state, K demo blocks, feedback block, output-format
instruction), POSTs `{"prompt": ..., "images": [...]}` to `<endpoint>/propose`,
and parses `{"text": ...}` from the response, retrying with the parse error
appended when the output does not scan.
"""

from __future__ import annotations

import base64
import io
import logging
import math
import os
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import rng as _rng
from .feedback import (
    FeedbackBlock,
    has_step_scores,
    parse_failed_at,
    parse_step_scores,
    parse_step_subtasks,
)
from .tasks import TaskSpec, template_waypoints
from .trajectory import (
    CodecError,
    EndEffectorState,
    InitialState,
    Trajectory,
    encode_initial_state_text,
    parse_keypoints_text,
    parse_trajectory_text,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class NoiseConfig:
    """Stochastic-refinement knobs for the scripted proposer."""

    sigma0: float = 0.03
    step_decay: float = 0.7
    uniform_decay: float = 0.9
    sigma_floor: float = 0.002
    keep_quantile: float = 75.0
    keep_floor: float = 0.5
    demo_gain: float = 0.15
    demo_cap: float = 0.15


@dataclass(frozen=True, slots=True)
class ProposalRequest:
    """Everything a backend may condition on for one proposal."""

    initial: InitialState
    demos: tuple[tuple[str, str], ...]  # (trajectory text, initial-state text)
    feedback: FeedbackBlock | None
    task_goal: str
    attempt_index: int
    child_index: int = 0


class PolicyBackend(Protocol):
    def propose(self, req: ProposalRequest) -> Trajectory: ...


def _demo_scene_distance(req: ProposalRequest) -> float:
    """Mean matched-keypoint displacement to the nearest retrieved demo scene."""
    best: float | None = None
    for _, init_text in req.demos:
        demo_kps = parse_keypoints_text(init_text)
        shared = [l for l in req.initial.keypoints if l in demo_kps]
        if not shared:
            continue
        d = float(
            np.mean([math.dist(req.initial.keypoints[l], demo_kps[l]) for l in shared])
        )
        best = d if best is None else min(best, d)
    return best if best is not None else 0.0


def scripted_propose(
    req: ProposalRequest,
    rng_stream: np.random.Generator,
    noise: NoiseConfig,
    task: TaskSpec,
) -> Trajectory:
    """Deterministic template-plus-noise proposal with explicit refinement."""
    template = template_waypoints(task, req.initial.keypoints)
    t = len(template)
    step_feedback = req.feedback is not None and has_step_scores(req.feedback.text)
    v = max(0, req.attempt_index)
    base = noise.sigma0 + noise.demo_gain * min(_demo_scene_distance(req), noise.demo_cap)
    if req.feedback is None:
        sigma_eff = base
    elif step_feedback:
        sigma_eff = max(base * noise.step_decay**v, noise.sigma_floor)
    else:
        sigma_eff = max(base * noise.uniform_decay**v, noise.sigma_floor)

    kept: dict[int, EndEffectorState] = {}
    if step_feedback:
        try:
            parent = parse_trajectory_text(req.feedback.text)
        except CodecError:
            parent = None
        if parent is not None and len(parent) == t:
            scores = parse_step_scores(req.feedback.text)
            labels = parse_step_subtasks(req.feedback.text)
            failed_at = parse_failed_at(req.feedback.text)
            values = [s for s in scores if s is not None]
            if values:
                threshold = max(float(np.percentile(values, noise.keep_quantile)), noise.keep_floor)
                for i, s in enumerate(scores[:t]):
                    if s is None or s < threshold:
                        continue
                    if failed_at is not None and labels[i] == failed_at:
                        continue  # the failure site is exactly what must change
                    kept[i] = parent[i]

    waypoints = []
    for i, (pos, grip) in enumerate(template):
        if i in kept:
            waypoints.append(kept[i])
            continue
        jitter = rng_stream.normal(0.0, sigma_eff, 3) if sigma_eff > 0 else np.zeros(3)
        waypoints.append(
            EndEffectorState(position=tuple(np.asarray(pos) + jitter), gripper=grip)
        )
    return Trajectory(tuple(waypoints))


class ScriptedPolicy:
    """PolicyBackend wrapper: one instance per (task, seed) search run."""

    def __init__(self, task: TaskSpec, seed: int, noise: NoiseConfig | None = None, run_key: int = 0):
        self.task = task
        self.seed = seed
        self.noise = noise or NoiseConfig()
        self.run_key = run_key

    def propose(self, req: ProposalRequest) -> Trajectory:
        gen = _rng.stream(self.run_key, "scripted", self.seed, req.attempt_index, req.child_index)
        return scripted_propose(req, gen, self.noise, self.task)


# --- remote adapter -------------------------------------------------------

WAYPOINT_GRAMMAR = "W <idx>: pos=[<x_mm>,<y_mm>,<z_mm>] quat=[<w>,<x>,<y>,<z>] grip=<OPEN|CLOSE>"


class TransportError(Exception):
    """The remote endpoint could not be reached or answered abnormally."""


class ParseExhausted(Exception):
    """Every retry produced unparseable output."""

    def __init__(self, last_error: CodecError):
        super().__init__(f"no parseable trajectory after retries: {last_error}")
        self.last_error = last_error


@dataclass(frozen=True, slots=True)
class RemoteConfig:
    endpoint: str
    timeout_s: float = 120.0
    max_retries: int = 2
    max_concurrency: int = 4
    auth_token_env: str = "SAIL_API_TOKEN"


def build_prompt(req: ProposalRequest) -> str:
    parts = [f"Task: {req.task_goal}", "", "Initial state:", encode_initial_state_text(req.initial)]
    for i, (traj_text, init_text) in enumerate(req.demos, start=1):
        parts += [
            "",
            f"Demonstration {i} initial state:",
            init_text,
            f"Demonstration {i} trajectory:",
            traj_text,
        ]
    if req.feedback is not None and req.feedback.text:
        parts += ["", "Feedback on the previous attempt:", req.feedback.text]
    parts += [
        "",
        "Propose a complete trajectory for the current initial state.",
        f"Output one line per waypoint, exactly: {WAYPOINT_GRAMMAR}",
        "Output only waypoint lines.",
    ]
    return "\n".join(parts)


def _encode_images(feedback: FeedbackBlock | None) -> list[str]:
    if feedback is None or not feedback.images:
        return []
    from PIL import Image

    encoded = []
    for img in feedback.images:
        buf = io.BytesIO()
        Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
        encoded.append(base64.b64encode(buf.getvalue()).decode("ascii"))
    return encoded


def remote_propose(req: ProposalRequest, cfg: RemoteConfig, session=None) -> Trajectory:
    """One proposal from a remote model; retries on unparseable output."""
    import requests

    session = session or requests
    headers = {}
    token = os.environ.get(cfg.auth_token_env, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    prompt = build_prompt(req)
    images = _encode_images(req.feedback)
    last_error: CodecError | None = None
    for attempt in range(cfg.max_retries + 1):
        body = {"prompt": prompt, "images": images}
        logger.debug("remote propose attempt %d -> %s/propose", attempt + 1, cfg.endpoint)
        try:
            resp = session.post(
                f"{cfg.endpoint}/propose", json=body, headers=headers, timeout=cfg.timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(f"POST {cfg.endpoint}/propose failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"endpoint returned HTTP {resp.status_code}")
        try:
            text = resp.json()["text"]
        except (ValueError, KeyError) as exc:
            raise TransportError(f"malformed response body: {exc}") from exc
        try:
            return parse_trajectory_text(text)
        except CodecError as exc:
            last_error = exc
            logger.debug("parse failure on attempt %d: %s", attempt + 1, exc)
            prompt = (
                build_prompt(req)
                + f"\nThe previous response failed to parse: {exc}. Reply with waypoint lines only."
            )
    assert last_error is not None
    raise ParseExhausted(last_error)


class RemotePolicy:
    """PolicyBackend over a persistent HTTP session."""

    def __init__(self, cfg: RemoteConfig):
        import requests

        self.cfg = cfg
        self._session = requests.Session()

    def propose(self, req: ProposalRequest) -> Trajectory:
        return remote_propose(req, self.cfg, session=self._session)
