"""Task definitions for the tabletop micro-simulator.

Three tasks cover the scorer and verifier code paths at desk scale:

* ``pick_place``  - grasp a block and release it into a bowl (containment),
* ``drawer_open`` - grasp a handle and pull the drawer past a threshold
  (articulated, prismatic),
* ``hand_over``   - grasp a block and present it at an elevated target zone
  (free-space placement).

Each task carries its spawn ranges, verifier parameters, an ordered list of
subtasks with ground-truth progress functions (the oracle scorer calls
these), and a noise-free template trajectory builder used both for golden
demonstrations and as the scripted policy's backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Mapping

from .trajectory import EndEffectorState, Gripper, Vec3

if TYPE_CHECKING:
    from .simulator import SimState

# Shared geometry (meters).
WORKSPACE_MIN: Vec3 = (-0.32, -0.32, 0.0)
WORKSPACE_MAX: Vec3 = (0.32, 0.32, 0.35)
STEP_SIZE = 0.01
GRASP_RADIUS = 0.02  # horizontal reach of the closing gripper
GRASP_SPAN_Z = 0.05  # vertical window of the fingers
BLOCK_HALF = 0.015
CONTAINER_RADIUS = 0.05
CONTAINER_RIM = 0.035
HOVER_Z = 0.10
HOME_POSE: Vec3 = (0.0, -0.26, 0.18)
DRAWER_AXIS: Vec3 = (0.0, -1.0, 0.0)
DRAWER_MAX_EXTENSION = 0.20
DRAWER_OPEN_THRESHOLD = 0.12
DRAWER_PULL = 0.15
HANDOVER_TOLERANCE = 0.03
HANDOVER_LIFT_Z = 0.12
TARGET_RADIUS = 0.04
TARGET_Z = 0.15


class ObjectKind(Enum):
    BLOCK = "block"
    CONTAINER = "container"
    HANDLE = "handle"
    LID = "lid"


GRASPABLE_KINDS = (ObjectKind.BLOCK, ObjectKind.HANDLE, ObjectKind.LID)


class UnknownTask(KeyError):
    """Task id not present in the registry."""


class UnknownSubtask(KeyError):
    """Subtask label not defined for the task."""


class MissingKeypoint(KeyError):
    """A template requires a keypoint the initial state does not provide."""


ProgressFn = Callable[["SimState", "SimState", "TaskSpec"], float]


@dataclass(frozen=True, slots=True)
class SubtaskDef:
    label: str
    progress: ProgressFn


@dataclass(frozen=True, slots=True)
class SpawnRange:
    """Axis-aligned rectangle for an object's (x, y) spawn, fixed z."""

    x: tuple[float, float]
    y: tuple[float, float]
    z: float


@dataclass(frozen=True, slots=True)
class TaskSpec:
    task: str
    goal_text: str
    spawns: Mapping[str, SpawnRange]
    kinds: Mapping[str, ObjectKind]
    canonical_subtasks: tuple[SubtaskDef, ...]
    reach_label: str
    template: Callable[[Mapping[str, Vec3]], tuple[tuple[Vec3, Gripper], ...]] = field(repr=False)
    verifier: Callable[["SimState"], bool] = field(repr=False, default=lambda s: False)

    def subtask(self, label: str) -> SubtaskDef:
        for sub in self.canonical_subtasks:
            if sub.label == label:
                return sub
        raise UnknownSubtask(label)

    @property
    def subtask_labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.canonical_subtasks)


def _dist(a: Vec3, b: Vec3) -> float:
    return math.dist(a, b)


def _dist_xy(a: Vec3, b: Vec3) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _within_grasp(ee: Vec3, obj: Vec3) -> bool:
    return _dist_xy(ee, obj) <= GRASP_RADIUS and abs(ee[2] - obj[2]) <= GRASP_SPAN_Z


def _ratio_pct(remaining: float, baseline: float) -> float:
    if baseline <= 1e-9:
        return 100.0
    return 100.0 * (1.0 - remaining / baseline)


def _reach_pct(start: "SimState", cur: "SimState", spec: "TaskSpec",
               done_later: bool) -> float:
    obj = cur.objects[spec.reach_label]
    if obj.held or done_later or _within_grasp(cur.robot.position, obj.position):
        return 100.0
    d0 = _dist(start.robot.position, start.objects[spec.reach_label].position)
    return _ratio_pct(_dist(cur.robot.position, obj.position), d0)


# --- pick_place ---------------------------------------------------------

def _pp_in_bowl(state: "SimState") -> bool:
    block = state.objects["block"]
    bowl = state.objects["bowl"]
    return (
        _dist_xy(block.position, bowl.position) <= CONTAINER_RADIUS
        and block.position[2] < bowl.position[2] + CONTAINER_RIM
    )


def _pp_over_bowl(state: "SimState") -> bool:
    block = state.objects["block"]
    return block.held and _dist_xy(block.position, state.objects["bowl"].position) <= CONTAINER_RADIUS


def _pp_reach(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    return _reach_pct(start, cur, spec, done_later=_pp_in_bowl(cur))


def _pp_grasp(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    return 100.0 if cur.objects["block"].held or _pp_in_bowl(cur) else 0.0


def _pp_transport(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    if _pp_in_bowl(cur) or _pp_over_bowl(cur):
        return 100.0
    d0 = _dist_xy(start.objects["block"].position, start.objects["bowl"].position)
    return _ratio_pct(_dist_xy(cur.objects["block"].position, cur.objects["bowl"].position), d0)


def _pp_release(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    return 100.0 if _pp_in_bowl(cur) else 0.0


def _pp_template(kp: Mapping[str, Vec3]) -> tuple[tuple[Vec3, Gripper], ...]:
    block, bowl = kp["block"], kp["bowl"]
    drop_z = 0.05
    return (
        ((block[0], block[1], HOVER_Z), Gripper.OPEN),
        (block, Gripper.OPEN),
        (block, Gripper.CLOSE),
        ((block[0], block[1], HOVER_Z), Gripper.CLOSE),
        ((bowl[0], bowl[1], HOVER_Z), Gripper.CLOSE),
        ((bowl[0], bowl[1], drop_z), Gripper.CLOSE),
        ((bowl[0], bowl[1], drop_z), Gripper.OPEN),
    )


# --- drawer_open --------------------------------------------------------

def _do_open(state: "SimState") -> bool:
    return state.drawer_extension >= DRAWER_OPEN_THRESHOLD


def _do_reach(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    return _reach_pct(start, cur, spec, done_later=_do_open(cur))


def _do_grasp(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    return 100.0 if cur.objects["handle"].held or _do_open(cur) else 0.0


def _do_pull(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    if _do_open(cur):
        return 100.0
    gained = cur.drawer_extension - start.drawer_extension
    needed = DRAWER_OPEN_THRESHOLD - start.drawer_extension
    return _ratio_pct(needed - gained, needed)


def _do_template(kp: Mapping[str, Vec3]) -> tuple[tuple[Vec3, Gripper], ...]:
    handle = kp["handle"]
    pulled = tuple(handle[i] + DRAWER_PULL * DRAWER_AXIS[i] for i in range(3))
    return (
        ((handle[0], handle[1], handle[2] + 0.08), Gripper.OPEN),
        (handle, Gripper.OPEN),
        (handle, Gripper.CLOSE),
        (pulled, Gripper.CLOSE),
    )


# --- hand_over ----------------------------------------------------------

def _ho_at_target(state: "SimState") -> bool:
    return _dist(state.objects["block"].position, state.objects["target"].position) <= HANDOVER_TOLERANCE


def _ho_reach(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    return _reach_pct(start, cur, spec, done_later=_ho_at_target(cur))


def _ho_grasp(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    return 100.0 if cur.objects["block"].held or _ho_at_target(cur) else 0.0


def _ho_lift(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    z = cur.objects["block"].position[2]
    if z >= HANDOVER_LIFT_Z or _ho_at_target(cur):
        return 100.0
    z0 = start.objects["block"].position[2]
    if HANDOVER_LIFT_Z - z0 <= 1e-9:
        return 100.0
    return 100.0 * (z - z0) / (HANDOVER_LIFT_Z - z0)


def _ho_present(start: "SimState", cur: "SimState", spec: "TaskSpec") -> float:
    if _ho_at_target(cur):
        return 100.0
    d0 = _dist(start.objects["block"].position, start.objects["target"].position)
    return _ratio_pct(_dist(cur.objects["block"].position, cur.objects["target"].position), d0)


def _ho_template(kp: Mapping[str, Vec3]) -> tuple[tuple[Vec3, Gripper], ...]:
    block, target = kp["block"], kp["target"]
    return (
        ((block[0], block[1], HOVER_Z), Gripper.OPEN),
        (block, Gripper.OPEN),
        (block, Gripper.CLOSE),
        ((block[0], block[1], target[2]), Gripper.CLOSE),
        (target, Gripper.CLOSE),
    )


TASKS: dict[str, TaskSpec] = {
    "pick_place": TaskSpec(
        task="pick_place",
        goal_text="Pick up the block and place it inside the bowl.",
        spawns={
            "block": SpawnRange(x=(-0.22, -0.04), y=(-0.18, 0.18), z=BLOCK_HALF),
            "bowl": SpawnRange(x=(0.06, 0.22), y=(-0.18, 0.18), z=0.0),
        },
        kinds={"block": ObjectKind.BLOCK, "bowl": ObjectKind.CONTAINER},
        canonical_subtasks=(
            SubtaskDef("reach", _pp_reach),
            SubtaskDef("grasp", _pp_grasp),
            SubtaskDef("transport", _pp_transport),
            SubtaskDef("release", _pp_release),
        ),
        reach_label="block",
        template=_pp_template,
        verifier=_pp_in_bowl,
    ),
    "drawer_open": TaskSpec(
        task="drawer_open",
        goal_text="Grasp the drawer handle and pull the drawer open.",
        spawns={
            "handle": SpawnRange(x=(-0.18, 0.18), y=(0.02, 0.14), z=0.05),
        },
        kinds={"handle": ObjectKind.HANDLE},
        canonical_subtasks=(
            SubtaskDef("reach_handle", _do_reach),
            SubtaskDef("grasp_handle", _do_grasp),
            SubtaskDef("pull_open", _do_pull),
        ),
        reach_label="handle",
        template=_do_template,
        verifier=_do_open,
    ),
    "hand_over": TaskSpec(
        task="hand_over",
        goal_text="Pick up the block and present it at the elevated hand-over zone.",
        spawns={
            "block": SpawnRange(x=(-0.22, -0.04), y=(-0.18, 0.18), z=BLOCK_HALF),
            "target": SpawnRange(x=(0.06, 0.22), y=(-0.18, 0.18), z=TARGET_Z),
        },
        kinds={"block": ObjectKind.BLOCK, "target": ObjectKind.CONTAINER},
        canonical_subtasks=(
            SubtaskDef("reach", _ho_reach),
            SubtaskDef("grasp", _ho_grasp),
            SubtaskDef("lift", _ho_lift),
            SubtaskDef("handover", _ho_present),
        ),
        reach_label="block",
        template=_ho_template,
        verifier=_ho_at_target,
    ),
}


def get_task(task: str) -> TaskSpec:
    try:
        return TASKS[task]
    except KeyError:
        raise UnknownTask(task) from None


def template_waypoints(spec: TaskSpec, keypoints: Mapping[str, Vec3]) -> tuple[tuple[Vec3, Gripper], ...]:
    """The noise-free solution trajectory built from object keypoints."""
    for label in spec.spawns:
        if label not in keypoints:
            raise MissingKeypoint(f"{spec.task} needs keypoint {label!r}")
    return spec.template(keypoints)


def template_trajectory(spec: TaskSpec, keypoints: Mapping[str, Vec3]):
    from .trajectory import Trajectory

    return Trajectory(
        tuple(
            EndEffectorState(position=pos, gripper=grip)
            for pos, grip in template_waypoints(spec, keypoints)
        )
    )
