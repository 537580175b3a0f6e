"""Deterministic kinematic tabletop simulator.

The end-effector moves in straight-line segments between waypoints at a fixed
step size, emitting one frame per step. Gripper commands apply at waypoint
arrival: CLOSE attaches the nearest graspable object within the grasp window,
OPEN detaches (a released block falls vertically to the table, or into a
container whose opening it is above, on an extra settle frame). A held HANDLE
drags the drawer along its axis. There are no dynamics and no collisions
beyond the table plane and the workspace clamp; infeasible motion is clamped,
never rejected.

Everything is a pure function of (task, seed, trajectory, config): repeated
runs are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import rng as _rng
from .tasks import (
    BLOCK_HALF,
    CONTAINER_RADIUS,
    DRAWER_AXIS,
    DRAWER_MAX_EXTENSION,
    GRASP_RADIUS,
    GRASP_SPAN_Z,
    GRASPABLE_KINDS,
    HOME_POSE,
    STEP_SIZE,
    WORKSPACE_MAX,
    WORKSPACE_MIN,
    ObjectKind,
    TaskSpec,
    get_task,
)
from .trajectory import EndEffectorState, Gripper, InitialState, Trajectory, Vec3


@dataclass(frozen=True, slots=True)
class ObjectState:
    position: Vec3
    kind: ObjectKind
    held: bool = False


@dataclass(frozen=True, slots=True)
class SimState:
    """Snapshot of the world: objects, robot, drawer extension, frame count."""

    objects: Mapping[str, ObjectState]
    robot: EndEffectorState
    drawer_extension: float = 0.0
    step_count: int = 0


class _FrameSeq(Sequence):
    """Lazy sequence of SimState snapshots backed by per-frame arrays."""

    def __init__(
        self,
        labels: tuple[str, ...],
        kinds: tuple[ObjectKind, ...],
        ee: np.ndarray,
        quat: np.ndarray,
        grip: np.ndarray,
        obj_pos: np.ndarray,
        held: np.ndarray,
        ext: np.ndarray,
    ):
        self._labels = labels
        self._kinds = kinds
        self._ee = ee
        self._quat = quat
        self._grip = grip
        self._obj_pos = obj_pos
        self._held = held
        self._ext = ext

    def __len__(self) -> int:
        return self._ee.shape[0]

    def __getitem__(self, i: int) -> SimState:
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        objects = {
            label: ObjectState(
                position=tuple(float(v) for v in self._obj_pos[l, i]),
                kind=self._kinds[l],
                held=bool(self._held[l, i]),
            )
            for l, label in enumerate(self._labels)
        }
        robot = EndEffectorState(
            position=tuple(float(v) for v in self._ee[i]),
            orientation=tuple(float(v) for v in self._quat[i]),
            gripper=Gripper.CLOSE if self._grip[i] else Gripper.OPEN,
        )
        return SimState(objects=objects, robot=robot, drawer_extension=float(self._ext[i]), step_count=i)

    def __iter__(self) -> Iterator[SimState]:
        return (self[i] for i in range(len(self)))


@dataclass(frozen=True, slots=True)
class Rollout:
    """Executed trajectory: frame snapshots aligned to waypoint indices."""

    frames: Sequence[SimState]
    frame_waypoint: tuple[int, ...]
    final: SimState
    verified_success: bool


def _clamp_workspace(points: np.ndarray) -> np.ndarray:
    return np.clip(points, np.asarray(WORKSPACE_MIN), np.asarray(WORKSPACE_MAX))


def reset(
    task: str | TaskSpec,
    seed: int,
    keypoint_noise: float = 0.0,
    run_key: int = 0,
) -> tuple[SimState, np.ndarray, InitialState]:
    """Seeded initial configuration, its rendered observation, and keypoints.

    Object positions are drawn uniformly from the task's spawn ranges by a
    counter-based stream keyed on (task, seed). Keypoints equal the ground
    truth plus optional Gaussian noise (default exact).
    """
    from .rendering import render

    spec = task if isinstance(task, TaskSpec) else get_task(task)
    gen = _rng.stream(run_key, "reset", spec.task, seed)
    objects: dict[str, ObjectState] = {}
    for label, spawn in spec.spawns.items():
        x = gen.uniform(*spawn.x)
        y = gen.uniform(*spawn.y)
        objects[label] = ObjectState(position=(float(x), float(y), spawn.z), kind=spec.kinds[label])
    robot = EndEffectorState(position=HOME_POSE, gripper=Gripper.OPEN)
    state = SimState(objects=objects, robot=robot, drawer_extension=0.0, step_count=0)
    keypoints: dict[str, Vec3] = {label: obj.position for label, obj in objects.items()}
    if keypoint_noise > 0.0:
        noise_gen = _rng.stream(run_key, "kpnoise", spec.task, seed)
        keypoints = {
            label: tuple(np.asarray(pos) + noise_gen.normal(0.0, keypoint_noise, 3))
            for label, pos in keypoints.items()
        }
    initial = InitialState(keypoints=keypoints, robot=robot)
    return state, render(state), initial


def execute(task: str | TaskSpec, state: SimState, traj: Trajectory) -> Rollout:
    """Run the waypoints from `state` and capture every interpolation frame."""
    spec = task if isinstance(task, TaskSpec) else get_task(task)
    labels = tuple(state.objects.keys())
    kinds = tuple(state.objects[l].kind for l in labels)
    n_obj = len(labels)

    ee_frames: list[np.ndarray] = [np.asarray(state.robot.position, dtype=float)]
    quat_frames: list[np.ndarray] = [np.asarray(state.robot.orientation, dtype=float)]
    grip_frames: list[int] = [1 if state.robot.gripper is Gripper.CLOSE else 0]
    obj_frames: list[np.ndarray] = [
        np.asarray([state.objects[l].position for l in labels], dtype=float).reshape(n_obj, 3)
    ]
    held_frames: list[np.ndarray] = [np.asarray([state.objects[l].held for l in labels], dtype=bool)]
    ext_frames: list[float] = [state.drawer_extension]
    frame_wp: list[int] = [0]

    axis = np.asarray(DRAWER_AXIS)
    cur_ee = ee_frames[0].copy()
    cur_quat = quat_frames[0].copy()
    cur_grip = grip_frames[0]
    cur_obj = obj_frames[0].copy()
    cur_held = held_frames[0].copy()
    cur_ext = ext_frames[0]
    held_idx = int(np.argmax(cur_held)) if cur_held.any() else -1
    held_offset = cur_obj[held_idx] - cur_ee if held_idx >= 0 else np.zeros(3)
    handle_base = {
        l: cur_obj[i] - cur_ext * axis
        for i, l in enumerate(labels)
        if kinds[i] is ObjectKind.HANDLE
    }

    def _append(ee, quat, grip, obj, held, ext, wp):
        ee_frames.append(ee)
        quat_frames.append(quat)
        grip_frames.append(grip)
        obj_frames.append(obj)
        held_frames.append(held)
        ext_frames.append(ext)
        frame_wp.append(wp)

    for wp_idx, wp in enumerate(traj):
        target = _clamp_workspace(np.asarray(wp.position, dtype=float))
        dist = float(np.linalg.norm(target - cur_ee))
        n_steps = max(1, math.ceil(dist / STEP_SIZE - 1e-12))
        fractions = np.arange(1, n_steps + 1, dtype=float) / n_steps
        seg = cur_ee + fractions[:, None] * (target - cur_ee)
        wp_quat = np.asarray(wp.orientation, dtype=float)
        wp_grip = 1 if wp.gripper is Gripper.CLOSE else 0
        for j in range(n_steps):
            ee_j = seg[j]
            arrival = j == n_steps - 1
            obj_j = cur_obj.copy()
            if held_idx >= 0:
                if kinds[held_idx] is ObjectKind.HANDLE:
                    delta = float(np.dot(ee_j - cur_ee, axis))
                    cur_ext = min(max(cur_ext + delta, 0.0), DRAWER_MAX_EXTENSION)
                    obj_j[held_idx] = handle_base[labels[held_idx]] + cur_ext * axis
                else:
                    obj_j[held_idx] = ee_j + held_offset
            cur_ee = ee_j
            cur_obj = obj_j
            grip_j = wp_grip if arrival else cur_grip
            quat_j = wp_quat if arrival else cur_quat
            _append(ee_j, quat_j, grip_j, obj_j.copy(), cur_held.copy(), cur_ext, wp_idx)
        cur_quat = wp_quat

        # Gripper command applies at arrival.
        if wp_grip == 1 and held_idx < 0:
            best = None
            for i in range(n_obj):
                if kinds[i] not in GRASPABLE_KINDS:
                    continue
                dxy = math.hypot(cur_obj[i, 0] - cur_ee[0], cur_obj[i, 1] - cur_ee[1])
                dz = abs(cur_obj[i, 2] - cur_ee[2])
                if dxy <= GRASP_RADIUS and dz <= GRASP_SPAN_Z:
                    d3 = float(np.linalg.norm(cur_obj[i] - cur_ee))
                    if best is None or d3 < best[0]:
                        best = (d3, i)
            if best is not None:
                held_idx = best[1]
                cur_held = cur_held.copy()
                cur_held[held_idx] = True
                held_offset = cur_obj[held_idx] - cur_ee
                held_frames[-1] = cur_held.copy()
                # The closing grip settles the object onto the gripper axis,
                # one step-bounded move per frame so nothing teleports.
                if kinds[held_idx] is not ObjectKind.HANDLE:
                    gap = float(np.linalg.norm(held_offset))
                    while gap > 1e-12:
                        shrink = max(gap - STEP_SIZE, 0.0)
                        held_offset = held_offset * (shrink / gap) if gap > 0 else held_offset * 0.0
                        gap = shrink
                        settled = cur_obj.copy()
                        settled[held_idx] = cur_ee + held_offset
                        cur_obj = settled
                        _append(cur_ee, cur_quat, wp_grip, settled.copy(), cur_held.copy(), cur_ext, wp_idx)
        elif wp_grip == 0 and held_idx >= 0:
            released = held_idx
            held_idx = -1
            cur_held = cur_held.copy()
            cur_held[released] = False
            held_frames[-1] = cur_held.copy()
            if kinds[released] is not ObjectKind.HANDLE:
                rest_z = BLOCK_HALF
                for i in range(n_obj):
                    if kinds[i] is ObjectKind.CONTAINER and math.hypot(
                        cur_obj[i, 0] - cur_obj[released, 0], cur_obj[i, 1] - cur_obj[released, 1]
                    ) <= CONTAINER_RADIUS:
                        rest_z = cur_obj[i, 2] + BLOCK_HALF
                        break
                if abs(cur_obj[released, 2] - rest_z) > 1e-12:
                    dropped = cur_obj.copy()
                    dropped[released, 2] = rest_z
                    cur_obj = dropped
                    _append(cur_ee, cur_quat, wp_grip, dropped.copy(), cur_held.copy(), cur_ext, wp_idx)
        cur_grip = wp_grip

    frames = _FrameSeq(
        labels=labels,
        kinds=kinds,
        ee=np.asarray(ee_frames),
        quat=np.asarray(quat_frames),
        grip=np.asarray(grip_frames, dtype=np.uint8),
        obj_pos=np.transpose(np.asarray(obj_frames), (1, 0, 2)) if n_obj else np.zeros((0, len(ee_frames), 3)),
        held=np.transpose(np.asarray(held_frames), (1, 0)) if n_obj else np.zeros((0, len(ee_frames)), dtype=bool),
        ext=np.asarray(ext_frames),
    )
    final = frames[len(frames) - 1]
    return Rollout(
        frames=frames,
        frame_waypoint=tuple(frame_wp),
        final=final,
        verified_success=verify(spec, final),
    )


def verify(task: str | TaskSpec, final: SimState) -> bool:
    """Ground-truth task predicate on a final state."""
    spec = task if isinstance(task, TaskSpec) else get_task(task)
    return bool(spec.verifier(final))


class SimEnv:
    """Single-task environment handle; cheap to construct, fully stateless."""

    def __init__(self, task: str | TaskSpec, run_key: int = 0, keypoint_noise: float = 0.0):
        self.spec = task if isinstance(task, TaskSpec) else get_task(task)
        self.run_key = run_key
        self.keypoint_noise = keypoint_noise

    def reset(self, seed: int) -> tuple[SimState, np.ndarray, InitialState]:
        return reset(self.spec, seed, keypoint_noise=self.keypoint_noise, run_key=self.run_key)

    def execute(self, state: SimState, traj: Trajectory) -> Rollout:
        return execute(self.spec, state, traj)

    def verify(self, final: SimState) -> bool:
        return verify(self.spec, final)

    def clone(self) -> "SimEnv":
        return SimEnv(self.spec, run_key=self.run_key, keypoint_noise=self.keypoint_noise)


def _mm_vec(vec) -> str:
    return "[" + ",".join(str(int(round(1000 * float(v)))) for v in vec) + "]"


def rollout_log_lines(rollout: Rollout) -> list[str]:
    """Line-oriented frame log: step, waypoint, robot pose, object poses."""
    lines = []
    for i, state in enumerate(rollout.frames):
        parts = [
            f"F {i}:",
            f"wp={rollout.frame_waypoint[i]}",
            f"ee={_mm_vec(state.robot.position)}",
            f"grip={state.robot.gripper.value}",
            f"ext={int(round(1000 * state.drawer_extension))}",
        ]
        for label in sorted(state.objects):
            obj = state.objects[label]
            parts.append(f"{label}={_mm_vec(obj.position)}{'*' if obj.held else ''}")
        lines.append(" ".join(parts))
    return lines


def dump_rollout(rollout: Rollout, out_dir, frames_png: bool = False) -> None:
    """Write the frame log (and optionally PNG frames) under `out_dir`."""
    import pathlib

    from .rendering import render, save_png

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rollout.log").write_text("\n".join(rollout_log_lines(rollout)) + "\n")
    if frames_png:
        for i, state in enumerate(rollout.frames):
            save_png(render(state), out / f"frame_{i:05d}.png")
