"""End-effector trajectory data model and the waypoint text codec.

A waypoint is a Cartesian position, a unit quaternion (w, x, y, z) and a
binary gripper command. Trajectories travel between components as text, one
line per waypoint:

    W <idx>: pos=[<x_mm>,<y_mm>,<z_mm>] quat=[<w>,<x>,<y>,<z>] grip=<OPEN|CLOSE>

Positions are signed integer millimeters (round half away from zero),
quaternion components are printed to three decimals. The parser is tolerant
of surrounding prose: it extracts every line matching the grammar, in order,
and ignores everything else.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]


class CodecError(Exception):
    """Base class for trajectory-text codec failures."""


class NoWaypointsFound(CodecError):
    """No line in the input matched the waypoint grammar."""


class MalformedWaypoint(CodecError):
    """A line matched the waypoint shape but a field failed to parse."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DegenerateQuaternion(CodecError):
    """Quaternion norm outside the recoverable range [0.5, 2.0]."""


class Gripper(Enum):
    OPEN = "OPEN"
    CLOSE = "CLOSE"


def _canonical_quat(quat: Iterable[float]) -> Quat:
    """Normalize to unit length and fix the double-cover sign (w >= 0)."""
    w, x, y, z = (float(v) for v in quat)
    norm = math.sqrt(w * w + x * x + y * y + z * z)
    if not math.isfinite(norm) or norm == 0.0:
        raise ValueError(f"quaternion has no direction: {(w, x, y, z)}")
    w, x, y, z = w / norm, x / norm, y / norm, z / norm
    for lead in (w, x, y, z):
        if lead != 0.0:
            if lead < 0.0:
                w, x, y, z = -w, -x, -y, -z
            break
    return (w, x, y, z)


@dataclass(frozen=True, slots=True)
class EndEffectorState:
    """One waypoint: position in meters, unit quaternion, gripper command."""

    position: Vec3
    orientation: Quat = (1.0, 0.0, 0.0, 0.0)
    gripper: Gripper = Gripper.OPEN

    def __post_init__(self) -> None:
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"position must be a finite 3-vector, got {self.position!r}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", _canonical_quat(self.orientation))
        if not isinstance(self.gripper, Gripper):
            object.__setattr__(self, "gripper", Gripper(self.gripper))


@dataclass(frozen=True, slots=True)
class Trajectory:
    """Ordered, non-empty sequence of end-effector waypoints."""

    waypoints: tuple[EndEffectorState, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if not self.waypoints:
            raise ValueError("trajectory must contain at least one waypoint")
        for wp in self.waypoints:
            if not isinstance(wp, EndEffectorState):
                raise TypeError(f"waypoint must be EndEffectorState, got {type(wp)}")

    def __len__(self) -> int:
        return len(self.waypoints)

    def __iter__(self) -> Iterator[EndEffectorState]:
        return iter(self.waypoints)

    def __getitem__(self, i: int) -> EndEffectorState:
        return self.waypoints[i]


@dataclass(frozen=True, slots=True)
class InitialState:
    """Named object keypoints (meters) plus the starting robot state."""

    keypoints: Mapping[str, Vec3]
    robot: EndEffectorState

    def __post_init__(self) -> None:
        if not self.keypoints:
            raise ValueError("initial state needs at least one keypoint")
        clean = {str(k): tuple(float(v) for v in vec) for k, vec in self.keypoints.items()}
        for label, vec in clean.items():
            if len(vec) != 3 or not all(math.isfinite(v) for v in vec):
                raise ValueError(f"keypoint {label!r} must be a finite 3-vector")
        object.__setattr__(self, "keypoints", clean)


def _mm(meters: float) -> int:
    """Round meters to integer millimeters, half away from zero."""
    scaled = meters * 1000.0
    return int(math.copysign(math.floor(abs(scaled) + 0.5), scaled))


def _fmt3(v: float) -> str:
    text = f"{v:.3f}"
    return "0.000" if text == "-0.000" else text


def encode_waypoint(index: int, wp: EndEffectorState) -> str:
    pos = ",".join(str(_mm(v)) for v in wp.position)
    quat = ",".join(_fmt3(v) for v in wp.orientation)
    return f"W {index}: pos=[{pos}] quat=[{quat}] grip={wp.gripper.value}"


def encode_trajectory_text(traj: Trajectory) -> str:
    """One grammar line per waypoint, indices from 0."""
    return "\n".join(encode_waypoint(i, wp) for i, wp in enumerate(traj))


_WAYPOINT_RE = re.compile(
    r"^\s*W\s+(\d+)\s*:\s*pos=\[([^\]]*)\]\s+quat=\[([^\]]*)\]\s+grip=(\S+)"
)


def _parse_floats(raw: str, expect: int, line_no: int, what: str) -> list[float]:
    fields = [f.strip() for f in raw.split(",")]
    if len(fields) != expect:
        raise MalformedWaypoint(line_no, f"{what} needs {expect} fields, got {len(fields)}")
    values = []
    for f in fields:
        try:
            values.append(float(f))
        except ValueError:
            raise MalformedWaypoint(line_no, f"non-numeric {what} field {f!r}") from None
    if not all(math.isfinite(v) for v in values):
        raise MalformedWaypoint(line_no, f"non-finite {what} value")
    return values


def parse_trajectory_text(text: str) -> Trajectory:
    """Extract all waypoint lines from `text`, in order of appearance.

    Lines that do not match the grammar are ignored (the input may be wrapped
    in prose from a model response). Quaternions with norm in [0.5, 2.0] are
    renormalized; anything further off raises DegenerateQuaternion.
    """
    waypoints: list[EndEffectorState] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        match = _WAYPOINT_RE.match(line)
        if match is None:
            continue
        _, pos_raw, quat_raw, grip_raw = match.groups()
        pos_mm = _parse_floats(pos_raw, 3, line_no, "position")
        quat = _parse_floats(quat_raw, 4, line_no, "quaternion")
        if grip_raw not in (Gripper.OPEN.value, Gripper.CLOSE.value):
            raise MalformedWaypoint(line_no, f"unknown gripper command {grip_raw!r}")
        norm = math.sqrt(sum(v * v for v in quat))
        if norm < 0.5 or norm > 2.0:
            raise DegenerateQuaternion(f"line {line_no}: quaternion norm {norm:.4f}")
        waypoints.append(
            EndEffectorState(
                position=tuple(v / 1000.0 for v in pos_mm),
                orientation=tuple(quat),
                gripper=Gripper(grip_raw),
            )
        )
    if not waypoints:
        raise NoWaypointsFound("no waypoint lines in input")
    return Trajectory(tuple(waypoints))


def encode_initial_state_text(initial: InitialState) -> str:
    """Keypoints (one `K` line each, sorted by label) plus the robot pose."""
    lines = [
        f"K {label}: pos=[{','.join(str(_mm(v)) for v in vec)}]"
        for label, vec in sorted(initial.keypoints.items())
    ]
    robot = encode_waypoint(0, initial.robot).replace("W 0:", "R:", 1)
    lines.append(robot)
    return "\n".join(lines)


_KEYPOINT_RE = re.compile(r"^\s*K\s+(\S+)\s*:\s*pos=\[([^\]]*)\]")


def parse_keypoints_text(text: str) -> dict[str, Vec3]:
    """Recover the keypoint map from an encoded initial-state block."""
    found: dict[str, Vec3] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        match = _KEYPOINT_RE.match(line)
        if match is None:
            continue
        label, raw = match.groups()
        mm = _parse_floats(raw, 3, line_no, "keypoint")
        found[label] = tuple(v / 1000.0 for v in mm)
    return found
