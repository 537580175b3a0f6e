"""Top-down orthographic rasterization of simulator states.

The 0.64 m square workspace maps onto a 128x128 RGB image at 200 px/m
(u = (x + 0.32) * 200, v = (0.32 - y) * 200). Objects are filled discs with a
fixed color per kind, the drawer body is a rectangle trailing its handle, and
the gripper is a black cross. Pure integer rasterization on numpy arrays, so
identical states produce identical bytes.
"""

from __future__ import annotations

import numpy as np

from .tasks import CONTAINER_RADIUS, DRAWER_AXIS, ObjectKind
from .simulator import SimState

IMAGE_SIZE = 128
PX_PER_M = 200.0
_X_MIN = -0.32
_Y_MAX = 0.32

BACKGROUND = (255, 255, 255)
KIND_COLORS = {
    ObjectKind.BLOCK: (40, 80, 220),
    ObjectKind.CONTAINER: (220, 60, 40),
    ObjectKind.HANDLE: (40, 160, 60),
    ObjectKind.LID: (128, 128, 128),
}
DRAWER_BODY_COLOR = (205, 180, 140)
GRIPPER_COLOR = (0, 0, 0)

KIND_RADII_M = {
    ObjectKind.BLOCK: 0.015,
    ObjectKind.CONTAINER: CONTAINER_RADIUS,
    ObjectKind.HANDLE: 0.012,
    ObjectKind.LID: 0.03,
}
_DRAWER_BODY_LEN_M = 0.12
_DRAWER_BODY_HALFWIDTH_M = 0.06
_CROSS_ARM_PX = 4


def _px(x: float) -> int:
    return int(np.floor((x - _X_MIN) * PX_PER_M + 0.5))


def _py(y: float) -> int:
    return int(np.floor((_Y_MAX - y) * PX_PER_M + 0.5))


def _fill_disc(img: np.ndarray, cx: int, cy: int, radius_px: int, color) -> None:
    yy, xx = np.ogrid[:IMAGE_SIZE, :IMAGE_SIZE]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius_px**2
    img[mask] = color


def _fill_rect(img: np.ndarray, u0: int, u1: int, v0: int, v1: int, color) -> None:
    u0, u1 = sorted((u0, u1))
    v0, v1 = sorted((v0, v1))
    u0, v0 = max(u0, 0), max(v0, 0)
    u1, v1 = min(u1, IMAGE_SIZE - 1), min(v1, IMAGE_SIZE - 1)
    if u0 <= u1 and v0 <= v1:
        img[v0 : v1 + 1, u0 : u1 + 1] = color


def render(state: SimState) -> np.ndarray:
    """Deterministic 128x128 RGB top-down view of `state`."""
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    img[:] = BACKGROUND

    by_kind: dict[ObjectKind, list[tuple[str, tuple[float, ...]]]] = {}
    for label in sorted(state.objects):
        obj = state.objects[label]
        by_kind.setdefault(obj.kind, []).append((label, obj.position))

    # Drawer body behind its handle, along the opposite of the pull axis.
    for _, pos in by_kind.get(ObjectKind.HANDLE, []):
        back = (
            pos[0] - _DRAWER_BODY_LEN_M * DRAWER_AXIS[0],
            pos[1] - _DRAWER_BODY_LEN_M * DRAWER_AXIS[1],
        )
        if abs(DRAWER_AXIS[0]) > abs(DRAWER_AXIS[1]):
            _fill_rect(
                img,
                _px(pos[0]), _px(back[0]),
                _py(pos[1] + _DRAWER_BODY_HALFWIDTH_M), _py(pos[1] - _DRAWER_BODY_HALFWIDTH_M),
                DRAWER_BODY_COLOR,
            )
        else:
            _fill_rect(
                img,
                _px(pos[0] - _DRAWER_BODY_HALFWIDTH_M), _px(pos[0] + _DRAWER_BODY_HALFWIDTH_M),
                _py(pos[1]), _py(back[1]),
                DRAWER_BODY_COLOR,
            )

    for kind in (ObjectKind.CONTAINER, ObjectKind.LID, ObjectKind.HANDLE, ObjectKind.BLOCK):
        for _, pos in by_kind.get(kind, []):
            radius_px = int(round(KIND_RADII_M[kind] * PX_PER_M))
            _fill_disc(img, _px(pos[0]), _py(pos[1]), radius_px, KIND_COLORS[kind])

    u, v = _px(state.robot.position[0]), _py(state.robot.position[1])
    for du in range(-_CROSS_ARM_PX, _CROSS_ARM_PX + 1):
        uu = u + du
        if 0 <= uu < IMAGE_SIZE and 0 <= v < IMAGE_SIZE:
            img[v, uu] = GRIPPER_COLOR
    for dv in range(-_CROSS_ARM_PX, _CROSS_ARM_PX + 1):
        vv = v + dv
        if 0 <= vv < IMAGE_SIZE and 0 <= u < IMAGE_SIZE:
            img[vv, u] = GRIPPER_COLOR
    return img


def save_png(img: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as handle:
        return np.asarray(handle.convert("RGB"), dtype=np.uint8)
