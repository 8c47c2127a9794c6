"""WSAD action inference from pose trajectories.

Position deltas are projected onto the camera's ground-plane basis
``f = (cos yaw, sin yaw)``, ``r = (sin yaw, -cos yaw)`` and binned into eight
camera-relative directions; the bin angle is ``atan2(<dp, r>, <dp, f>)`` so
0 is straight ahead and +90 degrees is to the right.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Pose6DoF, UnitQuaternion, camera_yaw, yaw_basis

__all__ = [
    "ActionVector",
    "Direction",
    "FrameState",
    "AlignmentReport",
    "classify_direction",
    "direction_to_action",
    "action_to_direction",
    "direction_offset",
    "infer_trajectory_actions",
    "default_deadzone",
    "check_alignment",
]


class Direction(enum.IntEnum):
    N = 0
    NE = 1
    E = 2
    SE = 3
    S = 4
    SW = 5
    W = 6
    NW = 7
    IDLE = 8


# (forward, backward, left, right) per moving direction
_MOVE_FLAGS = {
    Direction.N: (1, 0, 0, 0),
    Direction.NE: (1, 0, 0, 1),
    Direction.E: (0, 0, 0, 1),
    Direction.SE: (0, 1, 0, 1),
    Direction.S: (0, 1, 0, 0),
    Direction.SW: (0, 1, 1, 0),
    Direction.W: (0, 0, 1, 0),
    Direction.NW: (1, 0, 1, 0),
    Direction.IDLE: (0, 0, 0, 0),
}
_FLAGS_TO_DIR = {v: k for k, v in _MOVE_FLAGS.items()}


@dataclass(frozen=True)
class ActionVector:
    forward: bool = False
    backward: bool = False
    left: bool = False
    right: bool = False
    jump: bool = False
    attack: bool = False

    FIELDS = ("forward", "backward", "left", "right", "jump", "attack")

    def __post_init__(self):
        for name in self.FIELDS:
            object.__setattr__(self, name, bool(getattr(self, name)))
        if self.forward and self.backward:
            raise ValueError("forward and backward are mutually exclusive")
        if self.left and self.right:
            raise ValueError("left and right are mutually exclusive")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "ActionVector":
        if len(bits) != 6:
            raise ValueError(f"expected 6 action flags, got {len(bits)}")
        return cls(*(bool(b) for b in bits))

    def bits(self) -> tuple[int, ...]:
        return tuple(int(getattr(self, n)) for n in self.FIELDS)

    @property
    def direction(self) -> Direction:
        return action_to_direction(self)


@dataclass(frozen=True, eq=False)
class FrameState:
    frame_index: int
    player_position: np.ndarray
    player_rotation: UnitQuaternion
    camera_pose: Pose6DoF
    nav_flag: bool = False
    jump_flag: bool = False
    attack_flag: bool = False


def direction_offset(d: Direction) -> float:
    """Camera-relative bin center in radians (clockwise from forward)."""
    if d is Direction.IDLE:
        raise ValueError("IDLE has no heading")
    return int(d) * math.pi / 4.0


def classify_direction(delta_p, yaw: float, deadzone: float = 0.0) -> Direction:
    """Camera-relative eight-way direction of a ground-plane displacement.

    Bins are 45 degrees wide and centered on the eight headings.  A delta
    lying exactly on a bin edge goes to the lower-numbered direction.
    """
    if deadzone < 0:
        raise ValueError("deadzone must be >= 0")
    dx, dy = float(delta_p[0]), float(delta_p[1])
    norm = math.hypot(dx, dy)
    if norm == 0.0 or norm < deadzone:
        return Direction.IDLE
    f, r = yaw_basis(yaw)
    ang = math.degrees(math.atan2(dx * r[0] + dy * r[1], dx * f[0] + dy * f[1])) % 360.0
    edge = (ang - 22.5) / 45.0
    if edge == math.floor(edge):
        lo = int(edge) % 8
        return Direction(min(lo, (lo + 1) % 8))
    return Direction(int(math.floor((ang + 22.5) / 45.0)) % 8)


def direction_to_action(d: Direction, jump: bool = False, attack: bool = False) -> ActionVector:
    fwd, back, left, right = _MOVE_FLAGS[Direction(d)]
    return ActionVector(fwd, back, left, right, jump, attack)


def action_to_direction(a: ActionVector) -> Direction:
    return _FLAGS_TO_DIR[(int(a.forward), int(a.backward), int(a.left), int(a.right))]


def default_deadzone(positions: np.ndarray) -> float:
    """A quarter of the clip's median per-frame ground displacement."""
    steps = np.linalg.norm(np.diff(np.asarray(positions, dtype=np.float64)[:, :2], axis=0), axis=1)
    return 0.25 * float(np.median(steps)) if steps.size else 0.0


def infer_trajectory_actions(states: Sequence[FrameState], deadzone: float | None = None) -> list[ActionVector]:
    """Label every frame with the action that moves it to the next frame.

    Frame ``t`` uses ``p[t+1] - p[t]`` and the camera yaw at ``t``; the last
    frame has no successor and repeats the previous movement label.
    """
    if len(states) < 2:
        raise ValueError("action inference needs at least 2 frames")
    idx = [s.frame_index for s in states]
    bad = next((i for i in range(1, len(idx)) if idx[i] <= idx[i - 1]), None)
    if bad is not None:
        raise ValueError(f"frame_index not strictly increasing at position {bad}: {idx[bad - 1]} -> {idx[bad]}")
    pos = np.array([s.player_position for s in states], dtype=np.float64)
    if deadzone is None:
        deadzone = default_deadzone(pos)
    dirs = [classify_direction(pos[t + 1, :2] - pos[t, :2], camera_yaw(states[t].camera_pose.rotation), deadzone)
            for t in range(len(states) - 1)]
    dirs.append(dirs[-1])
    return [direction_to_action(d, s.jump_flag, s.attack_flag) for d, s in zip(dirs, states)]


@dataclass(frozen=True)
class AlignmentReport:
    passed: bool
    lengths: dict
    deltas: dict
    warnings: tuple[str, ...] = ()


def check_alignment(frames: int, states: int, actions: int) -> AlignmentReport:
    """All capture streams of a clip must have the same length."""
    lengths = {"frames": frames, "states": states, "actions": actions}
    deltas = {k: v - frames for k, v in lengths.items() if v != frames}
    warnings = ("empty clip",) if not deltas and frames == 0 else ()
    return AlignmentReport(not deltas, lengths, deltas, warnings)
