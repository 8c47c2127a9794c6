"""Double-precision pose algebra, pinhole frustums and Plücker ray maps.

Conventions
-----------
World frame is right-handed and Z-up; the ground plane is (x, y) and yaw is
measured counter-clockwise about +Z starting from +X.  With this choice the
camera-planar basis used for action labelling is exactly

    forward = (cos yaw, sin yaw),   right = (sin yaw, -cos yaw).

Camera frame is right-handed with +Z along the optical axis, +Y up and
therefore +X pointing to the camera's left.  A ``Pose6DoF`` maps camera-local
coordinates to world coordinates: ``p_world = R @ p_local + position``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "UnitQuaternion",
    "Pose6DoF",
    "CameraIntrinsics",
    "Frustum",
    "PluckerRay",
    "vec3",
    "compose",
    "inverse",
    "relative_pose",
    "yaw_basis",
    "camera_rotation",
    "camera_yaw",
    "frustum_from_pose",
    "point_in_frustum",
    "points_in_frustum",
    "plucker_map",
]

# Camera-local -> world rotation at yaw 0, pitch 0: local +Z -> world +X,
# local +Y -> world +Z, local +X (left) -> world +Y.
_CAM_TO_WORLD_BASE = np.array(
    [[0.0, 0.0, 1.0],
     [1.0, 0.0, 0.0],
     [0.0, 1.0, 0.0]]
)

CONTAINMENT_TOL = 1e-9


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a finite float64 3-vector from three scalars or one iterable."""
    if y is None and z is None:
        arr = np.asarray(x, dtype=np.float64).reshape(3)
    else:
        arr = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"vector components must be finite, got {arr}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation quaternion ``w + xi + yj + zk``.

    Components are normalized on construction and sign-canonicalized so that
    ``w >= 0``; two quaternions describing the same rotation therefore compare
    equal up to rounding.
    """

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        comps = (float(self.w), float(self.x), float(self.y), float(self.z))
        if not all(math.isfinite(c) for c in comps):
            raise ValueError(f"quaternion components must be finite: {comps}")
        n = math.sqrt(sum(c * c for c in comps))
        if n == 0.0:
            raise ValueError("zero quaternion cannot represent a rotation")
        w, x, y, z = (c / n for c in comps)
        if w < 0.0 or (w == 0.0 and (x, y, z) < (0.0, 0.0, 0.0)):
            w, x, y, z = -w, -x, -y, -z
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Iterable[float], angle: float) -> "UnitQuaternion":
        a = np.asarray(axis, dtype=np.float64)
        n = float(np.linalg.norm(a))
        if n == 0.0:
            raise ValueError("rotation axis must be non-zero")
        s = math.sin(0.5 * angle) / n
        return cls(math.cos(0.5 * angle), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_matrix(cls, m) -> "UnitQuaternion":
        """Shepperd's method; picks the largest diagonal pivot for stability."""
        m = np.asarray(m, dtype=np.float64)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0.0:
            s = 2.0 * math.sqrt(tr + 1.0)
            return cls(0.25 * s, (m[2, 1] - m[1, 2]) / s,
                       (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            return cls((m[2, 1] - m[1, 2]) / s, 0.25 * s,
                       (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            return cls((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                       0.25 * s, (m[1, 2] + m[2, 1]) / s)
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        return cls((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                   (m[1, 2] + m[2, 1]) / s, 0.25 * s)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        """Hamilton product; ``(a * b).rotate(v) == a.rotate(b.rotate(v))``."""
        aw, ax, ay, az = self.w, self.x, self.y, self.z
        bw, bx, by, bz = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def rotate(self, v) -> np.ndarray:
        """Rotate a vector (or an ``(n, 3)`` array of vectors)."""
        v = np.asarray(v, dtype=np.float64)
        return v @ self.to_matrix().T

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Geodesic angle in radians between two rotations."""
        # atan2 of the relative rotation stays accurate near zero, unlike acos of the dot product
        r = self.conjugate() * other
        return 2.0 * math.atan2(math.sqrt(r.x * r.x + r.y * r.y + r.z * r.z), abs(r.w))


@dataclass(frozen=True, eq=False)
class Pose6DoF:
    position: np.ndarray
    rotation: UnitQuaternion = UnitQuaternion()

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(vec3(self.position)))
        if not isinstance(self.rotation, UnitQuaternion):
            raise TypeError("rotation must be a UnitQuaternion")

    @classmethod
    def identity(cls) -> "Pose6DoF":
        return cls(np.zeros(3), UnitQuaternion.identity())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose6DoF):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position)) and self.rotation == other.rotation

    def __hash__(self):
        return hash((tuple(self.position), self.rotation))

    def __repr__(self) -> str:
        p = ", ".join(f"{c:.6g}" for c in self.position)
        q = ", ".join(f"{c:.6g}" for c in self.rotation.as_tuple())
        return f"Pose6DoF(position=({p}), rotation=({q}))"

    def transform_points(self, pts) -> np.ndarray:
        return self.rotation.rotate(pts) + self.position

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.position
        return m

    def isclose(self, other: "Pose6DoF", atol: float = 1e-10) -> bool:
        return (float(np.max(np.abs(self.position - other.position))) <= atol
                and self.rotation.angle_to(other.rotation) <= atol * 10)


def compose(a: Pose6DoF, b: Pose6DoF) -> Pose6DoF:
    """Pose that applies ``b`` first, then ``a``."""
    return Pose6DoF(a.rotation.rotate(b.position) + a.position, a.rotation * b.rotation)


def inverse(p: Pose6DoF) -> Pose6DoF:
    qi = p.rotation.conjugate()
    return Pose6DoF(-qi.rotate(p.position), qi)


def relative_pose(world_a: Pose6DoF, world_b: Pose6DoF) -> Pose6DoF:
    """Express ``world_b`` in the frame of ``world_a``."""
    return compose(inverse(world_a), world_b)


def yaw_basis(yaw: float) -> tuple[np.ndarray, np.ndarray]:
    """Ground-plane forward and right unit vectors for a yaw angle."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c, s]), np.array([s, -c])


def camera_rotation(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> UnitQuaternion:
    """Camera-to-world rotation for a camera looking along ``yaw``.

    Positive pitch tilts the optical axis up, positive roll turns the image
    counter-clockwise as seen from behind the camera.
    """
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    # pitch rotates about the camera's +X (left) axis; -pitch lifts +Z toward +Y
    cp, sp = math.cos(-pitch), math.sin(-pitch)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    cr, sr = math.cos(roll), math.sin(roll)
    rroll = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return UnitQuaternion.from_matrix(rz @ _CAM_TO_WORLD_BASE @ rx @ rroll)


def camera_yaw(rotation: UnitQuaternion) -> float:
    """Yaw of the optical axis projected onto the ground plane."""
    fwd = rotation.rotate(np.array([0.0, 0.0, 1.0]))
    return math.atan2(fwd[1], fwd[0])


@dataclass(frozen=True)
class CameraIntrinsics:
    vertical_fov: float
    aspect_ratio: float = 16.0 / 9.0
    near: float = 0.1
    far: float = 10.0

    def __post_init__(self):
        if not (0.0 < self.vertical_fov < math.pi):
            raise ValueError(f"vertical_fov must lie in (0, pi), got {self.vertical_fov}")
        if not (self.aspect_ratio > 0.0 and math.isfinite(self.aspect_ratio)):
            raise ValueError(f"aspect_ratio must be positive, got {self.aspect_ratio}")
        if not (self.near > 0.0):
            raise ValueError(f"near must be positive, got {self.near}")
        if not (self.far > self.near and math.isfinite(self.far)):
            raise ValueError(f"far must be finite and > near, got {self.far}")

    @property
    def tan_half_v(self) -> float:
        return math.tan(0.5 * self.vertical_fov)

    @property
    def tan_half_h(self) -> float:
        return self.aspect_ratio * self.tan_half_v

    def frustum_volume(self) -> float:
        """Closed-form truncated-pyramid volume."""
        return (4.0 / 3.0) * self.tan_half_v ** 2 * self.aspect_ratio * (self.far ** 3 - self.near ** 3)

    def focal_lengths(self, height: int, width: int) -> tuple[float, float]:
        return 0.5 * width / self.tan_half_h, 0.5 * height / self.tan_half_v


# corner order: near (TL, TR, BR, BL) then far (TL, TR, BR, BL), image-space labels
_CORNER_SIGNS = ((1, 1), (-1, 1), (-1, -1), (1, -1))


@dataclass(frozen=True, eq=False)
class Frustum:
    """Convex view volume.

    ``normals @ p + offsets >= 0`` for every point inside; normals are unit
    and inward-facing.  Planes are ordered near, far, left, right, top,
    bottom.  ``corners`` holds the eight vertices (near face first).
    """

    normals: np.ndarray
    offsets: np.ndarray
    corners: np.ndarray
    pose: Pose6DoF
    intrinsics: CameraIntrinsics

    @property
    def volume(self) -> float:
        return self.intrinsics.frustum_volume()

    @property
    def centroid(self) -> np.ndarray:
        """Volume centroid; lies on the optical axis."""
        n, f = self.intrinsics.near, self.intrinsics.far
        depth = 0.75 * (f ** 4 - n ** 4) / (f ** 3 - n ** 3)
        return self.pose.transform_points(np.array([0.0, 0.0, depth]))

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.corners.min(axis=0), self.corners.max(axis=0)

    def faces(self) -> list[list[int]]:
        """Corner-index loops for each face, counter-clockwise seen from outside."""
        return [
            [3, 2, 1, 0],  # near
            [5, 6, 7, 4],  # far
            [4, 7, 3, 0],  # left (camera +X side)
            [2, 6, 5, 1],  # right
            [1, 5, 4, 0],  # top
            [7, 6, 2, 3],  # bottom
        ]


def frustum_from_pose(pose: Pose6DoF, intr: CameraIntrinsics) -> Frustum:
    th, tv = intr.tan_half_h, intr.tan_half_v
    local_corners = np.array(
        [[sx * th * d, sy * tv * d, d] for d in (intr.near, intr.far) for sx, sy in _CORNER_SIGNS]
    )
    local_normals = np.array([
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [-1.0, 0.0, th],   # inside: x <= th * z
        [1.0, 0.0, th],    # inside: x >= -th * z
        [0.0, -1.0, tv],
        [0.0, 1.0, tv],
    ])
    local_normals /= np.linalg.norm(local_normals, axis=1, keepdims=True)
    local_offsets = np.array([-intr.near, intr.far, 0.0, 0.0, 0.0, 0.0])

    rot = pose.rotation.to_matrix()
    normals = local_normals @ rot.T
    offsets = local_offsets - normals @ pose.position
    corners = local_corners @ rot.T + pose.position
    return Frustum(_frozen(normals), _frozen(offsets), _frozen(corners), pose, intr)


def point_in_frustum(f: Frustum, p, tol: float = CONTAINMENT_TOL) -> bool:
    p = np.asarray(p, dtype=np.float64)
    return bool(np.all(f.normals @ p + f.offsets >= -tol))


def points_in_frustum(f: Frustum, pts, tol: float = CONTAINMENT_TOL) -> np.ndarray:
    """Vectorized containment for an ``(n, 3)`` array; returns a bool mask."""
    pts = np.asarray(pts, dtype=np.float64)
    return np.all(pts @ f.normals.T + f.offsets >= -tol, axis=1)


@dataclass(frozen=True, eq=False)
class PluckerRay:
    direction: np.ndarray
    moment: np.ndarray


def plucker_map(rel: Pose6DoF, intr: CameraIntrinsics, height: int, width: int) -> np.ndarray:
    """Per-pixel Plücker coordinates of a camera expressed in a reference frame.

    Returns an ``(height, width, 6)`` array holding ``(direction, moment)``
    with unit directions.  Pixel ``(row, col)`` is sampled at its center;
    rows grow downward and columns grow to the image right (camera -X).
    """
    if height < 1 or width < 1:
        raise ValueError("height and width must be >= 1")
    u = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * intr.tan_half_h
    v = (2.0 * (np.arange(height) + 0.5) / height - 1.0) * intr.tan_half_v
    dirs = np.empty((height, width, 3))
    dirs[..., 0] = -u[None, :]
    dirs[..., 1] = -v[:, None]
    dirs[..., 2] = 1.0
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    dirs = rel.rotation.rotate(dirs.reshape(-1, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    moments = np.cross(np.broadcast_to(rel.position, dirs.shape), dirs)
    return np.concatenate([dirs, moments], axis=-1).reshape(height, width, 6)
