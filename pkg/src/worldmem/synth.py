"""Seeded synthetic scenes for tests, demos and benchmarks."""

from __future__ import annotations

import math

import numpy as np

from .geometry import CameraIntrinsics, Pose6DoF, UnitQuaternion, camera_rotation

__all__ = ["CORRUPTIONS", "random_camera", "random_frustum_pair", "random_pool", "plane_depth_map",
           "planes_depth_map", "synthetic_clip", "synthetic_corpus"]


def random_camera(rng: np.random.Generator, box: float = 20.0,
                  fov_deg: tuple[float, float] = (40.0, 100.0),
                  near: float = 0.5, far: float = 15.0, aspect: float = 16.0 / 9.0,
                  max_pitch_deg: float = 30.0) -> tuple[Pose6DoF, CameraIntrinsics]:
    """Camera uniformly placed in a cube of side ``box`` with random yaw/pitch."""
    pos = rng.uniform(-0.5 * box, 0.5 * box, size=3)
    yaw = rng.uniform(-math.pi, math.pi)
    pitch = math.radians(rng.uniform(-max_pitch_deg, max_pitch_deg))
    fov = math.radians(rng.uniform(*fov_deg))
    return Pose6DoF(pos, camera_rotation(yaw, pitch)), CameraIntrinsics(fov, aspect, near, far)


def random_frustum_pair(rng: np.random.Generator, **kw):
    return random_camera(rng, **kw), random_camera(rng, **kw)


def random_pool(rng: np.random.Generator, size: int, spread: float = 8.0, **kw):
    """A query view plus ``size`` candidates scattered around it.

    Candidates sit within ``spread`` meters of the query and look roughly
    the same way, so a useful fraction of them overlap it.
    """
    query = random_camera(rng, **kw)
    qpos = query[0].position
    fwd = query[0].rotation.rotate(np.array([0.0, 0.0, 1.0]))
    qyaw = math.atan2(fwd[1], fwd[0])
    fov_deg = kw.get("fov_deg", (40.0, 100.0))
    cands = []
    for _ in range(size):
        pos = qpos + rng.uniform(-spread, spread, size=3) * np.array([1.0, 1.0, 0.25])
        yaw = qyaw + rng.normal(0.0, 0.8)
        pitch = rng.normal(0.0, 0.2)
        fov = math.radians(rng.uniform(*fov_deg))
        intr = CameraIntrinsics(fov, query[1].aspect_ratio, query[1].near, query[1].far)
        cands.append((Pose6DoF(pos, camera_rotation(yaw, pitch)), intr))
    return query, cands


def plane_depth_map(pose: Pose6DoF, intr: CameraIntrinsics, height: int, width: int,
                    plane_normal=(0.0, 0.0, 1.0), plane_offset: float = 0.0) -> np.ndarray:
    """Z-depth image of the plane ``n . p + d = 0`` seen from ``pose``.

    Pixels whose ray misses the plane (or hits it behind the camera) get
    ``inf``.  Pixel centers follow :func:`worldmem.geometry.plucker_map`.
    """
    n = np.asarray(plane_normal, dtype=np.float64)
    u = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * intr.tan_half_h
    v = (2.0 * (np.arange(height) + 0.5) / height - 1.0) * intr.tan_half_v
    rays = np.empty((height, width, 3))
    rays[..., 0] = -u[None, :]
    rays[..., 1] = -v[:, None]
    rays[..., 2] = 1.0  # z-component 1: ray parameter equals z-depth
    world_dirs = pose.rotation.rotate(rays.reshape(-1, 3))
    denom = world_dirs @ n
    num = -(n @ pose.position + plane_offset)
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = num / denom
    depth[~(depth > 0.0) | ~np.isfinite(depth)] = np.inf
    return depth.reshape(height, width)


def planes_depth_map(pose: Pose6DoF, intr: CameraIntrinsics, height: int, width: int,
                     planes) -> np.ndarray:
    """Z-depth of the nearest of several planes, each given as ``(normal, offset)``."""
    maps = [plane_depth_map(pose, intr, height, width, n, d) for n, d in planes]
    return np.minimum.reduce(maps)


CORRUPTIONS = ("teleport", "speed", "low_quality")


def synthetic_clip(rng: np.random.Generator, clip_id: str = "", corruption: str | None = None,
                   frames: int = 24, fps: float = 30.0, size: tuple[int, int] = (36, 64)):
    """A walking camera over a ground plane, with depth maps and captions.

    Clean clips move at 1-3 m/s with gentle yaw drift and millimetre pose
    jitter.  ``corruption`` injects one defect: a single teleport step, an
    implausible speed, or a low-quality caption.
    """
    from .curation import QUALITY_DIMENSIONS, CaptionRecord, CaptionSegment, ClipTrajectory

    if corruption is not None and corruption not in CORRUPTIONS:
        raise ValueError(f"unknown corruption {corruption!r}")
    h, w = size
    intr = CameraIntrinsics(math.radians(60.0), w / h, 0.05, 100.0)
    speed = rng.uniform(1.0, 3.0)
    if corruption == "speed":
        speed = rng.choice([rng.uniform(0.02, 0.2), rng.uniform(12.0, 20.0)])
    dt = 1.0 / fps
    yaw = rng.uniform(-math.pi, math.pi)
    yaw_rate = rng.normal(0.0, 0.3)
    pitch = -math.radians(rng.uniform(15.0, 30.0))  # look down at the ground
    pos = np.array([*rng.uniform(-50, 50, 2), 1.7])
    true_poses = []
    for t in range(frames):
        true_poses.append(Pose6DoF(pos.copy(), camera_rotation(yaw, pitch)))
        step = speed * dt * rng.uniform(0.9, 1.1)
        pos = pos + step * np.array([math.cos(yaw), math.sin(yaw), 0.0])
        yaw += yaw_rate * dt
    if corruption == "teleport":
        k = int(rng.integers(2, frames - 2))
        jump = rng.uniform(8.0, 15.0) * speed * dt
        off = jump * np.array([math.cos(yaw), math.sin(yaw), 0.0])
        true_poses = true_poses[:k] + [Pose6DoF(p.position + off, p.rotation) for p in true_poses[k:]]
    depth = np.stack([plane_depth_map(p, intr, h, w) for p in true_poses])

    rot_sigma = math.radians(0.02)
    recorded = []
    for p in true_poses:
        axis = rng.normal(size=3)
        q = UnitQuaternion.from_axis_angle(axis / np.linalg.norm(axis), rng.normal(0.0, rot_sigma))
        recorded.append(Pose6DoF(p.position + rng.normal(0.0, 1e-3, 3), q * p.rotation))
    clip = ClipTrajectory(tuple(recorded), np.arange(frames) * dt, intr, depth, clip_id)

    lo, hi = (0.0, 2.5) if corruption == "low_quality" else (5.0, 10.0)
    quality = {k: float(rng.uniform(lo, hi)) for k in QUALITY_DIMENSIONS}
    dur = frames * dt
    caption = CaptionRecord("A walk across open ground.", "Flat terrain under a clear sky.",
                            (CaptionSegment(0.0, dur, "walking", "forward"),), quality)
    return clip, caption


def synthetic_corpus(rng: np.random.Generator, n: int, corrupt_fraction: float = 0.2, **kw):
    """``n`` clips of which exactly ``round(n * corrupt_fraction)`` carry a defect.

    Returns ``(clips, captions, labels)`` where ``labels[i]`` is the
    corruption kind or ``None``; defect kinds cycle evenly.
    """
    n_bad = int(round(n * corrupt_fraction))
    bad = set(rng.choice(n, size=n_bad, replace=False).tolist())
    clips, caps, labels = [], [], []
    j = 0
    for i in range(n):
        kind = None
        if i in bad:
            kind = CORRUPTIONS[j % len(CORRUPTIONS)]
            j += 1
        c, cap = synthetic_clip(rng, f"clip{i:05d}", kind, **kw)
        clips.append(c)
        caps.append(cap)
        labels.append(kind)
    return clips, caps, labels
