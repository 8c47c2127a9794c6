"""Multi-segment streaming rollout with camera-aware memory.

Segment 0 runs image-to-video from a reference latent.  Every later segment
takes its past frames from the tail of the previous segment and retrieves
memory from an online pool by frustum overlap with its first frame's
viewpoint, which is extrapolated kinematically from the control script.
The generator is pluggable; :class:`StubGenerator` is a deterministic
stand-in used for testing the schedule.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from .actions import ActionVector, Direction, action_to_direction, direction_offset, direction_to_action
from .geometry import CameraIntrinsics, Pose6DoF, camera_rotation, camera_yaw
from .retrieval import MemoryEntry, MemoryPool, derive_seed, pool_update, retrieve
from .trainkit import ContextBatch, ContextLayout, LatentFrame, assemble_context

__all__ = [
    "GeneratorOutputError",
    "Segment",
    "RolloutPlan",
    "Control",
    "Kinematics",
    "GenerationRequest",
    "GenerationOutput",
    "Generator",
    "StubGenerator",
    "SegmentTrace",
    "StreamResult",
    "plan_rollout",
    "step_segment",
    "run_stream",
    "trace_to_jsonl",
    "trace_from_jsonl",
    "constant_script",
    "revisit_script",
]

DEFAULT_INTRINSICS = CameraIntrinsics(math.radians(60.0), 16.0 / 9.0, 0.1, 10.0)


class GeneratorOutputError(RuntimeError):
    """The generator returned the wrong number of frames or poses."""


@dataclass(frozen=True)
class Segment:
    index: int
    current_len: int
    start_frame: int
    mode: str
    seed: int

    @property
    def stop_frame(self) -> int:
        return self.start_frame + self.current_len


@dataclass(frozen=True)
class RolloutPlan:
    segment_count: int
    layout: ContextLayout
    seed: int
    segments: tuple[Segment, ...]

    @property
    def total_frames(self) -> int:
        return self.segments[-1].stop_frame


def plan_rollout(k: int, layout: ContextLayout = ContextLayout(), seed: int = 0,
                 max_segments: int = 6) -> RolloutPlan:
    if not 1 <= k <= max_segments:
        raise ValueError(f"segment count must lie in [1, {max_segments}], got {k}")
    segs = []
    start = 0
    for i in range(k):
        mode = "i2v" if i == 0 else "standard"
        n = layout.i2v_current_len if i == 0 else layout.current_len
        segs.append(Segment(i, n, start, mode, derive_seed(seed, i)))
        start += n
    return RolloutPlan(k, layout, seed, tuple(segs))


@dataclass(frozen=True)
class Control:
    """Per-frame control: WSAD action plus a camera yaw change in radians."""

    action: ActionVector = ActionVector()
    yaw_delta: float = 0.0


@dataclass(frozen=True)
class Kinematics:
    """Constant-speed ground-plane motion: ``speed * dt`` meters per frame."""

    speed: float = 4.0
    dt: float = 1.0 / 16.0
    eye_height: float = 1.7

    def advance(self, pose: Pose6DoF, control: Control) -> Pose6DoF:
        """Pose one frame later: turn by ``yaw_delta``, then step along the action."""
        yaw = camera_yaw(pose.rotation) + control.yaw_delta
        pos = pose.position
        d = action_to_direction(control.action)
        if d is not Direction.IDLE:
            phi = yaw - direction_offset(d)
            step = self.speed * self.dt
            pos = pos + np.array([step * math.cos(phi), step * math.sin(phi), 0.0])
        return Pose6DoF(pos, camera_rotation(yaw))

    def rollout(self, pose: Pose6DoF, controls: Sequence[Control]) -> list[Pose6DoF]:
        out = [pose]
        for c in controls:
            out.append(self.advance(out[-1], c))
        return out


def constant_script(n: int, direction: Direction = Direction.N) -> list[Control]:
    return [Control(direction_to_action(direction))] * n


def revisit_script(plan: RolloutPlan) -> list[Control]:
    """Walk forward, turn around into segment 1, then turn back before segment 3.

    The last segment (for plans of at least four segments) starts facing the
    way segment 0 faced, a little behind where it started.
    """
    fwd, idle = direction_to_action(Direction.N), direction_to_action(Direction.IDLE)
    script = [Control(fwd) for _ in range(plan.total_frames)]
    if plan.segment_count > 1:
        script[plan.segments[1].start_frame - 1] = Control(fwd, math.pi)
    if plan.segment_count > 3:
        script[plan.segments[3].start_frame - 1] = Control(idle, math.pi)
    return script


@dataclass(frozen=True)
class GenerationRequest:
    segment: Segment
    context: ContextBatch
    controls: tuple[Control, ...]  # one per current frame
    prev_control: Control | None  # control issued on the frame before the segment
    anchor_pose: Pose6DoF  # pose of the frame before the segment (initial pose for segment 0)
    seed: int


@dataclass(frozen=True)
class GenerationOutput:
    latents: tuple[np.ndarray, ...]
    poses: tuple[Pose6DoF, ...]


class Generator(Protocol):
    def __call__(self, request: GenerationRequest) -> GenerationOutput: ...


@dataclass(frozen=True)
class StubGenerator:
    """Deterministic generator: hashed latents, kinematic poses."""

    kinematics: Kinematics = Kinematics()

    def __call__(self, request: GenerationRequest) -> GenerationOutput:
        h = hashlib.blake2b(digest_size=16)
        for f in request.context.frames:
            h.update(struct.pack("<q", f.frame_index))
            h.update(np.ascontiguousarray(f.values).tobytes())
        for c in request.controls:
            h.update(bytes(c.action.bits()))
            h.update(struct.pack("<d", c.yaw_delta))
        h.update(struct.pack("<Q", request.seed & 0xFFFFFFFFFFFFFFFF))
        rng = np.random.default_rng(int.from_bytes(h.digest(), "little"))
        shape = request.context.frames[-1].values.shape
        n = request.segment.current_len
        latents = tuple(rng.standard_normal(shape) for _ in range(n))

        if request.prev_control is None:
            first = request.anchor_pose
        else:
            first = self.kinematics.advance(request.anchor_pose, request.prev_control)
        poses = self.kinematics.rollout(first, request.controls[: n - 1])
        return GenerationOutput(latents, tuple(poses))


@dataclass(frozen=True)
class SegmentTrace:
    index: int
    mode: str
    start_frame: int
    query_pose: tuple[float, ...] | None  # (x, y, z, qw, qx, qy, qz)
    retrieved: tuple[tuple[int, float], ...]
    past_indices: tuple[int, ...]
    generated_indices: tuple[int, ...]
    pool_size: int
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["retrieved"] = [list(r) for r in self.retrieved]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentTrace":
        return cls(
            index=int(d["index"]), mode=str(d["mode"]), start_frame=int(d["start_frame"]),
            query_pose=None if d["query_pose"] is None else tuple(float(v) for v in d["query_pose"]),
            retrieved=tuple((int(i), float(s)) for i, s in d["retrieved"]),
            past_indices=tuple(int(i) for i in d["past_indices"]),
            generated_indices=tuple(int(i) for i in d["generated_indices"]),
            pool_size=int(d["pool_size"]), seed=int(d["seed"]),
        )


def trace_to_jsonl(trace: Sequence[SegmentTrace]) -> str:
    return "".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in trace)


def trace_from_jsonl(text: str) -> list[SegmentTrace]:
    return [SegmentTrace.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass
class StreamResult:
    latents: dict[int, np.ndarray]
    poses: dict[int, Pose6DoF]
    trace: list[SegmentTrace]
    pool: MemoryPool

    @property
    def frame_indices(self) -> list[int]:
        return sorted(self.latents)


def _pose_tuple(p: Pose6DoF) -> tuple[float, ...]:
    return (*map(float, p.position), *p.rotation.as_tuple())


def step_segment(plan: RolloutPlan, segment: Segment, latents: dict[int, np.ndarray],
                 poses: dict[int, Pose6DoF], generator: Generator, pool: MemoryPool,
                 script: Sequence[Control], initial_pose: Pose6DoF, reference: np.ndarray,
                 intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS, kinematics: Kinematics = Kinematics(),
                 scorer: str = "exact", n_samples: int = 4096
                 ) -> tuple[dict[int, np.ndarray], dict[int, Pose6DoF], MemoryPool, SegmentTrace]:
    """Generate one segment; returns its latents, poses, the updated pool and a trace record."""
    layout = replace(plan.layout, mask_prob=0.0)
    s0, n = segment.start_frame, segment.current_len
    controls = tuple(script[s0: s0 + n])
    ref = LatentFrame(reference, 0, "reference")
    cur_idx = list(range(s0, s0 + n))

    if segment.mode == "i2v":
        context = assemble_context([], [], None, layout, "i2v", reference=ref, seed=segment.seed,
                                   current_indices=cur_idx)
        request = GenerationRequest(segment, context, controls, None, initial_pose, segment.seed)
        query_pose, retrieved, past_idx = None, (), ()
    else:
        prev_control = script[s0 - 1]
        query_pose = kinematics.advance(poses[s0 - 1], prev_control)
        result = retrieve(query_pose, intrinsics, pool, k=layout.memory_len, scorer=scorer,
                          query_index=s0, n_samples=n_samples, seed=segment.seed)
        retrieved = tuple((e.frame_index, float(s)) for e, s in result.selected)
        top = [e.frame_index for e, _ in result.selected[: layout.memory_len]]
        while len(top) < layout.memory_len:
            top.append(top[-1] if top else 0)
        memory = [LatentFrame(latents[i], i, "memory") for i in top]
        past_idx = tuple(range(s0 - layout.past_len, s0))
        past = [LatentFrame(latents[i], i, "past") for i in past_idx]
        sink = pool.sink
        sink_frame = LatentFrame(latents[sink.frame_index], sink.frame_index, "reference") if sink else ref
        context = assemble_context(memory, past, None, layout, "standard", reference=sink_frame,
                                   gamma_h=0.0, gamma_m=0.0, seed=segment.seed, current_indices=cur_idx)
        request = GenerationRequest(segment, context, controls, prev_control, poses[s0 - 1], segment.seed)

    out = generator(request)
    if len(out.latents) != n or len(out.poses) != n:
        raise GeneratorOutputError(
            f"segment {segment.index}: expected {n} frames, got {len(out.latents)} latents / {len(out.poses)} poses")
    new_latents = dict(zip(cur_idx, out.latents))
    new_poses = dict(zip(cur_idx, out.poses))
    entries = [MemoryEntry(i, new_poses[i], intrinsics, i, is_sink=(i == 0)) for i in cur_idx]
    pool = pool_update(pool, entries)
    rec = SegmentTrace(segment.index, segment.mode, s0,
                       None if query_pose is None else _pose_tuple(query_pose),
                       retrieved, past_idx, tuple(cur_idx), len(pool), segment.seed)
    return new_latents, new_poses, pool, rec


def run_stream(plan: RolloutPlan, generator: Generator, script: Sequence[Control],
               initial_pose: Pose6DoF | None = None, reference: np.ndarray | None = None,
               intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS, kinematics: Kinematics = Kinematics(),
               scorer: str = "exact", n_samples: int = 4096, pool_capacity: int | None = None,
               latent_shape: tuple[int, ...] = (4, 2, 2)) -> StreamResult:
    if len(script) < plan.total_frames:
        raise ValueError(f"control script covers {len(script)} frames, plan needs {plan.total_frames}")
    if initial_pose is None:
        initial_pose = Pose6DoF(np.array([0.0, 0.0, kinematics.eye_height]), camera_rotation(0.0))
    if reference is None:
        reference = np.random.default_rng(plan.seed).standard_normal(latent_shape)
    latents: dict[int, np.ndarray] = {}
    poses: dict[int, Pose6DoF] = {}
    pool = MemoryPool((), pool_capacity)
    trace: list[SegmentTrace] = []
    for seg in plan.segments:
        new_l, new_p, pool, rec = step_segment(plan, seg, latents, poses, generator, pool, script,
                                               initial_pose, reference, intrinsics, kinematics,
                                               scorer, n_samples)
        latents.update(new_l)
        poses.update(new_p)
        trace.append(rec)
    return StreamResult(latents, poses, trace, pool)
