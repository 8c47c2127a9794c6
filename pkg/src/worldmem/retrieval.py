"""Camera-aware memory retrieval by frustum overlap.

Two scorers share one contract: the fraction of the query frustum's volume
that also lies inside the candidate frustum.

* ``exact``   - clip the query polytope by the candidate's six half-spaces and
  integrate the result's volume.
* ``sampled`` - draw points uniformly inside the query frustum and count the
  ones the candidate contains.  Unbiased for the exact score.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence, Union

import numpy as np

from . import polytope
from .geometry import (
    CONTAINMENT_TOL,
    CameraIntrinsics,
    Frustum,
    Pose6DoF,
    frustum_from_pose,
    points_in_frustum,
)

__all__ = [
    "GeometryError",
    "DuplicateFrameError",
    "MemoryEntry",
    "MemoryPool",
    "RetrievalResult",
    "BenchRow",
    "overlap_exact",
    "overlap_sampled",
    "sample_in_frustum",
    "batch_overlap",
    "derive_seed",
    "retrieve",
    "pool_update",
    "bench_overlap",
    "write_bench_csv",
]

SCORERS = ("exact", "sampled")
DEFAULT_SAMPLES = 4096

View = Union[Frustum, tuple]


class GeometryError(ValueError):
    """Raised when a frustum cannot be scored (e.g. zero volume)."""


class DuplicateFrameError(ValueError):
    """Raised when a memory update reuses or reorders frame indices."""


def _as_frustum(view: View) -> Frustum:
    if isinstance(view, Frustum):
        return view
    pose, intr = view
    return frustum_from_pose(pose, intr)


def _separated(a: Frustum, b: Frustum, tol: float) -> bool:
    """True if some face plane of either frustum has the other entirely outside."""
    if np.any(np.all(a.corners @ b.normals.T + b.offsets < -tol, axis=0)):
        return True
    return bool(np.any(np.all(b.corners @ a.normals.T + a.offsets < -tol, axis=0)))


def overlap_exact(query: View, cand: View) -> float:
    q, c = _as_frustum(query), _as_frustum(cand)
    q_vol = q.volume
    if not (q_vol > 0.0 and math.isfinite(q_vol)):
        raise GeometryError(f"query frustum has non-positive volume {q_vol}; check intrinsics")
    scale = 1.0 + float(np.max(np.abs(q.corners)))
    if _separated(q, c, 1e-12 * scale):
        return 0.0
    if np.all(points_in_frustum(c, q.corners, tol=1e-12 * scale)):
        return 1.0
    clipped = polytope.clip_convex(polytope.polyhedron_from_frustum(q), c.normals, c.offsets)
    inter = polytope.volume(clipped) if clipped else 0.0
    return min(1.0, max(0.0, inter / q_vol))


def sample_in_frustum(f: Frustum, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` world points uniform in the frustum volume.

    Rejection sampling in the frustum's camera-local bounding box, which keeps
    uniformity trivially correct; acceptance is roughly 1/3 for near << far.
    """
    intr = f.intrinsics
    hx, hy = intr.tan_half_h * intr.far, intr.tan_half_v * intr.far
    accept = intr.frustum_volume() / (4.0 * hx * hy * (intr.far - intr.near))
    chunks = []
    have = 0
    while have < n:
        m = int((n - have) / accept * 1.1) + 32
        u = rng.random((3, m))
        x = (2.0 * u[0] - 1.0) * hx
        y = (2.0 * u[1] - 1.0) * hy
        z = intr.near + u[2] * (intr.far - intr.near)
        keep = (np.abs(x) <= intr.tan_half_h * z) & (np.abs(y) <= intr.tan_half_v * z)
        chunks.append(np.stack([x[keep], y[keep], z[keep]], axis=1))
        have += chunks[-1].shape[0]
    local = np.concatenate(chunks)[:n]
    return local @ f.pose.rotation.to_matrix().T + f.pose.position


def overlap_sampled(query: View, cand: View, n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    q, c = _as_frustum(query), _as_frustum(cand)
    if not q.volume > 0.0:
        raise GeometryError("query frustum has non-positive volume; check intrinsics")
    rng = np.random.default_rng(seed)
    pts = sample_in_frustum(q, n_samples, rng)
    scale = 1.0 + float(np.max(np.abs(q.corners)))
    inside = points_in_frustum(c, pts, tol=CONTAINMENT_TOL * scale)
    return int(np.count_nonzero(inside)) / n_samples


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit stream seed for candidate ``index`` under ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def batch_overlap(query: View, candidates: Sequence[View], scorer: str = "exact",
                  n_samples: int = DEFAULT_SAMPLES, seed: int = 0, jobs: int = 1) -> list[float]:
    """Score many candidates against one query.

    Element ``i`` equals ``overlap_sampled(query, candidates[i], n_samples,
    derive_seed(seed, i))`` (or the exact score), whatever ``jobs`` is.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if scorer not in SCORERS:
        raise ValueError(f"unknown scorer {scorer!r}; expected one of {SCORERS}")
    q = _as_frustum(query)

    def score(i: int) -> float:
        if scorer == "exact":
            return overlap_exact(q, candidates[i])
        return overlap_sampled(q, candidates[i], n_samples, derive_seed(seed, i))

    idx = range(len(candidates))
    if jobs <= 1:
        return [score(i) for i in idx]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(score, idx))


@dataclass(frozen=True)
class MemoryEntry:
    frame_index: int
    pose: Pose6DoF
    intrinsics: CameraIntrinsics
    payload_id: Hashable = None
    is_sink: bool = False

    def frustum(self) -> Frustum:
        return frustum_from_pose(self.pose, self.intrinsics)


@dataclass(frozen=True)
class MemoryPool:
    """Immutable snapshot of the online memory pool.

    ``capacity`` bounds the number of non-sink entries (``None`` = unbounded).
    Updates return a new pool, so readers holding a snapshot never observe a
    partial update.
    """

    entries: tuple[MemoryEntry, ...] = ()
    capacity: int | None = None

    def __post_init__(self):
        idx = [e.frame_index for e in self.entries]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DuplicateFrameError("pool entries must have strictly increasing frame_index")
        if sum(e.is_sink for e in self.entries) > 1:
            raise ValueError("a pool holds at most one sink entry")
        if self.capacity is not None and self.capacity < 0:
            raise ValueError("capacity must be >= 0")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def sink(self) -> MemoryEntry | None:
        return next((e for e in self.entries if e.is_sink), None)

    def frame_indices(self) -> list[int]:
        return [e.frame_index for e in self.entries]


def pool_update(pool: MemoryPool, new_entries: Iterable[MemoryEntry]) -> MemoryPool:
    new = list(new_entries)
    last = pool.entries[-1].frame_index if pool.entries else None
    seen = set(pool.frame_indices())
    for e in new:
        if e.frame_index in seen:
            raise DuplicateFrameError(f"frame_index {e.frame_index} already present")
        if last is not None and e.frame_index <= last:
            raise DuplicateFrameError(
                f"frame_index {e.frame_index} does not exceed existing maximum {last}")
        seen.add(e.frame_index)
        last = e.frame_index
    entries = list(pool.entries) + new
    if pool.capacity is not None:
        regular = [e for e in entries if not e.is_sink]
        drop = {e.frame_index for e in regular[: max(0, len(regular) - pool.capacity)]}
        entries = [e for e in entries if e.frame_index not in drop]
    return MemoryPool(tuple(entries), pool.capacity)


@dataclass(frozen=True)
class RetrievalResult:
    selected: tuple[tuple[MemoryEntry, float], ...]
    query_index: int | None

    @property
    def frame_indices(self) -> list[int]:
        return [e.frame_index for e, _ in self.selected]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.selected]


def retrieve(query_pose: Pose6DoF, query_intr: CameraIntrinsics, pool: MemoryPool, k: int = 5,
             scorer: str = "exact", query_index: int | None = None,
             n_samples: int = DEFAULT_SAMPLES, seed: int = 0, jobs: int = 1) -> RetrievalResult:
    """Top-``k`` memories by overlap with the query view.

    Ties go to the more recent frame.  The sink is appended after the top-k
    when it was not selected on its own merit.  With ``query_index`` set, only
    entries strictly older than the query are considered.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cands = [e for e in pool.entries if query_index is None or e.frame_index < query_index]
    if not cands:
        return RetrievalResult((), query_index)
    scores = batch_overlap((query_pose, query_intr), [e.frustum() for e in cands],
                           scorer, n_samples, seed, jobs)
    order = sorted(range(len(cands)), key=lambda i: (-scores[i], -cands[i].frame_index))
    chosen = order[:k]
    selected = [(cands[i], scores[i]) for i in chosen]
    sink_pos = next((i for i, e in enumerate(cands) if e.is_sink), None)
    if sink_pos is not None and sink_pos not in chosen:
        selected.append((cands[sink_pos], scores[sink_pos]))
    return RetrievalResult(tuple(selected), query_index)


@dataclass
class BenchRow:
    scorer: str
    pool_size: int
    n_samples: int
    wall_time_us: float
    argmax_agreement: float

    FIELDS = ("scorer", "pool_size", "n_samples", "wall_time_us", "argmax_agreement")


def bench_overlap(pools: Sequence[tuple[View, Sequence[View]]], scorer: str = "sampled",
                  n_samples: int = DEFAULT_SAMPLES, seed: int = 0, jobs: int = 1) -> BenchRow:
    """Time one scorer over ``(query, candidates)`` pools.

    ``argmax_agreement`` is the fraction of pools whose argmax matches the
    exact scorer's; timing covers only the benchmarked scorer.
    """
    agree = 0
    elapsed = 0.0
    for p, (query, cands) in enumerate(pools):
        t0 = time.perf_counter()
        got = batch_overlap(query, cands, scorer, n_samples, derive_seed(seed, p), jobs)
        elapsed += time.perf_counter() - t0
        ref = got if scorer == "exact" else batch_overlap(query, cands, "exact")
        agree += int(np.argmax(got) == np.argmax(ref))
    pool_size = len(pools[0][1]) if pools else 0
    return BenchRow(scorer, pool_size, n_samples if scorer == "sampled" else 0,
                    elapsed * 1e6 / max(1, len(pools)), agree / max(1, len(pools)))


def write_bench_csv(rows: Iterable[BenchRow], stream: io.TextIOBase | None = None) -> str:
    buf = stream if stream is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BenchRow.FIELDS)
    for r in rows:
        w.writerow([r.scorer, r.pool_size, r.n_samples, f"{r.wall_time_us:.3f}", f"{r.argmax_agreement:.6f}"])
    return buf.getvalue() if stream is None else ""
