"""Clip quality filtering and recording QA.

Three trajectory statistics gate a clip (depth reprojection consistency,
max/median displacement ratio, median speed) plus an optional caption
quality gate.  Thresholds come from percentiles of a trusted corpus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import CameraIntrinsics, Pose6DoF, relative_pose

__all__ = [
    "QUALITY_DIMENSIONS",
    "DepthRequiredError",
    "ClipTrajectory",
    "CaptionSegment",
    "CaptionRecord",
    "FilterThresholds",
    "CriterionResult",
    "FilterReport",
    "QAReport",
    "reprojection_error",
    "displacement_ratio",
    "median_speed",
    "apply_filters",
    "calibrate_thresholds",
    "qa_scan",
]

QUALITY_DIMENSIONS = (
    "motion_smoothness",
    "background_dynamics",
    "scene_complexity",
    "physics_plausibility",
    "overall",
)


class DepthRequiredError(ValueError):
    """Reprojection error was requested for a clip without depth maps."""


@dataclass(frozen=True, eq=False)
class ClipTrajectory:
    poses: tuple[Pose6DoF, ...]
    timestamps: np.ndarray
    intrinsics: CameraIntrinsics | None = None
    depth: np.ndarray | None = None  # (frames, H, W) z-depth in meters
    clip_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        ts = np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, "timestamps", ts)
        if len(self.poses) < 2:
            raise ValueError("a clip needs at least 2 poses")
        if ts.shape != (len(self.poses),):
            raise ValueError("one timestamp per pose required")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.depth is not None:
            d = np.asarray(self.depth, dtype=np.float64)
            if d.ndim != 3 or d.shape[0] != len(self.poses):
                raise ValueError("depth must be (frames, H, W)")
            object.__setattr__(self, "depth", d)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses])

    def step_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.positions, axis=0), axis=1)


@dataclass(frozen=True)
class CaptionSegment:
    start_s: float
    end_s: float
    event: str
    camera_motion: str


@dataclass(frozen=True)
class CaptionRecord:
    narrative: str
    static_scene: str
    dense_temporal: tuple[CaptionSegment, ...] = ()
    quality: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dense_temporal", tuple(self.dense_temporal))
        missing = set(QUALITY_DIMENSIONS) - set(self.quality)
        extra = set(self.quality) - set(QUALITY_DIMENSIONS)
        if missing or extra:
            raise ValueError(f"quality must have exactly {QUALITY_DIMENSIONS}; missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in self.quality.items():
            if not (0.0 <= float(v) <= 10.0):
                raise ValueError(f"quality score {k}={v} outside [0, 10]")
        prev_end = -math.inf
        for seg in self.dense_temporal:
            if seg.end_s < seg.start_s:
                raise ValueError(f"caption segment ends before it starts: {seg}")
            if seg.start_s < prev_end:
                raise ValueError("dense temporal captions must be sorted and non-overlapping")
            prev_end = seg.end_s


@dataclass(frozen=True)
class FilterThresholds:
    max_reproj_err: float = math.inf
    max_disp_ratio: float = math.inf
    speed_band: tuple[float, float] = (0.0, math.inf)
    min_quality: Mapping[str, float] = field(default_factory=lambda: {"overall": 0.0})

    def __post_init__(self):
        lo, hi = self.speed_band
        if not lo < hi:
            raise ValueError(f"speed band must satisfy v_lo < v_hi, got {self.speed_band}")
        vals = [self.max_reproj_err, self.max_disp_ratio, lo, hi, *self.min_quality.values()]
        if any(v < 0 for v in vals):
            raise ValueError("thresholds must be non-negative")
        unknown = set(self.min_quality) - set(QUALITY_DIMENSIONS)
        if unknown:
            raise ValueError(f"unknown quality dimensions {sorted(unknown)}")


@dataclass(frozen=True)
class CriterionResult:
    passed: bool
    statistic: float | None
    note: str = ""


@dataclass(frozen=True)
class FilterReport:
    clip_id: str
    criteria: Mapping[str, CriterionResult]
    keep: bool
    reasons: tuple[str, ...]


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``img`` at continuous pixel coords (pixel centers at +0.5)."""
    h, w = img.shape
    x, y = u - 0.5, v - 0.5
    x0, y0 = np.floor(x).astype(int), np.floor(y).astype(int)
    out = np.full(u.shape, np.nan)
    ok = (x0 >= 0) & (y0 >= 0) & (x0 + 1 < w) & (y0 + 1 < h)
    if not np.any(ok):
        # single-row/column images and borders: fall back to nearest pixel
        ok_n = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        out[ok_n] = img[v[ok_n].astype(int), u[ok_n].astype(int)]
        return out
    fx, fy = x[ok] - x0[ok], y[ok] - y0[ok]
    a, b = img[y0[ok], x0[ok]], img[y0[ok], x0[ok] + 1]
    c, d = img[y0[ok] + 1, x0[ok]], img[y0[ok] + 1, x0[ok] + 1]
    with np.errstate(invalid="ignore"):  # inf depth (sky) times a zero weight
        out[ok] = (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy
    return out


def _unproject(u, v, z, fx, fy, cx, cy) -> np.ndarray:
    # camera +X is image-left, +Y is image-up
    return np.stack([-(u - cx) / fx * z, -(v - cy) / fy * z, z], axis=-1)


def _project(p, fx, fy, cx, cy):
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return cx - fx * p[:, 0] / z, cy - fy * p[:, 1] / z, z


def reprojection_error(clip: ClipTrajectory, sample_px: int = 512, stride: int = 3,
                       occlusion_tol: float = 0.05, seed: int = 0) -> float:
    """Mean round-trip reprojection error in pixels.

    Sampled pixels of frame ``t`` are lifted with their depth, moved into
    frame ``t + stride`` by the relative pose, lifted again with that frame's
    depth, moved back and reprojected; the distance to the start pixel is the
    error.  Samples leaving the image or failing the relative depth test are
    discarded.  Returns ``nan`` when no sample survives.
    """
    if clip.depth is None or clip.intrinsics is None:
        raise DepthRequiredError("depth required: clip has no depth maps/intrinsics")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n_frames, h, w = clip.depth.shape
    fx, fy = clip.intrinsics.focal_lengths(h, w)
    cx, cy = 0.5 * w, 0.5 * h
    rng = np.random.default_rng(seed)
    errs = []
    for t in range(n_frames - stride):
        d0, d1 = clip.depth[t], clip.depth[t + stride]
        flat = rng.choice(h * w, size=min(sample_px, h * w), replace=False)
        v0, u0 = np.divmod(flat, w)
        u0 = u0 + 0.5
        v0 = v0 + 0.5
        z0 = d0[v0.astype(int), u0.astype(int)]
        ok = np.isfinite(z0) & (z0 > 0)
        u0, v0, z0 = u0[ok], v0[ok], z0[ok]
        rel = relative_pose(clip.poses[t + stride], clip.poses[t])  # frame t -> frame t+stride
        p1 = rel.transform_points(_unproject(u0, v0, z0, fx, fy, cx, cy))
        u1, v1, zp = _project(p1, fx, fy, cx, cy)
        z1 = _bilinear(d1, u1, v1)
        ok = (zp > 0) & np.isfinite(z1) & (np.abs(zp - z1) <= occlusion_tol * zp)
        if not np.any(ok):
            continue
        back = relative_pose(clip.poses[t], clip.poses[t + stride])
        p0 = back.transform_points(_unproject(u1[ok], v1[ok], z1[ok], fx, fy, cx, cy))
        ur, vr, _ = _project(p0, fx, fy, cx, cy)
        errs.append(np.hypot(ur - u0[ok], vr - v0[ok]))
    if not errs:
        return math.nan
    return float(np.mean(np.concatenate(errs)))


def displacement_ratio(clip: ClipTrajectory) -> float:
    """Largest per-frame displacement over the median one.

    A fully stationary clip has ratio 1; a clip with zero median but some
    motion has ratio ``inf``.
    """
    if len(clip.poses) < 3:
        raise ValueError("displacement ratio needs at least 3 poses")
    steps = clip.step_lengths()
    mx, med = float(steps.max()), float(np.median(steps))
    if mx == 0.0:
        return 1.0
    if med == 0.0:
        return math.inf
    return mx / med


def median_speed(clip: ClipTrajectory) -> float:
    return float(np.median(clip.step_lengths() / np.diff(clip.timestamps)))


def apply_filters(clip: ClipTrajectory, captions: CaptionRecord | None, th: FilterThresholds,
                  reproj_kwargs: Mapping | None = None) -> FilterReport:
    criteria: dict[str, CriterionResult] = {}
    if clip.depth is not None and clip.intrinsics is not None:
        err = reprojection_error(clip, **(reproj_kwargs or {}))
        ok = math.isfinite(err) and err <= th.max_reproj_err
        criteria["reprojection"] = CriterionResult(ok, err, "" if math.isfinite(err) else "no valid samples")
    else:
        criteria["reprojection"] = CriterionResult(True, None, "skipped: no depth")

    if len(clip.poses) >= 3:
        ratio = displacement_ratio(clip)
        criteria["displacement"] = CriterionResult(ratio <= th.max_disp_ratio, ratio)
    else:
        criteria["displacement"] = CriterionResult(True, None, "skipped: fewer than 3 poses")

    speed = median_speed(clip)
    lo, hi = th.speed_band
    criteria["speed"] = CriterionResult(lo <= speed <= hi, speed)

    if captions is not None:
        failing = [k for k, m in th.min_quality.items() if captions.quality[k] < m]
        criteria["quality"] = CriterionResult(not failing, float(captions.quality["overall"]),
                                              ",".join(failing))
    else:
        criteria["quality"] = CriterionResult(True, None, "skipped: no captions")

    reasons = tuple(name for name, r in criteria.items() if not r.passed)
    return FilterReport(clip.clip_id, criteria, not reasons, reasons)


def _upper(values: np.ndarray, q: float) -> float:
    # order-statistic percentiles: thresholds are attained sample values
    return float(np.percentile(values, q, method="higher"))


def _lower(values: np.ndarray, q: float) -> float:
    return float(np.percentile(values, q, method="lower"))


def calibrate_thresholds(ground_truth_clips: Sequence[ClipTrajectory], reproj_pct: float = 99.0,
                         ratio_pct: float = 99.0, speed_pct: tuple[float, float] = (1.0, 99.0),
                         min_quality: Mapping[str, float] | None = None, min_clips: int = 20,
                         reproj_kwargs: Mapping | None = None) -> FilterThresholds:
    """Percentile thresholds from a trusted corpus.

    Reprojection is calibrated only when every clip carries depth;
    otherwise that threshold stays unbounded.
    """
    if len(ground_truth_clips) < min_clips:
        raise ValueError(f"calibration needs at least {min_clips} clips, got {len(ground_truth_clips)}")
    ratios = np.array([displacement_ratio(c) for c in ground_truth_clips])
    speeds = np.array([median_speed(c) for c in ground_truth_clips])
    max_reproj = math.inf
    if all(c.depth is not None and c.intrinsics is not None for c in ground_truth_clips):
        errs = np.array([reprojection_error(c, **(reproj_kwargs or {})) for c in ground_truth_clips])
        errs = errs[np.isfinite(errs)]
        if errs.size:
            max_reproj = _upper(errs, reproj_pct)
    lo, hi = _lower(speeds, speed_pct[0]), _upper(speeds, speed_pct[1])
    if not lo < hi:
        # degenerate corpus (all speeds equal): keep the attained value inside a closed band
        hi = np.nextafter(lo, math.inf)
    return FilterThresholds(
        max_reproj_err=max_reproj,
        max_disp_ratio=_upper(ratios, ratio_pct),
        speed_band=(lo, float(hi)),
        min_quality=dict(min_quality or {"overall": 0.0}),
    )


@dataclass(frozen=True, eq=False)
class QAReport:
    identical_runs: tuple[tuple[int, int], ...]  # (start, length)
    outlier_frames: tuple[int, ...]
    repaired_positions: np.ndarray
    missing_frames: int

    @property
    def incomplete(self) -> bool:
        return self.missing_frames > 0

    @property
    def clean(self) -> bool:
        return not (self.identical_runs or self.outlier_frames or self.incomplete)


def _rolling_median(x: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    return np.array([np.median(x[max(0, i - half): i + half + 1]) for i in range(len(x))])


def qa_scan(frame_digests: Sequence, clip: ClipTrajectory, manifest_expected: int,
            min_run: int = 2, spike_factor: float = 10.0, window: int = 9) -> QAReport:
    """Identical-frame runs, positional spikes (with repair) and missing frames.

    A position is a spike when both the step into it and the step out of it
    exceed ``spike_factor`` times the rolling median step.  Spikes are
    replaced by linear interpolation between the nearest clean neighbours.
    """
    runs = []
    i = 0
    while i < len(frame_digests):
        j = i
        while j + 1 < len(frame_digests) and frame_digests[j + 1] == frame_digests[i]:
            j += 1
        if j - i + 1 >= min_run:
            runs.append((i, j - i + 1))
        i = j + 1

    pos = clip.positions
    steps = clip.step_lengths()
    med = _rolling_median(steps, window)
    big = steps > spike_factor * np.maximum(med, 1e-12)
    n = len(pos)
    outliers = [t for t in range(1, n - 1) if big[t - 1] and big[t]]
    # an endpoint has one step; flag it when that step is anomalous but the next one is not
    if n >= 3:
        if big[0] and not big[1]:
            outliers.insert(0, 0)
        if big[-1] and not big[-2]:
            outliers.append(n - 1)

    repaired = pos.copy()
    if outliers:
        bad = np.zeros(n, dtype=bool)
        bad[outliers] = True
        good = np.flatnonzero(~bad)
        if good.size:
            for d in range(3):
                repaired[bad, d] = np.interp(np.flatnonzero(bad), good, pos[good, d])

    missing = max(0, int(manifest_expected) - len(frame_digests))
    return QAReport(tuple(runs), tuple(outliers), repaired, missing)
