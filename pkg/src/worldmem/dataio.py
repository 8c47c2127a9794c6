"""Readers and writers for the dataset file formats.

Every reader rejects bad input with :class:`DataFormatError` (which carries
the offending line and column where that makes sense) instead of coercing
it.  Floats in the frame CSV are written with 17 significant digits, so a
write/read cycle reproduces every double bit for bit.  Byte-level examples
live in ``FORMATS.md``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .actions import ActionVector, FrameState
from .curation import CaptionRecord, CaptionSegment, ClipTrajectory, CriterionResult, FilterReport
from .geometry import CameraIntrinsics, Pose6DoF, UnitQuaternion

__all__ = [
    "DataFormatError",
    "StaleReadError",
    "FRAME_CSV_COLUMNS",
    "FrameRecord",
    "write_frame_csv",
    "read_frame_csv",
    "records_to_states",
    "records_to_trajectory",
    "AgentStateFile",
    "write_state_json",
    "read_state_json",
    "StateWriter",
    "StateReader",
    "SegmentEntry",
    "SegmentManifest",
    "ClipManifest",
    "ManifestReport",
    "file_checksum",
    "validate_manifest",
    "caption_to_dict",
    "caption_from_dict",
    "write_captions_jsonl",
    "read_captions_jsonl",
    "report_to_dict",
    "report_from_dict",
    "write_reports_jsonl",
    "read_reports_jsonl",
]

QUAT_TOL = 1e-6
CLIP_SOURCES = ("unreal", "aaa", "real")


class DataFormatError(ValueError):
    """Malformed or out-of-domain input.  ``line`` is 1-based; ``column`` is a name."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.column = column


class StaleReadError(RuntimeError):
    """The state file's counter went backwards, or the file was caught mid-write."""


FRAME_CSV_COLUMNS = (
    "frame_index", "timestamp",
    "player_x", "player_y", "player_z", "player_qw", "player_qx", "player_qy", "player_qz",
    "camera_x", "camera_y", "camera_z", "camera_qw", "camera_qx", "camera_qy", "camera_qz",
    "fov", "aspect", "near", "far",
    "forward", "backward", "left", "right", "jump", "attack",
)

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]


@dataclass(frozen=True)
class FrameRecord:
    """One CSV row.  Rotations are stored raw (w, x, y, z) to keep round trips exact."""

    frame_index: int
    timestamp: float
    player_position: Vec3
    player_rotation: Quat
    camera_position: Vec3
    camera_rotation: Quat
    intrinsics: tuple[float, float, float, float]  # vertical fov (rad), aspect, near, far
    action: tuple[int, int, int, int, int, int]

    @classmethod
    def from_state(cls, frame_index: int, timestamp: float, player_position, player_rotation: UnitQuaternion,
                   camera_pose: Pose6DoF, intrinsics: CameraIntrinsics, action: ActionVector) -> "FrameRecord":
        return cls(int(frame_index), float(timestamp),
                   tuple(float(v) for v in player_position), player_rotation.as_tuple(),
                   tuple(float(v) for v in camera_pose.position), camera_pose.rotation.as_tuple(),
                   (intrinsics.vertical_fov, intrinsics.aspect_ratio, intrinsics.near, intrinsics.far),
                   action.bits())

    def camera_pose(self) -> Pose6DoF:
        return Pose6DoF(np.array(self.camera_position), UnitQuaternion(*self.camera_rotation))

    def camera_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(*self.intrinsics)

    def action_vector(self) -> ActionVector:
        return ActionVector.from_bits(self.action)


def _fmt(x: float) -> str:
    return "%.17g" % x


_INT_RE = re.compile(r"-?[0-9]+\Z")


def _parse_float(cell: str, line: int, col: str) -> float:
    if cell != cell.strip() or not cell:
        raise DataFormatError(f"bad number {cell!r}", line, col)
    try:
        v = float(cell)
    except ValueError:
        raise DataFormatError(f"bad number {cell!r}", line, col) from None
    if not math.isfinite(v):
        raise DataFormatError(f"non-finite value {cell!r}", line, col)
    return v


def _parse_int(cell: str, line: int, col: str) -> int:
    if not _INT_RE.match(cell):
        raise DataFormatError(f"bad integer {cell!r}", line, col)
    return int(cell)


def _check_quat(q: Sequence[float], line: int | None, col: str) -> None:
    n = math.sqrt(sum(c * c for c in q))
    if abs(n - 1.0) > QUAT_TOL:
        raise DataFormatError(f"quaternion norm {n:.9g} is not unit within {QUAT_TOL}", line, col)


def _check_record(r: FrameRecord, line: int | None = None) -> None:
    if r.frame_index < 0:
        raise DataFormatError("frame_index must be >= 0", line, "frame_index")
    _check_quat(r.player_rotation, line, "player_qw")
    _check_quat(r.camera_rotation, line, "camera_qw")
    fov, aspect, near, far = r.intrinsics
    if not 0.0 < fov < math.pi:
        raise DataFormatError("fov must lie in (0, pi) radians", line, "fov")
    if aspect <= 0:
        raise DataFormatError("aspect must be > 0", line, "aspect")
    if not 0.0 < near < far:
        raise DataFormatError("need 0 < near < far", line, "far")
    for name, b in zip(ActionVector.FIELDS, r.action):
        if b not in (0, 1):
            raise DataFormatError(f"action flag must be 0 or 1, got {b}", line, name)
    if r.action[0] and r.action[1]:
        raise DataFormatError("forward and backward both set", line, "backward")
    if r.action[2] and r.action[3]:
        raise DataFormatError("left and right both set", line, "right")


def write_frame_csv(records: Iterable[FrameRecord]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FRAME_CSV_COLUMNS)
    prev = None
    for r in records:
        _check_record(r)
        if prev is not None and r.frame_index <= prev:
            raise DataFormatError(f"frame_index {r.frame_index} does not increase past {prev}")
        prev = r.frame_index
        w.writerow([str(r.frame_index), _fmt(r.timestamp),
                    *map(_fmt, r.player_position), *map(_fmt, r.player_rotation),
                    *map(_fmt, r.camera_position), *map(_fmt, r.camera_rotation),
                    *map(_fmt, r.intrinsics), *map(str, r.action)])
    return buf.getvalue().encode("ascii")


def read_frame_csv(data: bytes | str) -> list[FrameRecord]:
    try:
        text = data.decode("ascii") if isinstance(data, bytes) else data
    except UnicodeDecodeError as e:
        raise DataFormatError(f"non-ASCII byte at offset {e.start}") from None
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError("missing header row", 1) from None
    if tuple(header) != FRAME_CSV_COLUMNS:
        bad = next((i for i, (a, b) in enumerate(zip(header, FRAME_CSV_COLUMNS)) if a != b),
                   min(len(header), len(FRAME_CSV_COLUMNS)))
        col = FRAME_CSV_COLUMNS[bad] if bad < len(FRAME_CSV_COLUMNS) else header[bad]
        raise DataFormatError("header does not match the frame CSV layout", 1, col)
    out: list[FrameRecord] = []
    for row in reader:
        line = reader.line_num
        if len(row) != len(FRAME_CSV_COLUMNS):
            col = FRAME_CSV_COLUMNS[len(row)] if len(row) < len(FRAME_CSV_COLUMNS) else None
            raise DataFormatError(f"expected {len(FRAME_CSV_COLUMNS)} cells, got {len(row)}", line, col)
        cells = dict(zip(FRAME_CSV_COLUMNS, row))
        fl = {c: _parse_float(cells[c], line, c) for c in FRAME_CSV_COLUMNS[1:20]}
        rec = FrameRecord(
            frame_index=_parse_int(cells["frame_index"], line, "frame_index"),
            timestamp=fl["timestamp"],
            player_position=(fl["player_x"], fl["player_y"], fl["player_z"]),
            player_rotation=(fl["player_qw"], fl["player_qx"], fl["player_qy"], fl["player_qz"]),
            camera_position=(fl["camera_x"], fl["camera_y"], fl["camera_z"]),
            camera_rotation=(fl["camera_qw"], fl["camera_qx"], fl["camera_qy"], fl["camera_qz"]),
            intrinsics=(fl["fov"], fl["aspect"], fl["near"], fl["far"]),
            action=tuple(_parse_int(cells[c], line, c) for c in ActionVector.FIELDS),
        )
        _check_record(rec, line)
        if out and rec.frame_index <= out[-1].frame_index:
            raise DataFormatError(f"frame_index {rec.frame_index} does not increase past "
                                  f"{out[-1].frame_index}", line, "frame_index")
        out.append(rec)
    return out


def records_to_states(records: Sequence[FrameRecord]) -> list[FrameState]:
    return [FrameState(r.frame_index, np.array(r.player_position), UnitQuaternion(*r.player_rotation),
                       r.camera_pose(), False, bool(r.action[4]), bool(r.action[5])) for r in records]


def records_to_trajectory(records: Sequence[FrameRecord], clip_id: str = "") -> ClipTrajectory:
    if not records:
        raise DataFormatError("a trajectory needs at least one frame")
    return ClipTrajectory(tuple(r.camera_pose() for r in records),
                          np.array([r.timestamp for r in records]),
                          records[0].camera_intrinsics(), None, clip_id)


# --------------------------------------------------------------------------- agent state


STATE_KEYS = ("attack", "camera_position", "camera_rotation", "camera_yaw", "counter", "frame_index",
              "jump", "nav", "player_position", "player_rotation")


@dataclass(frozen=True)
class AgentStateFile:
    counter: int
    frame_index: int
    player_position: Vec3
    player_rotation: Quat
    camera_position: Vec3
    camera_rotation: Quat
    camera_yaw: float
    nav: bool = False
    jump: bool = False
    attack: bool = False

    _FLOAT_SEQS = {"player_position": 3, "player_rotation": 4, "camera_position": 3, "camera_rotation": 4}

    def to_dict(self) -> dict:
        return {
            "attack": self.attack, "camera_position": list(self.camera_position),
            "camera_rotation": list(self.camera_rotation), "camera_yaw": self.camera_yaw,
            "counter": self.counter, "frame_index": self.frame_index, "jump": self.jump, "nav": self.nav,
            "player_position": list(self.player_position), "player_rotation": list(self.player_rotation),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AgentStateFile":
        expected = set(STATE_KEYS)
        if set(d) != expected:
            missing, extra = sorted(expected - set(d)), sorted(set(d) - expected)
            raise DataFormatError(f"state keys mismatch (missing {missing}, unexpected {extra})")
        for k in ("counter", "frame_index"):
            if type(d[k]) is not int:
                raise DataFormatError(f"{k} must be an integer", column=k)
        for k in ("nav", "jump", "attack"):
            if type(d[k]) is not bool:
                raise DataFormatError(f"{k} must be a boolean", column=k)
        seqs = {}
        for k, n in cls._FLOAT_SEQS.items():
            v = d[k]
            if not isinstance(v, list) or len(v) != n or not all(type(c) in (int, float) for c in v):
                raise DataFormatError(f"{k} must be a list of {n} numbers", column=k)
            seqs[k] = tuple(float(c) for c in v)
        if type(d["camera_yaw"]) not in (int, float):
            raise DataFormatError("camera_yaw must be a number", column="camera_yaw")
        for k in ("player_rotation", "camera_rotation"):
            _check_quat(seqs[k], None, k)
        return cls(d["counter"], d["frame_index"], seqs["player_position"], seqs["player_rotation"],
                   seqs["camera_position"], seqs["camera_rotation"], float(d["camera_yaw"]),
                   d["nav"], d["jump"], d["attack"])


def write_state_json(state: AgentStateFile) -> str:
    """Canonical form: sorted keys, compact separators, shortest round-trip floats."""
    return json.dumps(state.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)


def read_state_json(text: str, last_counter: int | None = None) -> AgentStateFile:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise StaleReadError(f"stale or torn read: {e}") from None
    if not isinstance(d, dict):
        raise DataFormatError("state file must hold a JSON object")
    state = AgentStateFile.from_dict(d)
    if last_counter is not None and state.counter < last_counter:
        raise StaleReadError(f"stale or torn read: counter {state.counter} after {last_counter}")
    return state


class StateWriter:
    """Single writer: bumps the counter and swaps the file in atomically."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.counter = 0

    def write(self, state: AgentStateFile) -> AgentStateFile:
        self.counter += 1
        state = AgentStateFile(self.counter, *(getattr(state, f) for f in (
            "frame_index", "player_position", "player_rotation", "camera_position",
            "camera_rotation", "camera_yaw", "nav", "jump", "attack")))
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(write_state_json(state))
        os.replace(tmp, self.path)
        return state


class StateReader:
    """Polling reader that remembers the highest counter it has seen."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.last_counter: int | None = None

    def poll(self) -> AgentStateFile:
        state = read_state_json(self.path.read_text(), self.last_counter)
        self.last_counter = state.counter
        return state


# --------------------------------------------------------------------------- manifests


@dataclass(frozen=True)
class SegmentEntry:
    file_id: str
    start_time: float
    duration: float
    frame_count: int


@dataclass(frozen=True)
class SegmentManifest:
    segments: tuple[SegmentEntry, ...]
    fps: float = 30.0

    def to_dict(self) -> dict:
        return {"fps": self.fps, "segments": [
            {"duration": s.duration, "file_id": s.file_id, "frame_count": s.frame_count,
             "start_time": s.start_time} for s in self.segments]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SegmentManifest":
        try:
            segs = tuple(SegmentEntry(str(s["file_id"]), float(s["start_time"]), float(s["duration"]),
                                      int(s["frame_count"])) for s in d["segments"])
            return cls(segs, float(d["fps"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"bad segment manifest: {e}") from None

    def contiguity_gaps(self) -> list[tuple[int, float]]:
        """(index, gap in seconds) for every segment that does not follow its predecessor."""
        tol = 1.0 / self.fps
        gaps = []
        for i in range(1, len(self.segments)):
            a, b = self.segments[i - 1], self.segments[i]
            gap = b.start_time - (a.start_time + a.duration)
            if abs(gap) > tol:
                gaps.append((i, gap))
        return gaps


@dataclass(frozen=True)
class ClipManifest:
    clip_id: str
    source: str
    frame_count: int
    csv_path: str
    state_path: str | None = None
    caption_path: str | None = None
    checksum: str = ""  # sha256 hex digest of the CSV file
    segments: SegmentManifest | None = None

    def __post_init__(self):
        if self.source not in CLIP_SOURCES:
            raise DataFormatError(f"source must be one of {CLIP_SOURCES}, got {self.source!r}", column="source")
        if self.frame_count < 0:
            raise DataFormatError("frame_count must be >= 0", column="frame_count")

    def to_json(self) -> str:
        d = {"caption_path": self.caption_path, "checksum": self.checksum, "clip_id": self.clip_id,
             "csv_path": self.csv_path, "frame_count": self.frame_count,
             "segments": None if self.segments is None else self.segments.to_dict(),
             "source": self.source, "state_path": self.state_path}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ClipManifest":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"manifest is not valid JSON: {e}", e.lineno) from None
        keys = {"caption_path", "checksum", "clip_id", "csv_path", "frame_count", "segments", "source",
                "state_path"}
        if not isinstance(d, dict) or set(d) != keys:
            raise DataFormatError(f"manifest keys must be exactly {sorted(keys)}")
        if type(d["frame_count"]) is not int:
            raise DataFormatError("frame_count must be an integer", column="frame_count")
        segs = None if d["segments"] is None else SegmentManifest.from_dict(d["segments"])
        return cls(d["clip_id"], d["source"], d["frame_count"], d["csv_path"], d["state_path"],
                   d["caption_path"], d["checksum"], segs)


@dataclass(frozen=True)
class ManifestReport:
    clip_id: str
    issues: tuple[tuple[str, str], ...] = ()  # (code, message)

    @property
    def passed(self) -> bool:
        return not self.issues

    def codes(self) -> set[str]:
        return {c for c, _ in self.issues}


def file_checksum(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def validate_manifest(manifest: ClipManifest, base_dir: str | os.PathLike = ".") -> ManifestReport:
    """Check files exist, the CSV parses with the declared frame count and checksum, and segments abut."""
    base = Path(base_dir)
    issues: list[tuple[str, str]] = []
    for name in ("csv_path", "state_path", "caption_path"):
        p = getattr(manifest, name)
        if p is not None and not (base / p).is_file():
            issues.append(("missing_file", f"{name} {p} does not exist"))
    csv_file = base / manifest.csv_path
    if csv_file.is_file():
        raw = csv_file.read_bytes()
        if manifest.checksum and hashlib.sha256(raw).hexdigest() != manifest.checksum:
            issues.append(("checksum", "CSV checksum does not match the manifest"))
        try:
            n = len(read_frame_csv(raw))
        except DataFormatError as e:
            issues.append(("csv_format", str(e)))
        else:
            if n != manifest.frame_count:
                issues.append(("frame_count", f"manifest says {manifest.frame_count} frames, CSV has {n}"))
    if manifest.segments is not None:
        for i, gap in manifest.segments.contiguity_gaps():
            issues.append(("contiguity", f"segment {i} starts {gap:+.3f} s off its predecessor's end"))
        total = sum(s.frame_count for s in manifest.segments.segments)
        if total != manifest.frame_count:
            issues.append(("segment_frames", f"segments hold {total} frames, manifest says {manifest.frame_count}"))
    return ManifestReport(manifest.clip_id, tuple(issues))


# --------------------------------------------------------------------------- captions and reports


def caption_to_dict(c: CaptionRecord) -> dict:
    return {"dense_temporal": [{"camera_motion": s.camera_motion, "end_s": s.end_s, "event": s.event,
                                "start_s": s.start_s} for s in c.dense_temporal],
            "narrative": c.narrative, "quality": dict(sorted(c.quality.items())),
            "static_scene": c.static_scene}


def _typed(d: Mapping, key: str, kinds, what: str):
    v = d[key]
    kinds = kinds if isinstance(kinds, tuple) else (kinds,)
    if isinstance(v, bool) and bool not in kinds:
        raise DataFormatError(f"{key} must be {what}", column=key)
    if not isinstance(v, kinds):
        raise DataFormatError(f"{key} must be {what}", column=key)
    return v


def caption_from_dict(d: Mapping) -> CaptionRecord:
    try:
        segs = tuple(CaptionSegment(float(_typed(s, "start_s", (int, float), "a number")),
                                    float(_typed(s, "end_s", (int, float), "a number")),
                                    _typed(s, "event", str, "a string"),
                                    _typed(s, "camera_motion", str, "a string"))
                     for s in _typed(d, "dense_temporal", list, "a list"))
        quality = _typed(d, "quality", dict, "an object")
        for k, v in quality.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise DataFormatError(f"quality score {k} must be a number", column="quality")
        return CaptionRecord(_typed(d, "narrative", str, "a string"), _typed(d, "static_scene", str, "a string"),
                             segs, {k: float(v) for k, v in quality.items()})
    except (KeyError, TypeError, AttributeError) as e:
        raise DataFormatError(f"bad caption record: {e!r}") from None
    except DataFormatError:
        raise
    except ValueError as e:
        raise DataFormatError(f"bad caption record: {e}") from None


def _dump_lines(items: Iterable[dict]) -> str:
    return "".join(json.dumps(d, sort_keys=True, separators=(",", ":")) + "\n" for d in items)


def _load_lines(text: str) -> list[tuple[int, dict]]:
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"invalid JSON: {e.msg}", n) from None
        if not isinstance(d, dict):
            raise DataFormatError("each line must be a JSON object", n)
        out.append((n, d))
    return out


def write_captions_jsonl(records: Mapping[str, CaptionRecord]) -> str:
    """One line per clip: ``{"clip_id": ..., "caption": {...}}``."""
    return _dump_lines({"caption": caption_to_dict(c), "clip_id": cid} for cid, c in records.items())


def read_captions_jsonl(text: str) -> dict[str, CaptionRecord]:
    out: dict[str, CaptionRecord] = {}
    for n, d in _load_lines(text):
        try:
            cid, cap = d["clip_id"], d["caption"]
        except KeyError as e:
            raise DataFormatError(f"missing key {e}", n) from None
        if not isinstance(cid, str) or not isinstance(cap, dict):
            raise DataFormatError("clip_id must be a string and caption an object", n)
        try:
            out[cid] = caption_from_dict(cap)
        except DataFormatError as e:
            raise DataFormatError(str(e), n, e.column) from None
    return out


def report_to_dict(r: FilterReport) -> dict:
    return {"clip_id": r.clip_id, "keep": r.keep, "reasons": list(r.reasons),
            "criteria": {k: {"note": c.note, "passed": c.passed, "statistic": c.statistic}
                         for k, c in sorted(r.criteria.items())}}


def report_from_dict(d: Mapping) -> FilterReport:
    try:
        crit = {}
        for k, v in _typed(d, "criteria", dict, "an object").items():
            stat = v["statistic"]
            if stat is not None and (isinstance(stat, bool) or not isinstance(stat, (int, float))):
                raise DataFormatError(f"statistic of {k} must be a number or null", column="criteria")
            crit[k] = CriterionResult(_typed(v, "passed", bool, "a boolean"),
                                      None if stat is None else float(stat), _typed(v, "note", str, "a string"))
        reasons = _typed(d, "reasons", list, "a list")
        if not all(isinstance(x, str) for x in reasons):
            raise DataFormatError("reasons must be strings", column="reasons")
        return FilterReport(_typed(d, "clip_id", str, "a string"), crit, _typed(d, "keep", bool, "a boolean"),
                            tuple(reasons))
    except (KeyError, TypeError, AttributeError) as e:
        raise DataFormatError(f"bad filter report: {e!r}") from None


def write_reports_jsonl(reports: Iterable[FilterReport]) -> str:
    """Infinite or NaN statistics are written as the JSON extensions ``Infinity`` / ``NaN``."""
    return _dump_lines(report_to_dict(r) for r in reports)


def read_reports_jsonl(text: str) -> list[FilterReport]:
    out = []
    for n, d in _load_lines(text):
        try:
            out.append(report_from_dict(d))
        except DataFormatError as e:
            raise DataFormatError(str(e), n) from None
    return out
