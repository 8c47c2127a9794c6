"""Grid-world stand-in for the navmesh exploration agent.

A greedy intrinsic-reward goal selector sits on top of an A* planner.  When
the agent stops making progress, a fallback cascade (directional coverage,
lawnmower route, expanding-radius retry) picks a new goal.  Each tick emits a
capture record: player pose, camera pose, WSAD action and a frame digest.

Cells are ``(ix, iy)`` with ``ix`` along world +X; grids are indexed
``[iy, ix]`` and the flat cell index is ``iy * width + ix``.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .actions import ActionVector, Direction, FrameState, direction_offset, direction_to_action
from .geometry import CameraIntrinsics, Pose6DoF, UnitQuaternion, camera_rotation

__all__ = [
    "OffGridError",
    "NoGoalError",
    "GridNavMesh",
    "AgentState",
    "AgentSnapshot",
    "StuckConfig",
    "StuckSignal",
    "CharacterAssembly",
    "ExplorerConfig",
    "CaptureRecord",
    "Episode",
    "plan_path",
    "path_cost",
    "distance_field",
    "select_goal",
    "lawnmower_route",
    "fallback_goal",
    "fallback_cascade",
    "stuck_check",
    "randomize_camera",
    "character_variants",
    "sample_character",
    "run_episode",
    "random_walk_coverage",
    "random_maze",
]

Cell = tuple[int, int]
SQRT2 = math.sqrt(2.0)
_NEIGHBORS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))
FALLBACK_STAGES = ("directional", "shape", "multi_radius")
RING_RADII = (2, 4, 8, 16)


class OffGridError(ValueError):
    pass


class NoGoalError(RuntimeError):
    pass


@dataclass
class GridNavMesh:
    """Walkability grid.

    ``blocked`` marks cells the navmesh believes walkable but that physically
    stop the agent (props, invisible colliders); planners never see it.
    """

    walkable: np.ndarray
    cell_size: float = 1.0
    richness: np.ndarray | None = None
    blocked: np.ndarray | None = None

    def __post_init__(self):
        self.walkable = np.asarray(self.walkable, dtype=bool)
        if self.walkable.ndim != 2 or not self.walkable.any():
            raise ValueError("walkable must be a 2-D grid with at least one walkable cell")
        if self.richness is None:
            self.richness = np.zeros(self.walkable.shape)
        self.richness = np.asarray(self.richness, dtype=np.float64)
        if self.richness.shape != self.walkable.shape or np.any(self.richness[self.walkable] < 0):
            raise ValueError("richness must match the grid and be >= 0 on walkable cells")
        if self.blocked is None:
            self.blocked = np.zeros(self.walkable.shape, dtype=bool)
        self.blocked = np.asarray(self.blocked, dtype=bool)

    @classmethod
    def open(cls, width: int, height: int, **kw) -> "GridNavMesh":
        return cls(np.ones((height, width), dtype=bool), **kw)

    @property
    def width(self) -> int:
        return self.walkable.shape[1]

    @property
    def height(self) -> int:
        return self.walkable.shape[0]

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def is_walkable(self, c: Cell) -> bool:
        return self.in_bounds(c) and bool(self.walkable[c[1], c[0]])

    def index(self, c: Cell) -> int:
        return c[1] * self.width + c[0]

    def center(self, c: Cell) -> np.ndarray:
        return (np.asarray(c, dtype=np.float64) + 0.5) * self.cell_size

    def cell_of(self, xy) -> Cell:
        return (int(math.floor(xy[0] / self.cell_size)), int(math.floor(xy[1] / self.cell_size)))


def _steps(mesh: GridNavMesh, c: Cell, walk: np.ndarray):
    """8-connected moves; diagonals may not cut a blocked corner."""
    x, y = c
    w, h = mesh.width, mesh.height
    for dx, dy in _NEIGHBORS:
        nx, ny = x + dx, y + dy
        if not (0 <= nx < w and 0 <= ny < h) or not walk[ny, nx]:
            continue
        if dx and dy:
            if not (walk[y, nx] and walk[ny, x]):
                continue
            yield (nx, ny), SQRT2
        else:
            yield (nx, ny), 1.0


def _octile(a: Cell, b: Cell) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def plan_path(mesh: GridNavMesh, start: Cell, goal: Cell, walk: np.ndarray | None = None) -> list[Cell]:
    """Shortest 8-connected walkable path by A* (octile heuristic).

    Returns ``[]`` when the goal is unreachable or unwalkable.
    """
    start, goal = tuple(start), tuple(goal)
    if not mesh.in_bounds(goal):
        raise OffGridError(f"goal {goal} is outside the {mesh.width}x{mesh.height} grid")
    walk = mesh.walkable if walk is None else walk
    if not mesh.in_bounds(start) or not walk[start[1], start[0]]:
        raise ValueError(f"start {start} is not walkable")
    if not walk[goal[1], goal[0]]:
        return []
    if start == goal:
        return [start]
    g = {start: 0.0}
    parent: dict[Cell, Cell] = {}
    tie = 0
    open_heap = [(_octile(start, goal), tie, start)]
    closed = set()
    while open_heap:
        _, _, cur = heapq.heappop(open_heap)
        if cur in closed:
            continue
        if cur == goal:
            path = [cur]
            while cur in parent:
                cur = parent[cur]
                path.append(cur)
            return path[::-1]
        closed.add(cur)
        gc = g[cur]
        for nxt, cost in _steps(mesh, cur, walk):
            ng = gc + cost
            if ng < g.get(nxt, math.inf) - 1e-12:
                g[nxt] = ng
                parent[nxt] = cur
                tie += 1
                heapq.heappush(open_heap, (ng + _octile(nxt, goal), tie, nxt))
    return []


def path_cost(path: Sequence[Cell]) -> float:
    return sum(SQRT2 if (a[0] != b[0] and a[1] != b[1]) else 1.0 for a, b in zip(path, path[1:]))


def distance_field(mesh: GridNavMesh, start: Cell, walk: np.ndarray | None = None) -> np.ndarray:
    """Octile path cost from ``start`` to every cell (``inf`` if unreachable)."""
    walk = mesh.walkable if walk is None else walk
    dist = np.full(mesh.walkable.shape, np.inf)
    dist[start[1], start[0]] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, c = heapq.heappop(heap)
        if d > dist[c[1], c[0]]:
            continue
        for nxt, cost in _steps(mesh, c, walk):
            nd = d + cost
            if nd < dist[nxt[1], nxt[0]] - 1e-12:
                dist[nxt[1], nxt[0]] = nd
                heapq.heappush(heap, (nd, nxt))
    return dist


@dataclass
class AgentState:
    position: np.ndarray  # world (x, y), meters
    visit_counts: np.ndarray
    yaw: float = 0.0
    camera_yaw: float = 0.0
    camera_pitch: float = 0.0
    tick: int = 0
    goal: Cell | None = None
    path: list = field(default_factory=list)
    path_index: int = 0
    path_start_tick: int = 0
    route_cursor: int = 0
    failed_goals: set = field(default_factory=set)
    learned_blocked: set = field(default_factory=set)

    @classmethod
    def fresh(cls, mesh: GridNavMesh, cell: Cell, **kw) -> "AgentState":
        if not mesh.is_walkable(cell):
            raise ValueError(f"start cell {cell} is not walkable")
        return cls(position=mesh.center(cell), visit_counts=np.zeros(mesh.walkable.shape, dtype=np.int64), **kw)

    def cell(self, mesh: GridNavMesh) -> Cell:
        return mesh.cell_of(self.position)

    def walk_mask(self, mesh: GridNavMesh) -> np.ndarray:
        if not self.learned_blocked:
            return mesh.walkable
        walk = mesh.walkable.copy()
        for c in self.learned_blocked:
            walk[c[1], c[0]] = False
        return walk


def _pick_nearest(cells: np.ndarray, target, mesh: GridNavMesh) -> Cell:
    """``cells`` is an (n, 2) array of (ix, iy); nearest to ``target``, ties to lowest index."""
    d2 = (cells[:, 0] - target[0]) ** 2 + (cells[:, 1] - target[1]) ** 2
    idx = cells[:, 1] * mesh.width + cells[:, 0]
    best = np.lexsort((idx, d2))[0]
    return (int(cells[best, 0]), int(cells[best, 1]))


def _candidates(state: AgentState, mesh: GridNavMesh, exclude: Iterable[Cell]):
    here = state.cell(mesh)
    walk = state.walk_mask(mesh)
    dist = distance_field(mesh, here, walk)
    ok = np.isfinite(dist) & walk
    ok[here[1], here[0]] = False
    for c in exclude:
        if mesh.in_bounds(c):
            ok[c[1], c[0]] = False
    return here, dist, ok


def select_goal(state: AgentState, mesh: GridNavMesh, weights: tuple[float, float] = (1.0, 0.5),
                exclude: Iterable[Cell] = (), max_cost: float | None = None) -> Cell:
    """Reachable cell maximizing ``alpha / (1 + visits) + beta * richness``.

    Ties go to the cell farthest (by path cost) from the agent, then to the
    lowest flat index.  ``max_cost`` optionally limits candidates to a path
    cost horizon; when nothing qualifies inside it the whole map is searched.
    """
    alpha, beta = weights
    if alpha < 0 or beta < 0 or (alpha == 0 and beta == 0):
        raise ValueError("weights must be >= 0 and not both zero")
    _, dist, ok = _candidates(state, mesh, exclude)
    if max_cost is not None and (ok & (dist <= max_cost)).any():
        ok = ok & (dist <= max_cost)
    if not ok.any():
        raise NoGoalError("no reachable goal cell")
    score = alpha / (1.0 + state.visit_counts) + beta * mesh.richness
    iy, ix = np.nonzero(ok)
    s = score[iy, ix]
    top = s == s.max()
    iy, ix = iy[top], ix[top]
    order = np.lexsort((iy * mesh.width + ix, -dist[iy, ix]))
    return (int(ix[order[0]]), int(iy[order[0]]))


def lawnmower_route(mesh: GridNavMesh) -> list[Cell]:
    """Boustrophedon sweep over walkable cells: even rows left-to-right, odd rows back."""
    route = []
    for iy in range(mesh.height):
        xs = range(mesh.width) if iy % 2 == 0 else range(mesh.width - 1, -1, -1)
        route.extend((ix, iy) for ix in xs if mesh.walkable[iy, ix])
    return route


def fallback_goal(state: AgentState, mesh: GridNavMesh, stage: str, range_cells: int = 8,
                  exclude: Iterable[Cell] = ()) -> Cell:
    if stage not in FALLBACK_STAGES:
        raise ValueError(f"unknown fallback stage {stage!r}")
    exclude = set(exclude)
    here, dist, ok = _candidates(state, mesh, exclude)
    if not ok.any():
        raise NoGoalError(f"{stage}: no reachable cell")

    if stage == "directional":
        ys, xs = np.mgrid[0:mesh.height, 0:mesh.width]
        dx, dy = xs - here[0], ys - here[1]
        near = (np.maximum(np.abs(dx), np.abs(dy)) <= range_cells) & ((dx != 0) | (dy != 0))
        sector = np.round(np.arctan2(dy, dx) / (math.pi / 4)).astype(int) % 8
        visits = [int(state.visit_counts[near & (sector == k)].sum()) for k in range(8)]
        k = int(np.argmin(visits))
        heading = k * math.pi / 4
        tx = min(max(here[0] + range_cells * math.cos(heading), 0), mesh.width - 1)
        ty = min(max(here[1] + range_cells * math.sin(heading), 0), mesh.height - 1)
        iy, ix = np.nonzero(ok)
        return _pick_nearest(np.stack([ix, iy], axis=1), (round(tx), round(ty)), mesh)

    if stage == "shape":
        route = lawnmower_route(mesh)
        for step in range(len(route)):
            c = route[(state.route_cursor + step) % len(route)]
            if ok[c[1], c[0]]:
                state.route_cursor = (state.route_cursor + step + 1) % len(route)
                return c
        raise NoGoalError("shape: no reachable route waypoint")

    ys, xs = np.mgrid[0:mesh.height, 0:mesh.width]
    cheb = np.maximum(np.abs(xs - here[0]), np.abs(ys - here[1]))
    for r in RING_RADII:
        ring = ok & (cheb <= r)
        if ring.any():
            iy, ix = np.nonzero(ring)
            return _pick_nearest(np.stack([ix, iy], axis=1), here, mesh)
    raise NoGoalError("multi_radius: nothing within the largest radius")


def fallback_cascade(state: AgentState, mesh: GridNavMesh, exclude: Iterable[Cell] = (),
                     range_cells: int = 8) -> tuple[str, Cell]:
    exclude = set(exclude)
    for stage in FALLBACK_STAGES:
        try:
            return stage, fallback_goal(state, mesh, stage, range_cells, exclude)
        except NoGoalError:
            continue
    raise NoGoalError("all fallback stages exhausted")


@dataclass(frozen=True)
class StuckConfig:
    window: int = 30
    eps_pos: float = 0.5  # cells of total travel over the window
    eps_box: float = 1.5  # cells, largest side of the window's bounding box
    timeout_factor: float = 4.0  # ticks allowed per path cell
    cell_size: float = 1.0


@dataclass(frozen=True)
class AgentSnapshot:
    tick: int
    position: tuple[float, float]
    path_start_tick: int
    path_length: int


@dataclass(frozen=True)
class StuckSignal:
    kind: str  # position_delta | path_timeout | bounding_box
    travel: float
    box_side: float
    ticks_on_path: int


STUCK_KINDS = ("position_delta", "path_timeout", "bounding_box")


def stuck_check(window: Sequence[AgentSnapshot], config: StuckConfig = StuckConfig()) -> StuckSignal | None:
    """Report the first firing stuck detector, in ``STUCK_KINDS`` priority order."""
    if len(window) < config.window:
        raise ValueError(f"window holds {len(window)} snapshots, need {config.window}")
    recent = window[-config.window:]
    pts = np.array([s.position for s in recent], dtype=np.float64)
    travel = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    box = float((pts.max(axis=0) - pts.min(axis=0)).max())
    last = recent[-1]
    on_path = last.tick - last.path_start_tick
    cs = config.cell_size
    if travel < config.eps_pos * cs:
        kind = "position_delta"
    elif on_path > config.timeout_factor * max(1, last.path_length):
        kind = "path_timeout"
    elif box < config.eps_box * cs:
        kind = "bounding_box"
    else:
        return None
    return StuckSignal(kind, travel, box, on_path)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def randomize_camera(mode: str = "sweep360", pitch_range: tuple[float, float] = (0.0, 0.0),
                     seed=None) -> tuple[float, float]:
    """Random (yaw, pitch) in radians.

    ``seed`` may be an int or a ``numpy.random.Generator`` (which is advanced).
    """
    lo, hi = pitch_range
    if hi < lo:
        raise ValueError("pitch_range must be (low, high) with low <= high")
    rng = _rng(seed)
    if mode == "sweep360":
        yaw = float(rng.uniform(0.0, 2.0 * math.pi))
    elif mode == "discrete8":
        yaw = int(rng.integers(8)) * math.pi / 4.0
    else:
        raise ValueError(f"unknown camera mode {mode!r}")
    pitch = lo if lo == hi else float(rng.uniform(lo, hi))
    return yaw, pitch


@dataclass(frozen=True)
class CharacterAssembly:
    categories: tuple[tuple[str, int], ...] = (
        ("tops", 20), ("pants", 20), ("shoes", 20), ("hair", 20),
        ("outerwear", 20), ("hats", 20), ("accessories", 20),
    )

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple((str(n), int(k)) for n, k in self.categories))
        for name, k in self.categories:
            if k < 1:
                raise ValueError(f"category {name!r} needs at least one option")


def character_variants(assembly: CharacterAssembly) -> int:
    return math.prod(k for _, k in assembly.categories)


def sample_character(assembly: CharacterAssembly, seed=None) -> dict[str, int]:
    rng = _rng(seed)
    return {name: int(rng.integers(k)) for name, k in assembly.categories}


@dataclass(frozen=True)
class ExplorerConfig:
    weights: tuple[float, float] = (1.0, 0.5)
    speed: float = 1.0  # meters per tick
    camera_mode: str = "discrete8"
    camera_hold: int = 20  # ticks between camera re-randomizations
    pitch_range: tuple[float, float] = (-math.radians(15.0), math.radians(15.0))
    jump_prob: float = 0.02
    attack_prob: float = 0.02
    eye_height: float = 1.7
    fps: float = 30.0
    stuck: StuckConfig = StuckConfig()
    fallback_range: int = 8
    goal_horizon: float | None = 8.0  # path-cost limit for reward goals; None searches the whole map
    intrinsics: CameraIntrinsics = CameraIntrinsics(math.radians(60.0), 16.0 / 9.0, 0.1, 20.0)
    assembly: CharacterAssembly = CharacterAssembly()


@dataclass(frozen=True, eq=False)
class CaptureRecord:
    tick: int
    player_position: np.ndarray
    player_rotation: UnitQuaternion
    camera_pose: Pose6DoF
    action: ActionVector
    digest: str
    nav_flag: bool
    timestamp: float


@dataclass
class Episode:
    records: list[CaptureRecord]
    events: list[tuple[int, str, str]]
    visit_counts: np.ndarray
    character: dict
    ended_early: bool = False
    end_reason: str = ""

    def __len__(self) -> int:
        return len(self.records)

    @property
    def coverage(self) -> int:
        return int(np.count_nonzero(self.visit_counts))

    def positions(self) -> np.ndarray:
        return np.array([r.player_position for r in self.records])

    def actions(self) -> list[ActionVector]:
        return [r.action for r in self.records]

    def frame_states(self, positions: np.ndarray | None = None) -> list[FrameState]:
        pos = self.positions() if positions is None else positions
        return [FrameState(r.tick, pos[i], r.player_rotation, r.camera_pose,
                           r.nav_flag, r.action.jump, r.action.attack)
                for i, r in enumerate(self.records)]


def _digest(tick: int, cam: Pose6DoF, character: dict) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<q", tick))
    h.update(struct.pack("<7d", *cam.position, *cam.rotation.as_tuple()))
    h.update(struct.pack(f"<{len(character)}q", *character.values()))
    return h.hexdigest()


def _move_ok(mesh: GridNavMesh, state: AgentState, start: np.ndarray, end: np.ndarray) -> bool:
    for frac in (0.5, 1.0):
        c = mesh.cell_of(start + frac * (end - start))
        if not mesh.is_walkable(c) or mesh.blocked[c[1], c[0]] or c in state.learned_blocked:
            return False
    return True


def _heading_to(state: AgentState, mesh: GridNavMesh) -> float | None:
    """World heading toward the next waypoint, advancing past reached ones."""
    here = state.cell(mesh)
    while state.path_index < len(state.path) and state.path[state.path_index] == here:
        state.path_index += 1
    if state.path_index >= len(state.path):
        return None
    target = mesh.center(state.path[state.path_index])
    d = target - state.position
    return math.atan2(d[1], d[0])


def _set_goal(state: AgentState, mesh: GridNavMesh, goal: Cell) -> bool:
    path = plan_path(mesh, state.cell(mesh), goal, state.walk_mask(mesh))
    if not path:
        state.failed_goals.add(goal)
        return False
    state.goal, state.path, state.path_index, state.path_start_tick = goal, path, 0, state.tick
    return True


def _new_goal(state: AgentState, mesh: GridNavMesh, cfg: ExplorerConfig, use_fallback: bool) -> str:
    """Choose and plan a goal; returns the strategy used or raises NoGoalError."""
    for _ in range(8):
        if use_fallback:
            stage, goal = fallback_cascade(state, mesh, state.failed_goals, cfg.fallback_range)
        else:
            try:
                stage, goal = "reward", select_goal(state, mesh, cfg.weights, state.failed_goals, cfg.goal_horizon)
            except NoGoalError:
                stage, goal = fallback_cascade(state, mesh, state.failed_goals, cfg.fallback_range)
        if _set_goal(state, mesh, goal):
            return stage
    raise NoGoalError("could not plan to any candidate goal")


def run_episode(mesh: GridNavMesh, config: ExplorerConfig = ExplorerConfig(), ticks: int = 500,
                seed: int = 0, start: Cell | None = None) -> Episode:
    """Simulate ``ticks`` engine ticks of autonomous exploration.

    Movement commands are camera-relative WSAD octants, so the agent moves in
    one of eight directions around the current camera yaw.  When all three
    octants nearest the desired heading are obstructed the agent idles.
    """
    if ticks < 1:
        raise ValueError("ticks must be >= 1")
    rng = np.random.default_rng(seed)
    character = sample_character(config.assembly, rng)
    if start is None:
        iy, ix = np.nonzero(mesh.walkable & ~mesh.blocked)
        k = int(rng.integers(len(ix)))
        start = (int(ix[k]), int(iy[k]))
    state = AgentState.fresh(mesh, start)
    stuck_cfg = StuckConfig(config.stuck.window, config.stuck.eps_pos, config.stuck.eps_box,
                            config.stuck.timeout_factor, mesh.cell_size)
    records: list[CaptureRecord] = []
    events: list[tuple[int, str, str]] = []
    window: list[AgentSnapshot] = []
    ended_early, end_reason = False, ""
    dt = 1.0 / config.fps

    for t in range(ticks):
        state.tick = t
        if t % config.camera_hold == 0:
            state.camera_yaw, state.camera_pitch = randomize_camera(config.camera_mode, config.pitch_range, rng)
        here = state.cell(mesh)
        state.visit_counts[here[1], here[0]] += 1

        if len(window) >= stuck_cfg.window:
            sig = stuck_check(window, stuck_cfg)
            if sig is not None:
                events.append((t, "stuck", sig.kind))
                if state.goal is not None:
                    state.failed_goals.add(state.goal)
                if state.path_index < len(state.path):
                    nxt = state.path[state.path_index]
                    if nxt != here:
                        state.learned_blocked.add(nxt)
                state.path, state.path_index = [], 0
                window.clear()
                try:
                    events.append((t, "fallback", _new_goal(state, mesh, config, use_fallback=True)))
                except NoGoalError as exc:
                    ended_early, end_reason = True, str(exc)

        heading = None if ended_early else _heading_to(state, mesh)
        if heading is None and not ended_early:
            try:
                events.append((t, "goal", _new_goal(state, mesh, config, use_fallback=False)))
                heading = _heading_to(state, mesh)
            except NoGoalError as exc:
                ended_early, end_reason = True, str(exc)

        direction = Direction.IDLE
        new_pos = state.position
        if heading is not None:
            rel = (state.camera_yaw - heading) / (math.pi / 4)
            k0 = int(round(rel)) % 8
            second = (k0 + 1) % 8 if (rel - round(rel)) > 0 else (k0 - 1) % 8
            for k in (k0, second, (2 * k0 - second) % 8):
                d = Direction(k)
                phi = state.camera_yaw - direction_offset(d)
                cand = state.position + config.speed * np.array([math.cos(phi), math.sin(phi)])
                if _move_ok(mesh, state, state.position, cand):
                    direction, new_pos = d, cand
                    state.yaw = phi
                    break

        jump = bool(rng.random() < config.jump_prob)
        attack = bool(rng.random() < config.attack_prob)
        player = np.array([state.position[0], state.position[1], 0.0])
        cam_pose = Pose6DoF(player + np.array([0.0, 0.0, config.eye_height]),
                            camera_rotation(state.camera_yaw, state.camera_pitch))
        records.append(CaptureRecord(
            tick=t,
            player_position=player,
            player_rotation=UnitQuaternion.from_axis_angle((0.0, 0.0, 1.0), state.yaw),
            camera_pose=cam_pose,
            action=direction_to_action(direction, jump, attack),
            digest=_digest(t, cam_pose, character),
            nav_flag=heading is not None,
            timestamp=t * dt,
        ))
        window.append(AgentSnapshot(t, (float(state.position[0]), float(state.position[1])),
                                    state.path_start_tick, len(state.path)))
        if len(window) > stuck_cfg.window:
            window.pop(0)
        state.position = new_pos
        if ended_early:
            break

    return Episode(records, events, state.visit_counts, character, ended_early, end_reason)


def random_walk_coverage(mesh: GridNavMesh, start: Cell, ticks: int, seed: int = 0) -> int:
    """Distinct cells visited by a uniform 8-connected random walk of ``ticks`` positions."""
    rng = np.random.default_rng(seed)
    c = tuple(start)
    seen = {c}
    for _ in range(ticks - 1):
        nbrs = [n for n, _ in _steps(mesh, c, mesh.walkable)]
        if not nbrs:
            break
        c = nbrs[int(rng.integers(len(nbrs)))]
        seen.add(c)
    return len(seen)


def random_maze(rng: np.random.Generator, width: int = 50, height: int = 50, density: float = 0.3) -> GridNavMesh:
    """Random obstacle field; walls with probability ``density``."""
    walk = rng.random((height, width)) >= density
    if not walk.any():
        walk[0, 0] = True
    return GridNavMesh(walk)
