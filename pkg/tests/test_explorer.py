import math

import numpy as np
import pytest
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.stats import chisquare

from worldmem.actions import check_alignment
from worldmem.explorer import (
    AgentSnapshot,
    AgentState,
    CharacterAssembly,
    ExplorerConfig,
    GridNavMesh,
    NoGoalError,
    OffGridError,
    StuckConfig,
    character_variants,
    fallback_cascade,
    fallback_goal,
    lawnmower_route,
    path_cost,
    plan_path,
    random_maze,
    random_walk_coverage,
    randomize_camera,
    run_episode,
    sample_character,
    select_goal,
    stuck_check,
)


def dijkstra_oracle(walk: np.ndarray, start, goal) -> float:
    h, w = walk.shape
    g = lil_matrix((h * w, h * w))
    for y in range(h):
        for x in range(w):
            if not walk[y, x]:
                continue
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    nx, ny = x + dx, y + dy
                    if (dx, dy) == (0, 0) or not (0 <= nx < w and 0 <= ny < h) or not walk[ny, nx]:
                        continue
                    if dx and dy and not (walk[y, nx] and walk[ny, x]):
                        continue  # no squeezing between two diagonal walls
                    g[y * w + x, ny * w + nx] = math.sqrt(2) if dx and dy else 1.0
    d = dijkstra(g.tocsr(), indices=start[1] * w + start[0])
    return float(d[goal[1] * w + goal[0]])


def assert_valid_path(mesh, path):
    for a, b in zip(path, path[1:]):
        assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
    assert all(mesh.walkable[c[1], c[0]] for c in path)


# ---------------------------------------------------------------- planning


def test_path_to_self_is_single_cell():
    assert plan_path(GridNavMesh.open(5, 5), (2, 2), (2, 2)) == [(2, 2)]


def test_corner_to_corner_on_open_grid():
    path = plan_path(GridNavMesh.open(10, 10), (0, 0), (9, 9))
    assert len(path) == 10
    assert path_cost(path) == pytest.approx(9 * math.sqrt(2))


def test_off_grid_goal_and_unwalkable_start():
    mesh = GridNavMesh.open(4, 4)
    with pytest.raises(OffGridError):
        plan_path(mesh, (0, 0), (4, 0))
    walk = np.ones((4, 4), bool)
    walk[0, 0] = False
    with pytest.raises(ValueError):
        plan_path(GridNavMesh(walk), (0, 0), (3, 3))


def test_unreachable_goal_gives_empty_path():
    walk = np.ones((5, 5), bool)
    walk[:, 2] = False
    assert plan_path(GridNavMesh(walk), (0, 0), (4, 4)) == []


def test_astar_costs_equal_dijkstra_on_random_mazes():
    rng = np.random.default_rng(0)
    for _ in range(25):
        mesh = random_maze(rng, 20, 20, 0.3)
        iy, ix = np.nonzero(mesh.walkable)
        a, b = rng.choice(len(ix), 2)
        s, g = (int(ix[a]), int(iy[a])), (int(ix[b]), int(iy[b]))
        path = plan_path(mesh, s, g)
        oracle = dijkstra_oracle(mesh.walkable, s, g)
        if math.isinf(oracle):
            assert path == []
        else:
            assert path[0] == s and path[-1] == g
            assert_valid_path(mesh, path)
            assert path_cost(path) == pytest.approx(oracle, abs=1e-9)


# ---------------------------------------------------------------- goal selection


def test_unvisited_uniform_grid_picks_farthest_cell():
    mesh = GridNavMesh.open(6, 4)
    state = AgentState.fresh(mesh, (0, 0))
    assert select_goal(state, mesh, (1.0, 0.0)) == (5, 3)


def test_richness_dominates_when_beta_is_large():
    rich = np.zeros((6, 6))
    rich[1, 4] = 10.0
    mesh = GridNavMesh.open(6, 6, richness=rich)
    state = AgentState.fresh(mesh, (0, 0))
    assert select_goal(state, mesh, (1.0, 5.0)) == (4, 1)


def test_select_goal_matches_exhaustive_scan():
    rng = np.random.default_rng(4)
    for _ in range(20):
        mesh = random_maze(rng, 12, 12, 0.2)
        mesh.richness = rng.integers(0, 3, mesh.walkable.shape).astype(float)
        iy, ix = np.nonzero(mesh.walkable)
        k = int(rng.integers(len(ix)))
        state = AgentState.fresh(mesh, (int(ix[k]), int(iy[k])))
        state.visit_counts = rng.integers(0, 3, mesh.walkable.shape)
        here = state.cell(mesh)
        best, best_key = None, None
        for y in range(mesh.height):
            for x in range(mesh.width):
                if (x, y) == here or not mesh.walkable[y, x]:
                    continue
                d = dijkstra_oracle(mesh.walkable, here, (x, y))
                if math.isinf(d):
                    continue
                score = 1.0 / (1 + state.visit_counts[y, x]) + 0.5 * mesh.richness[y, x]
                key = (score, d, -(y * mesh.width + x))
                if best_key is None or key > best_key:
                    best, best_key = (x, y), key
        try:
            got = select_goal(state, mesh, (1.0, 0.5))
        except NoGoalError:
            assert best is None
            continue
        assert got == best


def test_select_goal_weight_validation_and_no_goal():
    mesh = GridNavMesh.open(3, 3)
    state = AgentState.fresh(mesh, (1, 1))
    with pytest.raises(ValueError):
        select_goal(state, mesh, (0.0, 0.0))
    single = GridNavMesh(np.array([[True, False], [False, False]]))
    with pytest.raises(NoGoalError):
        select_goal(AgentState.fresh(single, (0, 0)), single)


# ---------------------------------------------------------------- fallbacks


def test_directional_fallback_for_fresh_agent_heads_along_sector_zero():
    mesh = GridNavMesh.open(30, 30)
    state = AgentState.fresh(mesh, (10, 10))
    assert fallback_goal(state, mesh, "directional", range_cells=8) == (18, 10)


def test_lawnmower_visits_each_cell_once_per_cycle():
    mesh = GridNavMesh.open(4, 4)
    route = lawnmower_route(mesh)
    assert len(route) == 16 and len(set(route)) == 16
    assert route[:5] == [(0, 0), (1, 0), (2, 0), (3, 0), (3, 1)]
    state = AgentState.fresh(mesh, (0, 0))
    goals = [fallback_goal(state, mesh, "shape") for _ in range(15)]
    assert sorted(goals) == sorted(c for c in route if c != (0, 0))


def test_multi_radius_finds_nearest_pocket_cell_at_smallest_radius():
    walk = np.zeros((20, 20), bool)
    walk[2, 2] = True  # the agent's cell
    walk[2:7, 2] = True  # corridor up to the pocket
    walk[5:8, 5:8] = True  # pocket
    walk[6, 3:5] = True
    mesh = GridNavMesh(walk)
    state = AgentState.fresh(mesh, (2, 2))
    got = fallback_goal(state, mesh, "multi_radius")
    # ring-search oracle: smallest radius with any reachable cell, then nearest by Euclid, then index
    from worldmem.explorer import RING_RADII, distance_field
    dist = distance_field(mesh, (2, 2))
    for r in RING_RADII:
        cells = [(x, y) for y in range(20) for x in range(20)
                 if (x, y) != (2, 2) and np.isfinite(dist[y, x]) and max(abs(x - 2), abs(y - 2)) <= r]
        if cells:
            want = min(cells, key=lambda c: ((c[0] - 2) ** 2 + (c[1] - 2) ** 2, c[1] * 20 + c[0]))
            break
    assert got == want


def test_cascade_exhaustion_raises():
    single = GridNavMesh(np.array([[True]]))
    with pytest.raises(NoGoalError):
        fallback_cascade(AgentState.fresh(single, (0, 0)), single)
    with pytest.raises(ValueError):
        fallback_goal(AgentState.fresh(single, (0, 0)), single, "spiral")


# ---------------------------------------------------------------- stuck detection


def snaps(positions, path_start=0, path_len=100):
    return [AgentSnapshot(t, tuple(p), path_start, path_len) for t, p in enumerate(positions)]


def test_frozen_agent_fires_position_delta_before_bounding_box():
    sig = stuck_check(snaps([(5.0, 5.0)] * 30))
    assert sig.kind == "position_delta"


def test_oscillating_agent_fires_bounding_box():
    sig = stuck_check(snaps([(5.0 + (t % 2), 5.0) for t in range(30)]))
    assert sig.kind == "bounding_box"


def test_long_walk_on_a_short_path_fires_timeout():
    circle = [(5 + 3 * math.cos(t / 5), 5 + 3 * math.sin(t / 5)) for t in range(30)]
    sig = stuck_check(snaps(circle, path_start=0, path_len=3))
    assert sig.kind == "path_timeout" and sig.ticks_on_path == 29


def test_steady_progress_gives_no_signal():
    assert stuck_check(snaps([(float(t), 0.0) for t in range(30)])) is None


def test_short_window_is_rejected():
    with pytest.raises(ValueError):
        stuck_check(snaps([(0.0, 0.0)] * 5), StuckConfig(window=30))


def test_trap_episode_fires_stuck_and_relocates():
    # the navmesh thinks a wall of props is walkable; physically it stops the agent
    mesh = GridNavMesh.open(20, 20)
    mesh.blocked[:, 10] = True
    ep = run_episode(mesh, ExplorerConfig(goal_horizon=None, camera_hold=1000), ticks=400, seed=1, start=(8, 10))
    kinds = [e for e in ep.events if e[1] == "stuck"]
    assert kinds, "expected at least one stuck signal"
    first = kinds[0][0]
    assert any(e[1] == "fallback" and e[0] == first for e in ep.events)
    pos_before = ep.records[first].player_position
    later = [r.player_position for r in ep.records[first + 1:]]
    assert max(np.linalg.norm(p - pos_before) for p in later) > 2.0
    assert all(not mesh.blocked[mesh.cell_of(r.player_position)[1], mesh.cell_of(r.player_position)[0]]
               for r in ep.records)


# ---------------------------------------------------------------- camera and characters


def test_discrete8_frequencies():
    rng = np.random.default_rng(2)
    ks = [round(randomize_camera("discrete8", seed=rng)[0] / (math.pi / 4)) for _ in range(8000)]
    counts = np.bincount(ks, minlength=8)
    assert np.all(np.abs(counts - 1000) <= 3 * math.sqrt(1000 * 7 / 8))


def test_sweep_is_seeded_and_pitch_range_respected():
    assert randomize_camera("sweep360", (0.0, 0.0), 5) == randomize_camera("sweep360", (0.0, 0.0), 5)
    rng = np.random.default_rng(0)
    for _ in range(200):
        yaw, pitch = randomize_camera("sweep360", (-0.2, 0.3), rng)
        assert 0 <= yaw < 2 * math.pi and -0.2 <= pitch <= 0.3
    assert all(randomize_camera("discrete8", (0.0, 0.0), s)[1] == 0.0 for s in range(20))
    with pytest.raises(ValueError):
        randomize_camera("orbit")


def test_character_variants():
    assert character_variants(CharacterAssembly()) == 20 ** 7 == 1_280_000_000
    big = CharacterAssembly(tuple((f"c{i}", 10 ** 6) for i in range(6)))
    assert character_variants(big) == 10 ** 36  # exact integer, no overflow
    one = CharacterAssembly((("hats", 1), ("tops", 3)))
    assert all(sample_character(one, s)["hats"] == 0 for s in range(50))
    with pytest.raises(ValueError):
        CharacterAssembly((("hats", 0),))


def test_character_sampling_is_uniform():
    asm = CharacterAssembly((("a", 2), ("b", 2)))
    rng = np.random.default_rng(0)
    combos = [tuple(sample_character(asm, rng).values()) for _ in range(100_000)]
    counts = [combos.count(c) for c in [(0, 0), (0, 1), (1, 0), (1, 1)]]
    assert chisquare(counts).pvalue > 0.001


# ---------------------------------------------------------------- episodes


def test_one_tick_episode():
    ep = run_episode(GridNavMesh.open(5, 5), ExplorerConfig(), ticks=1, seed=0)
    assert len(ep) == 1
    assert ep.records[0].action is not None


def test_episode_invariants():
    mesh = random_maze(np.random.default_rng(1), 25, 25, 0.2)
    ep = run_episode(mesh, ExplorerConfig(), ticks=300, seed=3)
    n = len(ep)
    assert int(ep.visit_counts.sum()) == n
    assert check_alignment(n, len(ep.frame_states()), len(ep.actions())).passed
    for r in ep.records:
        c = mesh.cell_of(r.player_position)
        assert mesh.walkable[c[1], c[0]]
    assert [r.tick for r in ep.records] == list(range(n))


def test_episode_is_deterministic():
    mesh = GridNavMesh.open(15, 15)
    a = run_episode(mesh, ExplorerConfig(), ticks=120, seed=9)
    b = run_episode(mesh, ExplorerConfig(), ticks=120, seed=9)
    assert [r.digest for r in a.records] == [r.digest for r in b.records]
    assert a.events == b.events


def test_coverage_non_decreasing_in_ticks():
    mesh = GridNavMesh.open(20, 20)
    covs = [run_episode(mesh, ExplorerConfig(), ticks=t, seed=2).coverage for t in (50, 100, 200, 300)]
    assert covs == sorted(covs)


def test_coverage_beats_random_walk():
    mesh = GridNavMesh.open(50, 50)
    wins = 0
    for seed in range(3):
        ep = run_episode(mesh, ExplorerConfig(), ticks=500, seed=seed)
        start = mesh.cell_of(ep.records[0].player_position)
        wins += ep.coverage > random_walk_coverage(mesh, start, 500, seed)
    assert wins == 3


def test_planned_paths_avoid_walls():
    rng = np.random.default_rng(6)
    mesh = random_maze(rng, 30, 30, 0.25)
    ep = run_episode(mesh, ExplorerConfig(), ticks=300, seed=1)
    assert len(ep) >= 1
    for t, kind, _ in ep.events:
        assert kind in ("goal", "stuck", "fallback")
