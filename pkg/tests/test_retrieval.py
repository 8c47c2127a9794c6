import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection

from worldmem import polytope
from worldmem.geometry import CameraIntrinsics, Pose6DoF, camera_rotation, frustum_from_pose, points_in_frustum
from worldmem.retrieval import (
    BenchRow,
    DuplicateFrameError,
    MemoryEntry,
    MemoryPool,
    batch_overlap,
    bench_overlap,
    derive_seed,
    overlap_exact,
    overlap_sampled,
    pool_update,
    retrieve,
    sample_in_frustum,
    write_bench_csv,
)
from worldmem.synth import random_camera, random_frustum_pair, random_pool

INTR = CameraIntrinsics(math.radians(60.0), 16 / 9, 0.5, 10.0)


def scipy_intersection_volume(a, b) -> float:
    """Independent oracle: qhull half-space intersection of both frustums."""
    fa, fb = frustum_from_pose(*a), frustum_from_pose(*b)
    # scipy wants A x + b <= 0; ours is n . x + d >= 0
    hs = np.vstack([np.hstack([-fa.normals, -fa.offsets[:, None]]),
                    np.hstack([-fb.normals, -fb.offsets[:, None]])])
    # Chebyshev center: the deepest interior point, via a small linear program
    norms = np.linalg.norm(hs[:, :3], axis=1)
    res = linprog(c=[0, 0, 0, -1], A_ub=np.hstack([hs[:, :3], norms[:, None]]), b_ub=-hs[:, 3],
                  bounds=[(None, None)] * 3 + [(0, None)])
    if res.status != 0 or res.x[3] < 1e-7:
        return 0.0
    interior = res.x[:3]
    hsi = HalfspaceIntersection(hs, interior)
    return ConvexHull(hsi.intersections).volume


def view(x=0.0, y=0.0, z=0.0, yaw=0.0, pitch=0.0, intr=INTR):
    return Pose6DoF(np.array([x, y, z]), camera_rotation(yaw, pitch)), intr


# ---------------------------------------------------------------- polytope primitives


def unit_cube():
    f = frustum_from_pose(Pose6DoF.identity(), CameraIntrinsics(math.radians(90), 1.0, 1.0, 2.0))
    return polytope.polyhedron_from_frustum(f), f


def test_polytope_volume_of_frustum_is_analytic():
    poly, f = unit_cube()
    assert polytope.volume(poly) == pytest.approx(f.volume, rel=1e-12)


def test_clip_by_plane_through_axis_halves_volume():
    poly, f = unit_cube()
    half = polytope.clip_halfspace(poly, (1.0, 0.0, 0.0), 0.0)
    assert polytope.volume(half) == pytest.approx(f.volume / 2, rel=1e-12)


def test_clip_keeping_everything_or_nothing():
    poly, f = unit_cube()
    assert polytope.volume(polytope.clip_halfspace(poly, (0.0, 0.0, 1.0), 5.0)) == pytest.approx(f.volume)
    assert polytope.clip_halfspace(poly, (0.0, 0.0, 1.0), -5.0) == []


def test_clipped_polytope_volume_matches_qhull(rng):
    done = 0
    while done < 40:
        a, b = random_frustum_pair(rng, box=8.0)
        fa, fb = frustum_from_pose(*a), frustum_from_pose(*b)
        clipped = polytope.clip_convex(polytope.polyhedron_from_frustum(fa), fb.normals, fb.offsets)
        vol = polytope.volume(clipped) if clipped else 0.0
        oracle = scipy_intersection_volume(a, b)
        assert vol == pytest.approx(oracle, rel=1e-6, abs=1e-9 * fa.volume)
        done += 1


# ---------------------------------------------------------------- exact overlap


def test_exact_self_overlap_is_one(rng):
    for _ in range(20):
        v = random_camera(rng)
        assert overlap_exact(v, v) == pytest.approx(1.0, abs=1e-9)


def test_exact_opposite_far_apart_is_zero():
    d = 10 * INTR.far
    assert overlap_exact(view(0, 0, 0, 0.0), view(d, 0, 0, math.pi)) == 0.0


def test_exact_nested_query_is_one():
    small = CameraIntrinsics(math.radians(40), 1.0, 1.0, 5.0)
    big = CameraIntrinsics(math.radians(60), 1.0, 0.5, 8.0)
    assert overlap_exact(view(intr=small), view(intr=big)) == pytest.approx(1.0, abs=1e-9)


def test_exact_rotated_pair_matches_high_count_monte_carlo():
    a = view(0, 0, 0, 0.0)
    b = view(1.0, 0.5, 0.0, math.radians(30))
    s = overlap_exact(a, b)
    assert 0.05 < s < 0.95
    fa, fb = frustum_from_pose(*a), frustum_from_pose(*b)
    lo, hi = fa.aabb()
    rng = np.random.default_rng(99)
    in_a = in_both = 0
    for _ in range(10):  # 10^7 box points in chunks; independent of the library sampler
        pts = rng.uniform(lo, hi, size=(1_000_000, 3))
        ma = points_in_frustum(fa, pts)
        in_a += int(ma.sum())
        in_both += int(points_in_frustum(fb, pts[ma]).sum())
    est = in_both / in_a
    assert abs(est - s) <= 3 * math.sqrt(s * (1 - s) / in_a)


def test_exact_matches_qhull_oracle(rng):
    for _ in range(60):
        a, b = random_frustum_pair(rng, box=8.0)
        fa = frustum_from_pose(*a)
        assert overlap_exact(a, b) == pytest.approx(scipy_intersection_volume(a, b) / fa.volume, abs=1e-7)


def test_symmetric_volume_identity(rng):
    for _ in range(60):
        a, b = random_frustum_pair(rng, box=8.0)
        va, vb = a[1].frustum_volume(), b[1].frustum_volume()
        lhs, rhs = overlap_exact(a, b) * va, overlap_exact(b, a) * vb
        assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-9 * max(va, vb))


def test_enlarging_candidate_far_never_decreases_score(rng):
    for _ in range(40):
        a, (pose, intr) = random_frustum_pair(rng, box=8.0)
        s0 = overlap_exact(a, (pose, intr))
        bigger = CameraIntrinsics(intr.vertical_fov, intr.aspect_ratio, intr.near, intr.far * 1.7)
        assert overlap_exact(a, (pose, bigger)) >= s0 - 1e-12


@given(st.integers(0, 10_000))
def test_exact_score_is_a_fraction(seed):
    a, b = random_frustum_pair(np.random.default_rng(seed))
    assert 0.0 <= overlap_exact(a, b) <= 1.0


# ---------------------------------------------------------------- sampled overlap


def test_sampled_identical_is_exactly_one():
    for n in (1, 7, 1000):
        assert overlap_sampled(view(), view(), n, seed=3) == 1.0


def test_sampled_disjoint_is_exactly_zero():
    assert overlap_sampled(view(), view(500, 0, 0, math.pi), 2048, seed=1) == 0.0


def test_sampled_is_deterministic_per_seed(rng):
    a, b = random_frustum_pair(rng)
    assert overlap_sampled(a, b, 999, seed=5) == overlap_sampled(a, b, 999, seed=5)


def test_sampled_rejects_zero_samples():
    with pytest.raises(ValueError):
        overlap_sampled(view(), view(), 0)


def test_samples_are_uniform_in_depth():
    # uniform in volume => depth density proportional to z^2 on [near, far]
    intr = CameraIntrinsics(math.radians(90), 1.0, 1.0, 3.0)
    f = frustum_from_pose(Pose6DoF.identity(), intr)
    pts = sample_in_frustum(f, 200_000, np.random.default_rng(1))
    assert np.all(points_in_frustum(f, pts))
    edges = np.linspace(1.0, 3.0, 9)
    counts, _ = np.histogram(pts[:, 2], edges)
    expected = (edges[1:] ** 3 - edges[:-1] ** 3) / (27.0 - 1.0) * len(pts)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 26.1  # chi-square 99.9% quantile, 7 dof


def test_sampled_is_unbiased_against_exact(rng):
    a, b = view(0, 0, 0, 0.0), view(2.0, 1.0, 0.0, math.radians(20))
    s = overlap_exact(a, b)
    est = np.mean([overlap_sampled(a, b, 4096, seed) for seed in range(200)])
    assert abs(est - s) < 4 * math.sqrt(s * (1 - s) / (4096 * 200))


# ---------------------------------------------------------------- batch


def test_batch_of_one_equals_single_call(rng):
    q, c = random_frustum_pair(rng)
    assert batch_overlap(q, [c], "sampled", 512, seed=4) == [overlap_sampled(q, c, 512, derive_seed(4, 0))]
    assert batch_overlap(q, [c], "exact") == [overlap_exact(q, c)]


def test_batch_equals_loop_with_derived_seeds_and_any_job_count(rng):
    q, cands = random_pool(rng, 64)
    loop = [overlap_sampled(q, c, 256, derive_seed(11, i)) for i, c in enumerate(cands)]
    assert batch_overlap(q, cands, "sampled", 256, seed=11) == loop
    assert batch_overlap(q, cands, "sampled", 256, seed=11, jobs=4) == loop
    assert batch_overlap(q, cands, "exact", jobs=3) == [overlap_exact(q, c) for c in cands]


def test_batch_rejects_empty_and_unknown_scorer(rng):
    q, c = random_frustum_pair(rng)
    with pytest.raises(ValueError):
        batch_overlap(q, [])
    with pytest.raises(ValueError):
        batch_overlap(q, [c], scorer="fuzzy")


def test_derived_seeds_differ_per_index():
    assert len({derive_seed(7, i) for i in range(1000)}) == 1000


# ---------------------------------------------------------------- memory pool


def entry(i, sink=False, pose=None):
    pose = pose if pose is not None else Pose6DoF(np.array([float(i), 0.0, 0.0]), camera_rotation(0.0))
    return MemoryEntry(i, pose, INTR, payload_id=f"f{i}", is_sink=sink)


def test_append_to_empty_pool():
    pool = pool_update(MemoryPool(), [entry(0, True), entry(1), entry(2)])
    assert pool.frame_indices() == [0, 1, 2]
    assert pool.sink.frame_index == 0


def test_capacity_keeps_sink_and_most_recent():
    pool = pool_update(MemoryPool(capacity=3), [entry(0, True)])
    pool = pool_update(pool, [entry(i) for i in range(1, 6)])
    assert pool.frame_indices() == [0, 3, 4, 5]


def test_duplicate_and_stale_indices_rejected():
    pool = pool_update(MemoryPool(), [entry(0, True), entry(1)])
    with pytest.raises(DuplicateFrameError):
        pool_update(pool, [entry(1)])
    with pytest.raises(DuplicateFrameError):
        pool_update(pool, [entry(3), entry(2)])
    with pytest.raises(DuplicateFrameError):
        MemoryPool((entry(2), entry(1)))


def test_only_one_sink():
    with pytest.raises(ValueError):
        MemoryPool((entry(0, True), entry(1, True)))


def test_update_leaves_the_old_snapshot_untouched():
    a = pool_update(MemoryPool(), [entry(0, True)])
    b = pool_update(a, [entry(1)])
    assert a.frame_indices() == [0] and b.frame_indices() == [0, 1]


def test_candidate_set_grows_until_capacity_over_sixty_segments():
    pool = MemoryPool(capacity=200)
    sizes = []
    idx = 0
    for seg in range(60):
        q = Pose6DoF(np.array([float(idx), 0.0, 0.0]), camera_rotation(0.0))
        res = retrieve(q, INTR, pool, k=5, query_index=idx)
        assert all(i < idx for i in res.frame_indices)
        pool = pool_update(pool, [entry(idx + j, sink=(idx + j == 0)) for j in range(10)])
        idx += 10
        sizes.append(len(pool))
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))
    assert sizes[-1] == 201  # 200 regular plus the sink
    assert sizes.index(201) == 20  # first reaches capacity after 21 segments


@given(st.lists(st.integers(1, 6), min_size=1, max_size=15), st.integers(0, 8))
def test_sink_survives_any_update_sequence(batches, capacity):
    pool = pool_update(MemoryPool(capacity=capacity), [entry(0, True)])
    nxt = 1
    for n in batches:
        pool = pool_update(pool, [entry(nxt + j) for j in range(n)])
        nxt += n
        assert pool.sink is not None and pool.sink.frame_index == 0
        assert len(pool) - 1 <= capacity


# ---------------------------------------------------------------- retrieve


def test_single_sink_pool_returns_the_sink():
    pool = MemoryPool((entry(0, True),))
    res = retrieve(*view(), pool, k=5, query_index=1)
    assert res.frame_indices == [0]


def test_own_pose_ranks_first_with_score_one(rng):
    q = random_camera(rng, box=4.0)
    _, cands = random_pool(rng, 20)
    entries = [MemoryEntry(i, p, it) for i, (p, it) in enumerate(cands)]
    entries.append(MemoryEntry(20, q[0], q[1]))
    res = retrieve(q[0], q[1], MemoryPool(tuple(entries)), k=3)
    assert res.frame_indices[0] == 20 and res.scores[0] == pytest.approx(1.0, abs=1e-9)


def test_retrieve_matches_brute_force_sort(rng):
    for _ in range(3):
        q, cands = random_pool(rng, 100)
        entries = tuple(MemoryEntry(i, p, it, is_sink=(i == 0)) for i, (p, it) in enumerate(cands))
        res = retrieve(*q, MemoryPool(entries), k=5)
        scores = [overlap_exact(q, c) for c in cands]
        oracle = sorted(range(100), key=lambda i: (scores[i], i), reverse=True)[:5]
        if 0 not in oracle:
            oracle.append(0)
        assert res.frame_indices == oracle
        assert res.scores == [scores[i] for i in oracle]


def test_ties_go_to_the_most_recent_frame():
    same = Pose6DoF(np.zeros(3), camera_rotation(0.0))
    pool = MemoryPool(tuple(MemoryEntry(i, same, INTR) for i in range(6)))
    assert retrieve(same, INTR, pool, k=3).frame_indices == [5, 4, 3]


def test_scores_non_increasing_apart_from_appended_sink(rng):
    q, cands = random_pool(rng, 50)
    entries = tuple(MemoryEntry(i, p, it, is_sink=(i == 0)) for i, (p, it) in enumerate(cands))
    res = retrieve(*q, MemoryPool(entries), k=8)
    top = res.scores[:8]
    assert all(a >= b for a, b in zip(top, top[1:]))


def test_causality_filter_and_empty_result():
    pool = MemoryPool(tuple(entry(i, i == 0) for i in range(10)))
    res = retrieve(*view(), pool, k=3, query_index=4)
    assert max(res.frame_indices) < 4
    assert retrieve(*view(), MemoryPool(), k=3).selected == ()
    with pytest.raises(ValueError):
        retrieve(*view(), pool, k=0)


def test_retrieval_is_deterministic(rng):
    q, cands = random_pool(rng, 30)
    pool = MemoryPool(tuple(MemoryEntry(i, p, it) for i, (p, it) in enumerate(cands)))
    a = retrieve(*q, pool, k=5, scorer="sampled", n_samples=512, seed=9)
    b = retrieve(*q, pool, k=5, scorer="sampled", n_samples=512, seed=9)
    assert a.frame_indices == b.frame_indices and a.scores == b.scores


# ---------------------------------------------------------------- benchmark


def test_bench_csv_rows(rng):
    pools = [random_pool(rng, 12) for _ in range(3)]
    rows = [bench_overlap(pools, "exact"), bench_overlap(pools, "sampled", 256, seed=2)]
    assert rows[0].argmax_agreement == 1.0 and rows[0].n_samples == 0
    text = write_bench_csv(rows)
    parsed = list(csv.reader(io.StringIO(text)))
    assert tuple(parsed[0]) == BenchRow.FIELDS
    assert [r[0] for r in parsed[1:]] == ["exact", "sampled"]
    assert all(float(r[3]) > 0 for r in parsed[1:])
