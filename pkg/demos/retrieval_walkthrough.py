# %% [markdown]
# # Which past frame should the model remember?
#
# A memory-augmented video model keeps a pool of earlier frames and, before
# generating new ones, pulls back the frames whose cameras saw the same part
# of the world.  "Saw the same part" is measured as frustum overlap: the
# fraction of the query camera's view volume that also lies inside a
# candidate's view volume.
#
# This walkthrough scores a few hand-placed cameras exactly and by Monte
# Carlo, then runs top-k retrieval over a random pool.

# %%
import math

import numpy as np

from worldmem.geometry import CameraIntrinsics, Pose6DoF, camera_rotation, frustum_from_pose
from worldmem.retrieval import MemoryEntry, MemoryPool, overlap_exact, overlap_sampled, retrieve
from worldmem.synth import random_pool

intr = CameraIntrinsics(math.radians(60), 16 / 9, near=0.1, far=10.0)


def cam(x, y, yaw_deg):
    return Pose6DoF(np.array([x, y, 1.7]), camera_rotation(math.radians(yaw_deg)))


query = frustum_from_pose(cam(0, 0, 0), intr)
print(f"query frustum volume: {query.volume:.2f} m^3")

# %% [markdown]
# Four candidates: the same view, one step to the side, turned 90 degrees,
# and turned all the way around.

# %%
candidates = {
    "identical": cam(0, 0, 0),
    "1 m left": cam(0, 1, 0),
    "turned 90": cam(0, 0, 90),
    "facing back": cam(0, 0, 180),
}
for name, pose in candidates.items():
    f = frustum_from_pose(pose, intr)
    exact = overlap_exact(query, f)
    approx = overlap_sampled(query, f, n_samples=16384, seed=1)
    print(f"{name:>12}: exact {exact:.4f}   sampled {approx:.4f}")

# %% [markdown]
# The sampled estimate draws points uniformly inside the query frustum and
# counts how many land in the candidate, so its error shrinks like
# 1/sqrt(N).  Quadrupling N roughly halves the spread:

# %%
side = frustum_from_pose(candidates["1 m left"], intr)
truth = overlap_exact(query, side)
for n in (256, 1024, 4096, 16384):
    est = np.array([overlap_sampled(query, side, n, seed=s) for s in range(200)])
    print(f"N={n:>5}: rmse {np.sqrt(np.mean((est - truth) ** 2)):.4f}")

# %% [markdown]
# ## Retrieval over a pool
#
# Frame 0 is the sink: it is always returned, as a global appearance
# anchor, even when it does not rank among the best views.

# %%
rng = np.random.default_rng(7)
(qpose, qintr), cands = random_pool(rng, 40)
entries = [MemoryEntry(i, p, c, is_sink=(i == 0)) for i, (p, c) in enumerate(cands)]
pool = MemoryPool(tuple(entries))
result = retrieve(qpose, qintr, pool, k=5, query_index=len(cands))
for entry, score in result.selected:
    tag = " (sink)" if entry.is_sink else ""
    print(f"frame {entry.frame_index:>2}: {score:.3f}{tag}")
