# %% [markdown]
# # Exploring a maze and recovering the controls
#
# The explorer walks a grid world, choosing goals that favour rarely
# visited cells, and logs every tick.  Afterwards we forget the controls
# and re-infer them from positions and camera yaw alone.

# %%
import tempfile
from pathlib import Path

import numpy as np

from worldmem import dataio
from worldmem.actions import infer_trajectory_actions
from worldmem.explorer import ExplorerConfig, random_maze, random_walk_coverage, run_episode

mesh = random_maze(np.random.default_rng(2), 40, 40, density=0.25)
ep = run_episode(mesh, ExplorerConfig(), ticks=600, seed=2)
start = mesh.cell_of(ep.records[0].player_position)
print(f"coverage {ep.coverage:.3f} vs random walk {random_walk_coverage(mesh, start, 600, 2):.3f}")
print("events:", {k: sum(e[1] == k for e in ep.events) for k in ("goal", "stuck", "fallback")})

# %% [markdown]
# A coarse picture of where the agent went (`#` wall, digits visit counts).

# %%
for y in reversed(range(mesh.height)):
    print("".join("#" if not mesh.walkable[y, x] else (str(min(ep.visit_counts[y, x], 9)) if ep.visit_counts[y, x]
                  else ".") for x in range(mesh.width)))

# %% [markdown]
# Write the frame CSV, read it back, and infer the WSAD labels.

# %%
cfg = ExplorerConfig()
records = [dataio.FrameRecord.from_state(r.tick, r.timestamp, r.player_position, r.player_rotation,
                                         r.camera_pose, cfg.intrinsics, r.action) for r in ep.records]
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "frames.csv"
    path.write_bytes(dataio.write_frame_csv(records))
    back = dataio.read_frame_csv(path.read_bytes())

inferred = infer_trajectory_actions(dataio.records_to_states(back))
truth = [r.action_vector() for r in back]
hits = sum(a.bits()[:4] == b.bits()[:4] for a, b in zip(inferred[:-1], truth[:-1]))
print(f"movement labels recovered: {hits}/{len(truth) - 1}")
