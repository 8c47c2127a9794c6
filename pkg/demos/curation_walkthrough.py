# %% [markdown]
# # Cleaning a trajectory corpus
#
# Camera trajectories from games and videos contain glitches: teleports,
# clips that crawl or race, and clips an annotator rated as poor.  We
# calibrate thresholds on trusted clips and filter a corpus where exactly
# one clip in five is damaged.

# %%
from collections import Counter

import numpy as np

from worldmem.curation import apply_filters, calibrate_thresholds, displacement_ratio, median_speed
from worldmem.synth import synthetic_clip, synthetic_corpus

# %% [markdown]
# Trusted clips come from a separate random stream, standing in for
# engine ground truth.

# %%
trusted = [synthetic_clip(np.random.default_rng(1000 + i))[0] for i in range(200)]
th = calibrate_thresholds(trusted, min_quality={"overall": 4.0})
print("max reprojection error (px):", round(th.max_reproj_err, 4))
print("max displacement ratio:     ", round(th.max_disp_ratio, 3))
print("speed band (m/s):           ", tuple(round(v, 3) for v in th.speed_band))

# %%
clips, captions, labels = synthetic_corpus(np.random.default_rng(5), 500, corrupt_fraction=0.2)
reports = [apply_filters(c, cap, th) for c, cap in zip(clips, captions)]
removed = [not r.keep for r in reports]
print(f"removed {sum(removed)} of {len(clips)} clips")

# %% [markdown]
# How did each defect fare, and which filter caught it?

# %%
caught = Counter()
for rep, label in zip(reports, labels):
    if not rep.keep:
        caught[(label or "clean", rep.reasons)] += 1
for (label, reasons), n in sorted(caught.items()):
    print(f"{label:>12} removed by {', '.join(reasons):<28} x{n}")

# %% [markdown]
# One teleport, up close: the jump frame dominates the displacement
# ratio while the median speed barely moves.

# %%
clip, _ = synthetic_clip(np.random.default_rng(3), corruption="teleport")
print("ratio", round(displacement_ratio(clip), 2), "median speed", round(median_speed(clip), 2))
