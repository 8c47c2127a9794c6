# %% [markdown]
# # A stream that comes back to where it started
#
# Generation runs in segments.  The first segment is image-to-video from a
# reference frame; later ones take their past frames from the previous
# segment's tail and retrieve memory by camera overlap.  Here the camera
# walks forward, turns around, walks back, and turns again, so the last
# segment looks at the opening view once more.

# %%
from worldmem.streaming import StubGenerator, plan_rollout, revisit_script, run_stream

plan = plan_rollout(4, seed=0)
for seg in plan.segments:
    print(f"segment {seg.index}: {seg.mode:<8} frames {seg.start_frame}..{seg.stop_frame - 1}")

# %%
result = run_stream(plan, StubGenerator(), revisit_script(plan))
for rec in result.trace:
    top = ", ".join(f"{i}:{s:.2f}" for i, s in rec.retrieved[:3]) or "-"
    print(f"segment {rec.index}  past {list(rec.past_indices) or '-'}  top memory {top}  pool {rec.pool_size}")

# %% [markdown]
# Segment 3's best memory comes from the opening segment, not from the
# segment just before it, because only the opening frames face the same way.
