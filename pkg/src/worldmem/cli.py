"""``worldmem`` command line.

Every subcommand reads a versioned JSON config (``--config``, or the path in
``WORLDMEM_CONFIG``), lets ``--seed`` / ``--jobs`` override it, runs one
module and writes a machine-readable report.  Failures print a JSON object
``{"error": <name>, "message": <text>}`` on stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import dataio
from .actions import infer_trajectory_actions
from .curation import FilterThresholds, apply_filters, calibrate_thresholds
from .explorer import CharacterAssembly, ExplorerConfig, GridNavMesh, StuckConfig, random_maze, run_episode
from .geometry import camera_yaw
from .retrieval import MemoryEntry, MemoryPool, bench_overlap, derive_seed, retrieve, write_bench_csv
from .streaming import (Kinematics, StubGenerator, constant_script, plan_rollout, revisit_script,
                        run_stream, trace_to_jsonl)
from .synth import random_pool, synthetic_clip, synthetic_corpus
from .trainkit import ContextLayout, RopeConfig, phase_collision_rate

CONFIG_VERSION = 1
CONFIG_ENV = "WORLDMEM_CONFIG"

# ``None`` marks an unbounded threshold (JSON has no infinity).
DEFAULT_CONFIG: dict[str, Any] = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "jobs": 1,
    "thresholds": {
        "max_reproj_err": None,
        "max_disp_ratio": None,
        "speed_band": [0.0, None],
        "min_quality": {"overall": 0.0},
    },
    "calibration": {
        "reproj_pct": 99.0,
        "ratio_pct": 99.0,
        "speed_pct": [1.0, 99.0],
        "min_quality": {"overall": 4.0},
        "min_clips": 20,
        "synthetic_clips": 200,
    },
    "corpus": {"corrupt_fraction": 0.2},
    "retrieval": {"k": 5, "scorer": "exact", "n_samples": 4096},
    "layout": {"memory_len": 5, "past_len": 4, "current_len": 10, "i2v_current_len": 14,
               "past_mode_prob": 0.8, "mask_prob": 0.2},
    "rope": {"theta_base": 10000.0, "sigma_theta": 0.8, "head_count": 16, "rotary_dim": 64,
             "tolerances": [0.1, 0.2, 0.5], "delta_t": [256, 4096]},
    "explorer": {"width": 50, "height": 50, "density": 0.0, "weights": [1.0, 0.5], "speed": 1.0,
                 "camera_mode": "discrete8", "camera_hold": 20, "pitch_range_deg": [-15.0, 15.0],
                 "jump_prob": 0.02, "attack_prob": 0.02, "fps": 30.0, "goal_horizon": 8.0,
                 "fallback_range": 8, "stuck_window": 30},
    "stream": {"speed": 4.0, "dt": 0.0625, "max_segments": 6},
}

# keys whose value is a free-form mapping of quality dimension -> minimum
_FREE_MAPS = {"thresholds.min_quality", "calibration.min_quality"}
# lists of any non-empty length
_FREE_LISTS = {"rope.tolerances"}


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        ref = base[key]
        if where in _FREE_MAPS:
            if not isinstance(val, dict) or not all(isinstance(v, (int, float)) for v in val.values()):
                raise ConfigError(f"{where!r} must map names to numbers")
            out[key] = dict(val)
        elif isinstance(ref, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = _merge(ref, val, where + ".")
        elif where in _FREE_LISTS:
            if not isinstance(val, list) or not val or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
                raise ConfigError(f"{where!r} must be a non-empty list of numbers")
            out[key] = list(val)
        elif isinstance(ref, list):
            if not isinstance(val, list) or len(val) != len(ref):
                raise ConfigError(f"{where!r} must be a list of {len(ref)} values")
            out[key] = list(val)
        elif ref is None or isinstance(ref, float):
            if val is not None and (isinstance(val, bool) or not isinstance(val, (int, float))):
                raise ConfigError(f"{where!r} must be a number")
            if val is None and ref is not None:
                raise ConfigError(f"{where!r} must be a number")
            out[key] = val if val is None else float(val)
        elif isinstance(ref, bool) or type(ref) is not type(val):
            raise ConfigError(f"{where!r} must be of type {type(ref).__name__}")
        else:
            out[key] = val
    return out


def load_config(path: str | None) -> dict:
    """Defaults overlaid with the file at ``path`` (unknown keys are rejected)."""
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    return _merge(DEFAULT_CONFIG, raw)


def _inf(v: float | None) -> float:
    return math.inf if v is None else float(v)


def _finite_or_none(v: float) -> float | None:
    return None if math.isinf(v) else v


def thresholds_from_dict(d: dict) -> FilterThresholds:
    return FilterThresholds(_inf(d["max_reproj_err"]), _inf(d["max_disp_ratio"]),
                            (float(d["speed_band"][0]), _inf(d["speed_band"][1])), dict(d["min_quality"]))


def thresholds_to_dict(th: FilterThresholds) -> dict:
    return {"max_reproj_err": _finite_or_none(th.max_reproj_err),
            "max_disp_ratio": _finite_or_none(th.max_disp_ratio),
            "speed_band": [th.speed_band[0], _finite_or_none(th.speed_band[1])],
            "min_quality": dict(th.min_quality)}


def _write(text: str, output: str | None) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _summary(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file {path} not found")
    return p


# --------------------------------------------------------------------------- corpora


def _load_corpus(directory: str):
    """Clips listed by ``*.manifest.json`` files; captions come from each manifest's caption file."""
    base = Path(directory)
    if not base.is_dir():
        raise InputError(f"corpus directory {directory} not found")
    manifests = sorted(base.glob("*.manifest.json"))
    if not manifests:
        raise InputError(f"no *.manifest.json files in {directory}")
    clips, captions = [], []
    for mpath in manifests:
        m = dataio.ClipManifest.from_json(mpath.read_text())
        records = dataio.read_frame_csv(_require_file(str(base / m.csv_path)).read_bytes())
        clips.append(dataio.records_to_trajectory(records, m.clip_id))
        cap = None
        if m.caption_path is not None:
            caps = dataio.read_captions_jsonl(_require_file(str(base / m.caption_path)).read_text())
            cap = caps.get(m.clip_id)
        captions.append(cap)
    return clips, captions


def _corpus(args, cfg):
    if args.synthetic is not None:
        rng = np.random.default_rng(cfg["seed"])
        clips, caps, _ = synthetic_corpus(rng, args.synthetic, cfg["corpus"]["corrupt_fraction"])
        return clips, caps
    if args.corpus is None:
        raise InputError("give --corpus DIR or --synthetic N")
    return _load_corpus(args.corpus)


def _calibrate(clips, cfg) -> FilterThresholds:
    c = cfg["calibration"]
    return calibrate_thresholds(clips, c["reproj_pct"], c["ratio_pct"], tuple(c["speed_pct"]),
                                c["min_quality"], c["min_clips"])


def _trusted_synthetic(cfg) -> list:
    # the trusted corpus uses its own seed stream so it never shares clips with the filtered one
    rng = np.random.default_rng(derive_seed(cfg["seed"], 1))
    return [synthetic_clip(rng, f"gt{i:05d}")[0] for i in range(cfg["calibration"]["synthetic_clips"])]


# --------------------------------------------------------------------------- commands


def cmd_infer_actions(args, cfg) -> None:
    records = dataio.read_frame_csv(_require_file(args.input).read_bytes())
    if len(records) < 2:
        raise InputError("action inference needs at least 2 frames")
    actions = infer_trajectory_actions(dataio.records_to_states(records), args.deadzone)
    out = [dataio.FrameRecord(r.frame_index, r.timestamp, r.player_position, r.player_rotation,
                              r.camera_position, r.camera_rotation, r.intrinsics, a.bits())
           for r, a in zip(records, actions)]
    changed = sum(r.action[:4] != a.bits()[:4] for r, a in zip(records, actions))
    _write(dataio.write_frame_csv(out).decode("ascii"), args.output)
    if args.output not in (None, "-"):
        _summary({"frames": len(out), "movement_labels_changed": changed})


def cmd_filter(args, cfg) -> None:
    clips, caps = _corpus(args, cfg)
    if args.thresholds is not None:
        th = thresholds_from_dict(json.loads(_require_file(args.thresholds).read_text()))
    elif args.synthetic is not None:
        th = _calibrate(_trusted_synthetic(cfg), cfg)
    else:
        th = thresholds_from_dict(cfg["thresholds"])
    with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
        reports = list(pool.map(lambda ca: apply_filters(ca[0], ca[1], th), zip(clips, caps)))
    _write(dataio.write_reports_jsonl(reports), args.output)
    removed = sum(not r.keep for r in reports)
    if args.output not in (None, "-"):
        _summary({"clips": len(reports), "removed": removed, "removal_fraction": removed / len(reports)})


def cmd_calibrate(args, cfg) -> None:
    if args.synthetic is not None:
        rng = np.random.default_rng(cfg["seed"])
        clips = [synthetic_clip(rng, f"gt{i:05d}")[0] for i in range(args.synthetic)]
    else:
        clips, _ = _corpus(args, cfg)
    th = _calibrate(clips, cfg)
    _write(json.dumps(thresholds_to_dict(th), sort_keys=True, indent=2) + "\n", args.output)


def cmd_retrieve(args, cfg) -> None:
    records = dataio.read_frame_csv(_require_file(args.frames).read_bytes())
    by_index = {r.frame_index: r for r in records}
    if args.query not in by_index:
        raise InputError(f"query frame {args.query} is not in {args.frames}")
    entries = [MemoryEntry(r.frame_index, r.camera_pose(), r.camera_intrinsics(), r.frame_index,
                           is_sink=(i == 0)) for i, r in enumerate(records) if r.frame_index < args.query]
    if not entries:
        raise InputError("no frames precede the query")
    q = by_index[args.query]
    rc = cfg["retrieval"]
    res = retrieve(q.camera_pose(), q.camera_intrinsics(), MemoryPool(tuple(entries)),
                   k=args.k or rc["k"], scorer=args.scorer or rc["scorer"], query_index=args.query,
                   n_samples=rc["n_samples"], seed=cfg["seed"], jobs=cfg["jobs"])
    lines = [json.dumps({"frame_index": e.frame_index, "is_sink": e.is_sink, "rank": i, "score": s},
                        sort_keys=True) for i, (e, s) in enumerate(res.selected)]
    _write("".join(line + "\n" for line in lines), args.output)


def cmd_bench_overlap(args, cfg) -> None:
    rng = np.random.default_rng(cfg["seed"])
    pools = [random_pool(rng, args.pool) for _ in range(args.pools)]
    scorers = ("exact", "sampled") if args.scorer == "both" else (args.scorer,)
    rows = [bench_overlap(pools, s, args.samples, cfg["seed"], cfg["jobs"]) for s in scorers]
    _write(write_bench_csv(rows), args.output)


def _explorer_config(e: dict) -> ExplorerConfig:
    base = ExplorerConfig()
    return ExplorerConfig(
        weights=tuple(e["weights"]), speed=e["speed"], camera_mode=e["camera_mode"],
        camera_hold=e["camera_hold"], pitch_range=tuple(math.radians(v) for v in e["pitch_range_deg"]),
        jump_prob=e["jump_prob"], attack_prob=e["attack_prob"], eye_height=base.eye_height, fps=e["fps"],
        stuck=StuckConfig(window=e["stuck_window"]), fallback_range=e["fallback_range"],
        goal_horizon=e["goal_horizon"], intrinsics=base.intrinsics, assembly=CharacterAssembly(),
    )


def cmd_explore(args, cfg) -> None:
    e = cfg["explorer"]
    seed = cfg["seed"]
    if e["density"] > 0:
        mesh = random_maze(np.random.default_rng(derive_seed(seed, 0)), e["width"], e["height"], e["density"])
    else:
        mesh = GridNavMesh.open(e["width"], e["height"])
    ecfg = _explorer_config(e)
    ep = run_episode(mesh, ecfg, ticks=args.ticks, seed=seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    records = [dataio.FrameRecord.from_state(r.tick, r.timestamp, r.player_position, r.player_rotation,
                                             r.camera_pose, ecfg.intrinsics, r.action) for r in ep.records]
    (out / "frames.csv").write_bytes(dataio.write_frame_csv(records))
    last = ep.records[-1]
    state = dataio.AgentStateFile(len(ep.records), last.tick, tuple(map(float, last.player_position)),
                                  last.player_rotation.as_tuple(), tuple(map(float, last.camera_pose.position)),
                                  last.camera_pose.rotation.as_tuple(), camera_yaw(last.camera_pose.rotation),
                                  last.nav_flag, last.action.jump, last.action.attack)
    (out / "state.json").write_text(dataio.write_state_json(state))
    (out / "events.jsonl").write_text("".join(
        json.dumps({"detail": d, "kind": k, "tick": t}, sort_keys=True) + "\n" for t, k, d in ep.events))
    _summary({"coverage": ep.coverage, "ended_early": ep.ended_early, "frames": len(ep.records),
              "stuck_events": sum(k == "stuck" for _, k, _ in ep.events)})


def cmd_stream_sim(args, cfg) -> None:
    s = cfg["stream"]
    layout = ContextLayout(**cfg["layout"])
    plan = plan_rollout(args.segments, layout, cfg["seed"], s["max_segments"])
    script = revisit_script(plan) if args.scenario == "revisit" else constant_script(plan.total_frames)
    kin = Kinematics(s["speed"], s["dt"])
    rc = cfg["retrieval"]
    res = run_stream(plan, StubGenerator(kin), script, kinematics=kin, scorer=rc["scorer"],
                     n_samples=rc["n_samples"])
    _write(trace_to_jsonl(res.trace), args.output)
    if args.output not in (None, "-"):
        _summary({"frames": len(res.latents), "segments": plan.segment_count})


def cmd_rope_probe(args, cfg) -> None:
    r = cfg["rope"]
    rope = RopeConfig(r["theta_base"], r["sigma_theta"], r["head_count"], r["rotary_dim"])
    flat = RopeConfig(r["theta_base"], 0.0, r["head_count"], r["rotary_dim"])
    lo, hi = r["delta_t"]
    dts = np.arange(int(lo), int(hi) + 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tolerance", "rate", "rate_unperturbed"])
    for tol in r["tolerances"]:
        w.writerow([tol, phase_collision_rate(dts, rope, tol), phase_collision_rate(dts, flat, tol)])
    _write(buf.getvalue(), args.output)


def cmd_validate(args, cfg) -> int:
    lines, failed = [], 0
    for path in args.manifest:
        p = _require_file(path)
        m = dataio.ClipManifest.from_json(p.read_text())
        rep = dataio.validate_manifest(m, args.base_dir or p.parent)
        failed += not rep.passed
        lines.append(json.dumps({"clip_id": rep.clip_id, "issues": [list(i) for i in rep.issues],
                                 "passed": rep.passed}, sort_keys=True))
    _write("".join(line + "\n" for line in lines), args.output)
    return 1 if failed and args.strict else 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV} or built-in defaults)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--jobs", type=int, help="worker threads (overrides the config)")
    common.add_argument("--output", "-o", help="report path (default: stdout)")

    p = argparse.ArgumentParser(prog="worldmem", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("infer-actions", parents=[common], help="label a frame CSV with WSAD actions")
    s.add_argument("--input", required=True)
    s.add_argument("--deadzone", type=float, help="metres; default is a quarter of the median step")
    s.set_defaults(func=cmd_infer_actions)

    for name, func, helptext in (("filter", cmd_filter, "filter a clip corpus, one report line per clip"),
                                 ("calibrate", cmd_calibrate, "derive filter thresholds from trusted clips")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--corpus", help="directory of *.manifest.json clips")
        src.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic clips instead")
        if name == "filter":
            s.add_argument("--thresholds", help="thresholds JSON written by `calibrate`")
        s.set_defaults(func=func)

    s = sub.add_parser("retrieve", parents=[common], help="top-k memory frames for one query frame")
    s.add_argument("--frames", required=True, help="frame CSV holding the pool and the query")
    s.add_argument("--query", type=int, required=True, help="frame_index of the query row")
    s.add_argument("--k", type=int)
    s.add_argument("--scorer", choices=("exact", "sampled"))
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("bench-overlap", parents=[common], help="time overlap scorers on random pools")
    s.add_argument("--pool", type=int, default=100, help="candidates per pool")
    s.add_argument("--pools", type=int, default=5, help="number of pools")
    s.add_argument("--scorer", choices=("exact", "sampled", "both"), default="both")
    s.add_argument("--samples", type=int, default=4096)
    s.set_defaults(func=cmd_bench_overlap)

    s = sub.add_parser("explore", parents=[common], help="simulate an exploration episode")
    s.add_argument("--ticks", type=int, default=500)
    s.set_defaults(func=cmd_explore, output_required=True)

    s = sub.add_parser("stream-sim", parents=[common], help="run the streaming planner with the stub generator")
    s.add_argument("--segments", type=int, default=4)
    s.add_argument("--scenario", choices=("revisit", "forward"), default="revisit")
    s.set_defaults(func=cmd_stream_sim)

    s = sub.add_parser("rope-probe", parents=[common], help="phase collision rates with and without base perturbation")
    s.set_defaults(func=cmd_rope_probe)

    s = sub.add_parser("validate", parents=[common], help="check clip manifests against their files")
    s.add_argument("manifest", nargs="+")
    s.add_argument("--base-dir", help="resolve manifest paths here (default: each manifest's directory)")
    s.add_argument("--strict", action="store_true", help="exit 1 when any manifest fails")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.jobs is not None:
            cfg["jobs"] = args.jobs
        if cfg["jobs"] < 1:
            raise ConfigError("jobs must be >= 1")
        if getattr(args, "output_required", False) and not args.output:
            raise InputError(f"{args.command} needs --output DIR")
        return int(args.func(args, cfg) or 0)
    except Exception as exc:  # every failure becomes one JSON line on stderr
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
