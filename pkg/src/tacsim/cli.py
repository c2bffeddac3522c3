"""Command-line front end: scripted demos, benchmarks, offline tactile
rendering, and optical calibration.

Exit codes: 0 success, 2 configuration error, 3 solver or invariant
failure, 4 I/O error. All artifact writes go through a temp file and an
atomic rename.
"""

import argparse
import json
import os
import sys
import time
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from . import envs as ev
from . import marker as mk
from . import optical as op
from . import tactile as tac
from .errors import (
    CalibrationError,
    ConfigError,
    InvalidArgumentError,
    MeshFormatError,
    NumericalError,
    SolverStallError,
    TacsimError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

# Refuse sweeps that would exhaust desk-scale memory or patience.
MAX_BENCH_ENVS = 64
MAX_STEPS = 100_000

log = ev.log


# ---------------------------------------------------------------------------
# Config plumbing


def _parse_override(item: str) -> Tuple[List[str], object]:
    if "=" not in item:
        raise ConfigError(f"--set needs key=value, got {item!r}")
    key, raw = item.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"--set needs a dotted key, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings stay strings
    return path, value


def _apply_override(doc: object, path: List[str], value: object, full_key: str) -> None:
    head, rest = path[0], path[1:]
    if isinstance(doc, list):
        try:
            idx = int(head)
        except ValueError:
            raise ConfigError(f"--set {full_key}: {head!r} is not a list index")
        if not 0 <= idx < len(doc):
            raise ConfigError(f"--set {full_key}: index {idx} out of range")
        if rest:
            _apply_override(doc[idx], rest, value, full_key)
        else:
            doc[idx] = value
        return
    if not isinstance(doc, dict):
        raise ConfigError(f"--set {full_key}: cannot descend into {type(doc).__name__}")
    if head not in doc:
        raise ConfigError(f"--set {full_key}: unknown key {head!r}")
    if rest:
        _apply_override(doc[head], rest, value, full_key)
    else:
        doc[head] = value


def _mode_name(flag: Optional[str]) -> Optional[str]:
    if flag is None:
        return None
    return {"rigid": ev.MODE_RIGID, "soft": ev.MODE_SOFT}[flag]


def _resolve_config(task: str, args: argparse.Namespace) -> ev.SceneConfig:
    """Config file (or task preset), then --set overrides, then --seed."""
    mode = _mode_name(getattr(args, "mode", None))
    if args.config:
        try:
            with open(args.config) as f:
                text = f.read()
        except OSError as exc:
            raise MeshFormatError(args.config, 0, f"cannot read config: {exc}")
        cfg = ev.config_from_json(text)
        if mode is not None and mode != cfg.physics_mode:
            raise ConfigError("--mode contradicts physics_mode in --config")
    else:
        cfg = ev.default_config(task, mode)
    overrides = getattr(args, "set", None) or []
    if overrides:
        doc = ev.config_to_dict(cfg)
        for item in overrides:
            path, value = _parse_override(item)
            _apply_override(doc, path, value, item)
        cfg = ev.config_from_dict(doc)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _ensure_out(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise MeshFormatError(path, 0, f"cannot create output directory: {exc}")
    return path


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _write_rgb_png(path: str, rgb: np.ndarray) -> None:
    img = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    tmp = f"{path}.tmp.{os.getpid()}.png"
    if not cv2.imwrite(tmp, img[:, :, ::-1]):  # cv2 writes BGR
        raise MeshFormatError(path, 0, "failed to encode PNG")
    os.replace(tmp, path)


def _write_json(path: str, doc: dict) -> None:
    _write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# demo


def cmd_demo(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args.task, args)
    env = ev.make_env(args.task, config=cfg)
    out = _ensure_out(args.out or f"demo_{args.task}")
    n_steps = args.steps or ev.scripted_episode_length(args.task)
    if n_steps > MAX_STEPS:
        raise ConfigError(f"refusing {n_steps} steps (max {MAX_STEPS})")
    if n_steps > env.config.max_steps:
        env.config.max_steps = n_steps

    rest_grids = [mk.grid_rest_positions(s.tactile_config()) for s in env.config.sensors]
    env.reset()
    t0 = time.perf_counter()
    timing_rows = [ev.StageTimings.CSV_HEADER]
    pose_rows = ["step,sensor,tx,ty,tz,qx,qy,qz,qw"]
    obs = None
    for t in range(n_steps):
        obs, timings = env.step(ev.scripted_action(args.task, env.mode, t))
        timing_rows.append(timings.csv_row(t))
        for s, pose in enumerate(obs.case_poses):
            vals = ",".join(f"{v:.17g}" for v in pose.as_array())
            pose_rows.append(f"{t},{s},{vals}")
        for s in range(len(env.config.sensors)):
            tag = f"s{s}_{t:04d}"
            if obs.rgb[s] is not None:
                _write_rgb_png(os.path.join(out, f"tactile_{tag}.png"), obs.rgb[s])
            mk.save_markers_csv(
                os.path.join(out, f"markers_{tag}.csv"),
                mk.MarkerField(rest_grids[s], obs.markers[s]),
            )
    wall = time.perf_counter() - t0

    _write_text(os.path.join(out, "timings.csv"), "\n".join(timing_rows) + "\n")
    _write_text(os.path.join(out, "poses.csv"), "\n".join(pose_rows) + "\n")
    violations = env.invariant_violations()
    summary = {
        "task": args.task,
        "mode": env.mode,
        "steps": n_steps,
        "wall_seconds": round(wall, 3),
        "invariant_violations": violations,
        "final_digest": ev.observation_digest(obs) if obs else None,
    }
    if args.task == "object_lifting":
        summary["lift_success"] = env.lift_success()
    if args.task == "object_pushing":
        summary["final_reward"] = env.reward()
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"demo {args.task}: {n_steps} steps in {wall:.1f}s -> {out}")
    if violations:
        print(f"error: {violations} step(s) violated soft-body invariants", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _counts_up_to(limit: int) -> List[int]:
    counts = [1]
    while counts[-1] * 2 <= limit:
        counts.append(counts[-1] * 2)
    return counts


def cmd_bench(args: argparse.Namespace) -> int:
    if args.envs > MAX_BENCH_ENVS:
        raise ConfigError(f"refusing {args.envs} environments (max {MAX_BENCH_ENVS})")
    if args.steps > MAX_STEPS:
        raise ConfigError(f"refusing {args.steps} steps (max {MAX_STEPS})")
    out = _ensure_out(args.out or "bench")
    counts = _counts_up_to(args.envs)
    mode = getattr(args, "mode", None)
    seed = args.seed if args.seed is not None else 0
    overrides = [_parse_override(item) for item in (args.set or [])]

    def sweep_counts(mode_name: str, use_counts: List[int]) -> List[ev.BenchReport]:
        def factory(i: int) -> ev.Environment:
            cfg = ev.default_config(args.task, mode_name)
            if overrides:
                doc = ev.config_to_dict(cfg)
                for path, value in overrides:
                    _apply_override(doc, path, value, ".".join(path))
                cfg = ev.config_from_dict(doc)
            cfg.seed = seed + i
            return ev.Environment(args.task, cfg)

        return [
            ev.run_bench(factory, n, n_steps=args.steps, warmup=args.warmup)
            for n in use_counts
        ]

    rigid_reports: List[ev.BenchReport] = []
    soft_reports: List[ev.BenchReport] = []
    if mode in (None, "rigid") and args.task not in ("beam_twisting", "object_lifting"):
        rigid_reports = sweep_counts(ev.MODE_RIGID, counts)
    if mode in (None, "soft"):
        soft_counts = [c for c in counts if c <= args.soft_envs]
        soft_reports = sweep_counts(ev.MODE_SOFT, soft_counts)

    sweep = rigid_reports or soft_reports
    ev.write_stage_sweep_csv(os.path.join(out, "stage_sweep.csv"), sweep)
    ev.write_mode_scaling_csv(
        os.path.join(out, "mode_scaling.csv"), counts, rigid_reports, soft_reports
    )
    ev.write_stage_stats_csv(
        os.path.join(out, "stage_stats.csv"), rigid_reports + soft_reports
    )
    if args.mesh_cost:
        rows = ev.bench_soft_mesh_cost(n_steps=max(2, args.steps // 2), seed=seed)
        ev.write_mesh_cost_csv(os.path.join(out, "mesh_cost.csv"), rows)
    if rigid_reports:
        ok, note = ev.rigid_scaling_note(rigid_reports)
        _write_text(os.path.join(out, "scaling_note.txt"), note + "\n")
        print(note)
    print(f"bench {args.task}: counts {counts} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# render (offline replay of recorded height maps)


def cmd_render(args: argparse.Namespace) -> int:
    if not args.table or not args.table_png:
        raise ConfigError(
            "rendering needs a calibrated table: pass --table/--table-png "
            "(produce them with the calibrate command)"
        )
    for path in (args.table, args.table_png):
        if not os.path.exists(path):
            raise ConfigError(f"missing table file {path}: run calibrate first")
    table = op.load_polytable(args.table, args.table_png)
    lighting = op.default_lighting()
    sensor = _resolve_config("ball_rolling", args).sensors[0].tactile_config()
    out = _ensure_out(args.out or "render")

    for path in args.files:
        hm = tac.load_heightmap_raw(path)
        ind = tac.indentation_from(hm, sensor)
        smooth = tac.smooth_pyramid(ind)
        rgb = op.shade(op.normals_from(smooth), table)
        rgb = op.add_shadows(rgb, hm, lighting)
        load = mk.contact_center(ind)
        field = mk.marker_displacements(load, mk.grid_rest_positions(sensor))
        stem = os.path.splitext(os.path.basename(path))[0]
        _write_rgb_png(os.path.join(out, f"{stem}_tactile.png"), rgb)
        mk.save_markers_csv(os.path.join(out, f"{stem}_markers.csv"), field)
        n_contact = int((ind.values > 1e-5).sum())
        print(f"{path}: contact pixels {n_contact}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate


def cmd_calibrate(args: argparse.Namespace) -> int:
    sensor = _resolve_config("ball_rolling", args).sensors[0].tactile_config()
    lighting = op.default_lighting()
    table = op.calibrate(lighting, sensor, degree=args.degree)
    out = _ensure_out(args.out or "calibration")
    json_path = os.path.join(out, "table.json")
    png_path = os.path.join(out, "table.png")
    op.save_polytable(table, json_path, png_path)
    rmse = ", ".join(f"{v:.4f}" for v in np.asarray(table.fit_rmse))
    print(f"calibrated table (degree {args.degree}), rmse per channel: {rmse}")
    print(f"wrote {json_path} and {png_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args: argparse.Namespace) -> int:
    from . import bridge

    return bridge.serve(sys.stdin, sys.stdout)


# ---------------------------------------------------------------------------
# parser and entry point


def _add_common(
    p: argparse.ArgumentParser, with_mode: bool = True, with_config: bool = True
) -> None:
    if with_config:
        p.add_argument("--config", help="scene config JSON path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="scene seed")
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="dotted-path config override, e.g. solver.dt=0.005",
    )
    if with_mode:
        p.add_argument("--mode", choices=("rigid", "soft"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tacsim", description="Visuotactile sensor simulation toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="run a scripted task and dump artifacts")
    p.add_argument("task", choices=ev.TASKS)
    p.add_argument("--steps", type=int, default=None, help="override episode length")
    _add_common(p)
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("bench", help="benchmark stepping across env counts")
    p.add_argument("--task", default="ball_rolling", choices=ev.TASKS)
    p.add_argument("--envs", type=int, default=16, help="largest env count")
    p.add_argument("--soft-envs", type=int, default=2, help="largest soft env count")
    p.add_argument("--steps", type=int, default=10, help="timed steps per count")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--mesh-cost", action="store_true",
                   help="also time the three soft ball mesh presets")
    _add_common(p, with_config=False)  # sweeps build preset scenes per mode
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("render", help="turn recorded height maps into tactile frames")
    p.add_argument("files", nargs="+", help="height map .raw files")
    p.add_argument("--table", help="calibrated table JSON")
    p.add_argument("--table-png", help="calibrated table background PNG")
    _add_common(p, with_mode=False)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("calibrate", help="fit the optical lookup table")
    p.add_argument("--degree", type=int, default=2)
    _add_common(p, with_mode=False)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("serve", help="line-delimited JSON bridge on stdio")
    _add_common(p, with_mode=False)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverStallError, NumericalError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (MeshFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
