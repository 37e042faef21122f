"""Command-line pipeline: retarget, stage-wise entry points, metrics.

Configuration comes from an optional JSON or TOML file plus flag
overrides; every run writes a manifest (resolved config, config hash,
seed, versions) sufficient to reproduce it exactly.  Outputs use fixed
filenames under ``--out``: ``motion.json``, ``solution.json``,
``metrics.csv``, ``manifest.json``, ``tmr_history.csv``.

Exit codes: 0 on success, 1 on algorithmic failure (QP/IK/tracker), 2 on
I/O or configuration errors.
"""

import argparse
import copy
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import NUMBA_ENABLED
from .ddp import DdpDivergence, OcpOptions
from .kinematics import uvm_retarget
from .metrics import (
    MetricsReport,
    contact_iou,
    dtw_keypoint_l1,
    dtw_normalized_pct,
    foot_slide,
    recovery_rate,
    travel_distance,
)
from .motion import (
    Heightmap,
    Motion,
    MotionFormatError,
    detect_contacts,
    load_heightmap,
    load_motion,
    save_motion,
)
from .robot import RobotModelError, load_robot_json, parse_urdf_subset
from .smr import SmrConfig, SmrError, smr
from .tmr import ScoreWeights, tmr
from .tracking import TrackingWeights, solution_to_motion

EXIT_OK = 0
EXIT_ALGORITHM = 1
EXIT_CONFIG = 2

METRICS_FIELDS = [
    "motion", "robot", "method",
    "dtw_l1_mm", "dtw_normalized_pct",
    "foot_slide_mean_mm", "foot_slide_FL_mm", "foot_slide_FR_mm",
    "foot_slide_RL_mm", "foot_slide_RR_mm",
    "contact_iou", "travel_distance_m", "recovery_rate_pct",
]

DEFAULT_CONFIG = {
    "robot": None,
    "source_robot": None,
    "motion": None,
    "reference": None,
    "terrain": None,
    "out": "out",
    "seed": 0,
    "no_base": False,
    "smr": {
        "k_q": 1.0, "k_p": 1.0, "eta": 0.5, "qdot_thres": 1e-4,
        "polyfit_horizon": 10, "max_inner_iters": 50,
        "base_pos_weight": 10.0, "base_rot_weight": 5.0, "joint_weight": 1.0,
    },
    "tmr": {
        "segments": 1, "alpha_min": 0.5, "alpha_max": 2.0,
        "budget_warm": 8, "budget_iter": 12,
        "w_contact": 1.0, "w_reg": 0.01, "xi": 0.01,
    },
    "tracking": {
        "base_pos": 100.0, "base_rot": 50.0, "feet": 50.0,
        "u_reg": 1e-6, "penalty": 1e-3, "mu": 0.7,
    },
    "ddp": {"max_iter": 100, "tol": 1e-6, "lambda_init": 1e-6},
    "contacts": {"vel_threshold": 0.05, "cutoff_hz": 6.0},
}


class ConfigError(ValueError):
    pass


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in out:
            raise ConfigError(f"unknown config key '{key}'")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    if p.suffix.lower() == ".toml":
        try:
            import tomllib as toml
        except ImportError:
            import tomli as toml
        with open(p, "rb") as fh:
            return toml.load(fh)
    with open(p) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        cfg = _deep_merge(cfg, _load_config_file(args.config))
    direct = {
        "robot": args.robot, "source_robot": getattr(args, "source_robot", None),
        "motion": args.motion, "terrain": args.terrain, "out": args.out,
        "seed": args.seed, "reference": getattr(args, "reference", None),
    }
    for key, value in direct.items():
        if value is not None:
            cfg[key] = value
    if getattr(args, "no_base", False):
        cfg["no_base"] = True
    tmr_over = {
        "segments": args.segments, "alpha_min": args.alpha_min,
        "alpha_max": args.alpha_max, "budget_warm": args.budget_warm,
        "budget_iter": args.budget_iter,
    }
    for key, value in tmr_over.items():
        if value is not None:
            cfg["tmr"][key] = value
    return cfg


def _require(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise ConfigError(f"missing required setting '{key}' (flag --{key.replace('_', '-')})")
    return cfg[key]


def _load_robot(path: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"robot file not found: {path}")
    if p.suffix.lower() in (".urdf", ".xml"):
        return parse_urdf_subset(p.read_text())
    return load_robot_json(p)


def _load_motion_checked(path: str) -> Motion:
    if not Path(path).exists():
        raise ConfigError(f"motion file not found: {path}")
    return load_motion(path)


def _load_terrain(cfg: dict) -> Heightmap:
    if cfg.get("terrain"):
        if not Path(cfg["terrain"]).exists():
            raise ConfigError(f"terrain file not found: {cfg['terrain']}")
        return load_heightmap(cfg["terrain"])
    return Heightmap.flat(0.0)


def _smr_config(cfg: dict) -> SmrConfig:
    return SmrConfig(**cfg["smr"])


def _tracking_weights(cfg: dict) -> TrackingWeights:
    return TrackingWeights(**cfg["tracking"])


def _ddp_options(cfg: dict) -> OcpOptions:
    return OcpOptions(**cfg["ddp"])


def _schedule(motion: Motion, cfg: dict, terrain: Heightmap) -> np.ndarray:
    if motion.contacts is not None:
        return motion.contacts
    return detect_contacts(motion, cfg["contacts"]["vel_threshold"],
                           cfg["contacts"]["cutoff_hz"], terrain=terrain)


def _float_cell(value):
    if value == "" or value is None:
        return ""
    return repr(float(value))


def write_metrics_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_FIELDS)
        for row in rows:
            writer.writerow(
                [row["motion"], row["robot"], row["method"]]
                + [_float_cell(row.get(k, "")) for k in METRICS_FIELDS[3:]]
            )


def _metrics_row(motion_name, robot_name, method, report: MetricsReport) -> dict:
    row = {"motion": motion_name, "robot": robot_name, "method": method}
    row.update(report.as_dict())
    return row


def write_manifest(out_dir: Path, command: str, cfg: dict) -> None:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": cfg.get("seed", 0),
        "numba_enabled": NUMBA_ENABLED,
        "versions": {
            "quadretarget": __version__,
            "numpy": np.__version__,
        },
    }
    try:
        import numba
        manifest["versions"]["numba"] = numba.__version__
    except ImportError:
        manifest["versions"]["numba"] = None
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def write_solution_json(path, result, fps: float) -> None:
    sol = result.best_solution
    doc = {
        "alpha": result.best_alpha.alphas.tolist(),
        "score": result.best_score,
        "fps": fps,
        "dt": 1.0 / fps,
        "converged": bool(sol.converged),
        "iterations": sol.iterations,
        "cost_trace": [float(c) for c in sol.cost_trace],
        "states": sol.xs.tolist(),
        "controls": sol.us.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def write_tmr_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        n_alpha = history[0].alphas.shape[0] if history else 1
        writer.writerow(
            ["iteration"] + [f"alpha_{i}" for i in range(n_alpha)]
            + ["score", "ddp_cost", "accepted"]
        )
        for rec in history:
            writer.writerow(
                [rec.iteration]
                + [repr(float(a)) for a in rec.alphas]
                + [repr(float(rec.score)), repr(float(rec.ddp_cost)), rec.accepted]
            )


def _dominant_axis(motion: Motion) -> str:
    disp = motion.base_pos[-1] - motion.base_pos[0]
    return "y" if abs(disp[1]) > abs(disp[0]) else "x"


def _smr_report(source: Motion, result: Motion, cfg: dict) -> MetricsReport:
    slides = foot_slide(result)
    detected = detect_contacts(result, cfg["contacts"]["vel_threshold"],
                               cfg["contacts"]["cutoff_hz"])
    src_sched = source.contacts if source.contacts is not None else detected
    return MetricsReport(
        dtw_l1_mm=dtw_keypoint_l1(source, result),
        dtw_normalized_pct=dtw_normalized_pct(source, result),
        foot_slide_mm=slides,
        foot_slide_mean_mm=(float(np.nanmean(slides)) if np.any(np.isfinite(slides)) else None),
        contact_iou=contact_iou(src_sched, detected),
        travel_distance_m=travel_distance(result),
    )


def _run_smr_stage(cfg: dict, command: str):
    robot = _load_robot(_require(cfg, "robot"))
    motion = _load_motion_checked(_require(cfg, "motion"))
    terrain = _load_terrain(cfg)
    source_for_metrics = motion
    if cfg.get("source_robot"):
        src_robot = _load_robot(cfg["source_robot"])
        motion = uvm_retarget(motion, src_robot, robot)
        source_for_metrics = motion
    if command == "reconstruct":
        if motion.has_base:
            original = motion
            motion = motion.strip_base()
        else:
            original = None
        use_base = False
    else:
        original = None
        use_base = motion.has_base and not cfg["no_base"]
    schedule = _schedule(motion, cfg, terrain)
    result = smr(robot, motion, schedule, terrain, _smr_config(cfg), use_base)
    return robot, motion, terrain, source_for_metrics, original, result


def cmd_smr(cfg: dict, command: str = "smr") -> int:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    robot, motion, terrain, source, original, result = _run_smr_stage(cfg, command)
    save_motion(result, out_dir / "motion.json")
    report = _smr_report(source if command != "reconstruct" else motion, result, cfg)
    if original is not None:
        report.recovery_rate_pct = recovery_rate(original, result, _dominant_axis(original))
    motion_name = Path(cfg["motion"]).stem
    rows = [_metrics_row(motion_name, robot.name, command, report)]
    write_metrics_csv(out_dir / "metrics.csv", rows)
    write_manifest(out_dir, command, cfg)
    return EXIT_OK


def cmd_reconstruct(cfg: dict) -> int:
    return cmd_smr(cfg, command="reconstruct")


def _run_tmr_stage(cfg: dict, robot, smr_motion: Motion, terrain: Heightmap):
    from .tracking import warp_targets

    tmr_cfg = cfg["tmr"]
    result = tmr(
        smr_motion,
        robot,
        segment_count=int(tmr_cfg["segments"]),
        bounds=(float(tmr_cfg["alpha_min"]), float(tmr_cfg["alpha_max"])),
        budget=(int(tmr_cfg["budget_warm"]), int(tmr_cfg["budget_iter"])),
        seed=int(cfg["seed"]),
        weights=ScoreWeights(tmr_cfg["w_contact"], tmr_cfg["w_reg"]),
        ddp_opts=_ddp_options(cfg),
        tracking_weights=_tracking_weights(cfg),
        terrain=terrain,
        xi=float(tmr_cfg["xi"]),
    )
    targets = warp_targets(smr_motion, result.best_alpha)
    final = solution_to_motion(robot, result.best_solution, targets, smr_motion.fps)
    return result, final


def cmd_tmr(cfg: dict) -> int:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    robot = _load_robot(_require(cfg, "robot"))
    motion = _load_motion_checked(_require(cfg, "motion"))
    if motion.joint_angles is None or not motion.has_base:
        raise ConfigError(
            "temporal retargeting needs a spatially retargeted motion "
            "(run the smr subcommand first)"
        )
    terrain = _load_terrain(cfg)
    result, final = _run_tmr_stage(cfg, robot, motion, terrain)
    save_motion(final, out_dir / "motion.json")
    write_solution_json(out_dir / "solution.json", result, motion.fps)
    write_tmr_history(out_dir / "tmr_history.csv", result.history)
    report = _smr_report(motion, final, cfg)
    rows = [_metrics_row(Path(cfg["motion"]).stem, robot.name, "tmr", report)]
    write_metrics_csv(out_dir / "metrics.csv", rows)
    write_manifest(out_dir, "tmr", cfg)
    return EXIT_OK


def cmd_retarget(cfg: dict) -> int:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    robot, motion, terrain, source, _, smr_result = _run_smr_stage(cfg, "retarget")
    result, final = _run_tmr_stage(cfg, robot, smr_result, terrain)

    save_motion(final, out_dir / "motion.json")
    save_motion(smr_result, out_dir / "motion_smr.json")
    write_solution_json(out_dir / "solution.json", result, motion.fps)
    write_tmr_history(out_dir / "tmr_history.csv", result.history)

    motion_name = Path(cfg["motion"]).stem
    rows = [
        _metrics_row(motion_name, robot.name, "smr", _smr_report(source, smr_result, cfg)),
        _metrics_row(motion_name, robot.name, "tmr", _smr_report(smr_result, final, cfg)),
    ]
    write_metrics_csv(out_dir / "metrics.csv", rows)
    write_manifest(out_dir, "retarget", cfg)
    return EXIT_OK


def cmd_metrics(cfg: dict) -> int:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    motion = _load_motion_checked(_require(cfg, "motion"))
    reference = _load_motion_checked(_require(cfg, "reference"))
    report = MetricsReport(
        dtw_l1_mm=dtw_keypoint_l1(reference, motion),
        dtw_normalized_pct=dtw_normalized_pct(reference, motion),
    )
    if motion.contacts is not None:
        slides = foot_slide(motion)
        report.foot_slide_mm = slides
        if np.any(np.isfinite(slides)):
            report.foot_slide_mean_mm = float(np.nanmean(slides))
    if motion.contacts is not None and reference.contacts is not None:
        report.contact_iou = contact_iou(reference.contacts, motion.contacts)
    if motion.has_base:
        report.travel_distance_m = travel_distance(motion)
    if motion.has_base and reference.has_base:
        try:
            report.recovery_rate_pct = recovery_rate(reference, motion,
                                                     _dominant_axis(reference))
        except ValueError:
            pass
    rows = [_metrics_row(Path(cfg["motion"]).stem, "-", "metrics", report)]
    write_metrics_csv(out_dir / "metrics.csv", rows)
    write_manifest(out_dir, "metrics", cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadretarget",
        description="Kino-dynamic retargeting of quadruped keypoint motions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("retarget", "full pipeline: optional morphology transfer, spatial stage, temporal stage"),
        ("smr", "spatial stage only: contact-consistent whole-body reconstruction"),
        ("tmr", "temporal stage only: time-warp optimization of a spatial result"),
        ("reconstruct", "strip the base pose and rebuild it from local motion"),
        ("metrics", "evaluate a motion against a reference"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON or TOML configuration file")
        p.add_argument("--robot", help="target robot description (.json or .urdf)")
        p.add_argument("--source-robot", dest="source_robot",
                       help="source robot; enables morphology transfer before the spatial stage")
        p.add_argument("--motion", help="input motion JSON")
        p.add_argument("--reference", help="reference motion JSON (metrics)")
        p.add_argument("--terrain", help="heightmap JSON")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed recorded in the manifest")
        p.add_argument("--segments", type=int, help="number of time-warp segments")
        p.add_argument("--alpha-min", dest="alpha_min", type=float, help="lower time-scale bound")
        p.add_argument("--alpha-max", dest="alpha_max", type=float, help="upper time-scale bound")
        p.add_argument("--budget-warm", dest="budget_warm", type=int,
                       help="random warm-start evaluations")
        p.add_argument("--budget-iter", dest="budget_iter", type=int,
                       help="surrogate-guided evaluations")
        p.add_argument("--no-base", dest="no_base", action="store_true",
                       help="ignore any base pose in the motion")
    return parser


_COMMANDS = {
    "retarget": cmd_retarget,
    "smr": cmd_smr,
    "tmr": cmd_tmr,
    "reconstruct": cmd_reconstruct,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, MotionFormatError, RobotModelError, FileNotFoundError) as exc:
        print(f"error [{args.command}/config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SmrError, DdpDivergence, np.linalg.LinAlgError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM
    except ValueError as exc:
        print(f"error [{args.command}/config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
