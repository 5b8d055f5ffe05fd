"""``crossrig`` command line: retarget, render, package, eval, validate.

Every ``--a.b VALUE`` (or ``--a.b=VALUE``) flag overrides one key of the
JSON config.  Exit codes: 0 success, 1 validation or evaluation-contract
failure, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, PipelineConfig, load_config, load_trajectory, parse_value
from .evaluation import (
    EvalSample,
    InconsistentPointCountError,
    Prediction,
    evaluate,
    read_predictions,
    write_predictions,
    write_report,
)
from .geometry import Pose, RigConfig, load_rig
from .packager import DanglingTokenError, MissingImageError, load_ground_truth, package, validate
from .ply import ParseError
from .render import RenderCamera, render, render_reference, render_rig, retarget_poses
from .render.rig import MANIFEST_NAME, read_manifest, write_manifest
from .scene import SkyModel, flatten_at, load_scene
from .vectormap import load_layer

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
REFERENCE_TOL = 1e-3


class ContractError(Exception):
    """Validation or evaluation contract failed (exit code 1)."""


def _split_overrides(extra: Sequence[str]) -> dict:
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            i += 1
            val = extra[i]
        else:
            raise ConfigError(f"override {tok!r} needs a value")
        out[key] = parse_value(val)
        i += 1
    return out


def _target_rig(cfg: PipelineConfig) -> RigConfig:
    rig = load_rig(cfg.path("target_rig"))
    w, h = cfg.render["width"], cfg.render["height"]
    if w is None:
        return rig
    cams = tuple(replace(c, intrinsics=c.intrinsics.scaled(int(w), int(h))) for c in rig.cameras)
    return replace(rig, cameras=cams)


def _scene(cfg: PipelineConfig):
    source = load_rig(cfg.path("source_rig")).rig_name if cfg.paths.get("source_rig") else ""
    return load_scene(cfg.path("background"), cfg.paths.get("tracks"), cfg.paths.get("objects"),
                      cfg.render["sky_color"], source_rig=source)


def cmd_retarget(cfg: PipelineConfig, args) -> int:
    rows = retarget_poses(load_trajectory(cfg.path("trajectory")), cfg.offset, _target_rig(cfg))
    out = cfg.output / "poses.jsonl"
    write_manifest(rows, out)
    print(f"wrote {len(rows)} camera poses to {out}")
    return EXIT_OK


def cmd_render(cfg: PipelineConfig, args) -> int:
    scene = _scene(cfg)
    rig = _target_rig(cfg)
    poses = load_trajectory(cfg.path("trajectory"))
    out = cfg.output / "render"
    r = cfg.render
    rows = render_rig(scene, poses, cfg.offset, rig, out, near=r["near"], far=r["far"],
                      threads=cfg.threads, backend=args.backend)
    print(f"rendered {len(rows)} images ({rig.n_cameras} cameras x {len(poses)} timestamps) to {out}")
    if args.reference:
        worst = _reference_check(scene, rows, rig, cfg)
        print(f"reference check: max |fast - reference| = {worst:.3g} (tolerance {REFERENCE_TOL:g})")
        if not worst <= REFERENCE_TOL:
            raise ContractError("fast renderer disagrees with the reference renderer")
    return EXIT_OK


def _reference_check(scene, rows, rig: RigConfig, cfg: PipelineConfig) -> float:
    """Render the first timestamp at reduced size with both renderers."""
    scale = float(cfg.render["reference_scale"])
    t0 = rows[0]["t"]
    cloud = flatten_at(scene, t0)
    sky = SkyModel(tuple(cfg.render["sky_color"]))
    worst = 0.0
    for row in (r for r in rows if r["t"] == t0):
        k = rig.camera(row["camera"]).intrinsics
        k = k.scaled(max(1, round(k.width * scale)), max(1, round(k.height * scale)))
        cam = RenderCamera(Pose.from_dict(row["camera_pose"]), k, cfg.render["near"], cfg.render["far"])
        fast = render(cloud, cam, sky, threads=cfg.threads)
        ref = render_reference(cloud, cam, sky)
        worst = max(worst, float(np.max(np.abs(fast.rgb.astype(np.float64) - ref.rgb))))
    return worst


def cmd_package(cfg: PipelineConfig, args) -> int:
    render_dir = cfg.output / "render"
    rows = read_manifest(render_dir / MANIFEST_NAME)
    world_map = load_layer(cfg.paths["map"]) if cfg.paths.get("map") else None
    out = cfg.output / "dataset"
    m = package(rows, render_dir, _target_rig(cfg), out, world_map=world_map,
                masks_dir=cfg.paths.get("masks"), name=cfg.dataset["name"],
                scene_name=cfg.dataset["scene_name"], seed=cfg.seed, bev_range=cfg.bev_range,
                n_points=cfg.n_points)
    print(f"packaged {len(m.samples)} samples / {len(m.sample_data)} sample_data records into {out}")
    return EXIT_OK


def _dataset_dir(cfg: PipelineConfig, args) -> Path:
    return Path(args.dataset) if args.dataset else cfg.output / "dataset"


def cmd_eval(cfg: PipelineConfig, args) -> int:
    pred_path = Path(args.predictions) if args.predictions else cfg.path("predictions")
    gt = load_ground_truth(_dataset_dir(cfg, args))
    preds = read_predictions(pred_path)
    unknown = sorted(set(preds) - set(gt))
    if unknown:
        raise ContractError(f"predictions reference {len(unknown)} unknown samples, e.g. {unknown[0]}")
    samples = [EvalSample(sid, tuple(preds.get(sid, ())), layer) for sid, layer in sorted(gt.items())]
    report = evaluate(samples, cfg.thresholds, ap_mode=cfg.eval["ap_mode"], pooling=cfg.eval["pooling"])
    out = cfg.output / "eval"
    write_report(report, out)
    print(report.to_text())
    print(f"mAP x100 = {report.map:.1f}  (report in {out})")
    return EXIT_OK


def cmd_validate(cfg: PipelineConfig, args) -> int:
    problems = validate(_dataset_dir(cfg, args))
    for p in problems:
        print(f"{p['kind']}: {p['table']} {p['token']}: {p['message']}")
    print(f"{len(problems)} violation(s)")
    if problems:
        raise ContractError(f"{len(problems)} violation(s)")
    return EXIT_OK


def cmd_labels(cfg: PipelineConfig, args) -> int:
    """Write a dataset's own labels as score-1 predictions."""
    gt = load_ground_truth(_dataset_dir(cfg, args))
    preds = {sid: [Prediction(e, 1.0) for e in layer.elements] for sid, layer in gt.items()}
    out = Path(args.out) if args.out else cfg.output / "eval" / "label_predictions.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(preds, out)
    print(f"wrote {sum(map(len, preds.values()))} predictions to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import write_workspace

    path = write_workspace(args.out, n_frames=args.frames, seed=args.seed or 0)
    print(f"wrote synthetic workspace; config at {path}")
    return EXIT_OK


COMMANDS = {
    "retarget": (cmd_retarget, "compute target camera poses without rendering"),
    "render": (cmd_render, "render every target camera along the trajectory"),
    "package": (cmd_package, "write rendered images and map labels as a nuScenes-style dataset"),
    "eval": (cmd_eval, "score vector-map predictions against a dataset's labels"),
    "validate": (cmd_validate, "check a packaged dataset for structural violations"),
    "labels": (cmd_labels, "export a dataset's map labels as predictions"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossrig", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="pipeline config JSON")
        s.add_argument("--seed", type=int, help="token seed (config key 'seed')")
        s.add_argument("--threads", type=int, help="render threads (default: CROSSRIG_THREADS or all cores)")
        if name == "render":
            s.add_argument("--reference", action="store_true",
                           help="also compare against the reference renderer on a downsampled frame")
            s.add_argument("--backend", choices=("cython", "python"), help="force a raster kernel")
        if name in ("eval", "validate", "labels"):
            s.add_argument("--dataset", help="dataset directory (default: <output>/dataset)")
        if name == "eval":
            s.add_argument("--predictions", help="predictions JSONL (default: paths.predictions)")
        if name == "labels":
            s.add_argument("--out", help="output JSONL")
    s = sub.add_parser("synth", help="write a procedural demo workspace")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=10)
    s.add_argument("--seed", type=int)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        if args.command == "synth":
            if extra:
                parser.error(f"unrecognized arguments: {' '.join(extra)}")
            return cmd_synth(args)
        overrides = _split_overrides(extra)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractError, DanglingTokenError, InconsistentPointCountError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ParseError, MissingImageError, json.JSONDecodeError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
