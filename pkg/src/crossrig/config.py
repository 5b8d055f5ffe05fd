"""Pipeline configuration: one JSON document, overridable key by key."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .evaluation import THRESHOLDS
from .geometry import Pose, RigOffset
from .scene import DEFAULT_SKY
from .vectormap import DEFAULT_N_POINTS, BevRange


class ConfigError(ValueError):
    pass


PATH_KEYS = ("background", "tracks", "objects", "source_rig", "target_rig", "trajectory",
             "map", "masks", "predictions")

DEFAULTS: dict[str, Any] = {
    "paths": {k: None for k in PATH_KEYS} | {"output": "out"},
    "offset": {"rotation_wxyz": [1.0, 0.0, 0.0, 0.0], "translation_xyz_m": [0.0, 0.0, 0.0]},
    "render": {"width": None, "height": None, "sky_color": list(DEFAULT_SKY), "near": 0.2,
               "far": 1000.0, "reference_scale": 0.25},
    "bev_range": BevRange().to_dict(),
    "n_points": DEFAULT_N_POINTS,
    "thresholds": list(THRESHOLDS),
    "eval": {"ap_mode": "101", "pooling": "global"},
    "dataset": {"name": "crossrig", "scene_name": "scene-0001"},
    "seed": 0,
    "threads": None,
}


@dataclass
class PipelineConfig:
    paths: dict[str, Path | None]
    output: Path
    offset: RigOffset
    render: dict
    bev_range: BevRange
    n_points: int
    thresholds: tuple[float, ...]
    eval: dict
    dataset: dict
    seed: int
    threads: int | None
    raw: dict = field(default_factory=dict)

    def path(self, key: str) -> Path:
        p = self.paths.get(key)
        if p is None:
            raise ConfigError(f"paths.{key} is required for this command")
        return p


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        nxt = cur.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a section")
        cur = nxt
    cur[parts[-1]] = value


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(raw: dict, base_dir: str | Path = ".", overrides: dict | None = None) -> PipelineConfig:
    doc = _merge(DEFAULTS, raw)
    for k, v in (overrides or {}).items():
        set_dotted(doc, k, v)
    base = Path(base_dir)
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    paths: dict[str, Path | None] = {}
    for k, v in doc["paths"].items():
        if k == "output":
            continue
        if v is None:
            paths[k] = None
            continue
        p = Path(v) if Path(v).is_absolute() else base / v
        if not p.exists():
            raise ConfigError(f"paths.{k}: {p} does not exist")
        paths[k] = p
    out = Path(doc["paths"]["output"])
    output = out if out.is_absolute() else base / out

    try:
        offset = RigOffset(Pose.from_dict(doc["offset"]))
        bev = BevRange.from_dict(doc["bev_range"])
        thresholds = tuple(float(t) for t in doc["thresholds"])
        n_points = int(doc["n_points"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if not thresholds or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigError(f"thresholds must be strictly increasing, got {list(thresholds)}")
    if n_points < 2:
        raise ConfigError("n_points must be >= 2")
    r = doc["render"]
    if not 0 < float(r["near"]) < float(r["far"]):
        raise ConfigError("render.near/far must satisfy 0 < near < far")
    if (r["width"] is None) != (r["height"] is None):
        raise ConfigError("render.width and render.height must be given together")
    return PipelineConfig(paths, output, offset, r, bev, n_points, thresholds, doc["eval"],
                          doc["dataset"], int(doc["seed"]), doc["threads"], doc)


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    if path is None:
        return build_config({}, ".", overrides)
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return build_config(raw, Path(path).parent, overrides)


def load_trajectory(path: str | Path) -> list[tuple[float, Pose]]:
    """``[{t, rotation_wxyz, translation_xyz_m}, ...]`` source-vehicle poses."""
    with open(path) as f:
        data = json.load(f)
    if isinstance(data, dict):
        data = data.get("poses", [])
    out = [(float(r["t"]), Pose.from_dict(r)) for r in data]
    ts = [t for t, _ in out]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigError(f"{path}: trajectory timestamps must be strictly increasing")
    return out


def save_trajectory(poses, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump([{"t": t, **p.to_dict()} for t, p in poses], f, indent=1)
