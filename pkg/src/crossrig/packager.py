"""Write rendered rigs as a nuScenes-style database and validate the result.

Layout under the output directory::

    v1.0-<name>/*.json            tables (+ crossrig.json metadata)
    samples/<CAMERA>/*.png
    samples/LIDAR_TOP/*.pcd.bin   zero-point placeholders
    maps/labels/<sample_token>.json
    masks/<CAMERA>.png            optional static ego masks
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Pose, RigConfig, quat_to_matrix, rig_from_dict, rig_to_dict
from .vectormap import (
    DEFAULT_N_POINTS,
    BevRange,
    DegenerateElementError,
    MapLayer,
    clip_to_range,
    load_layer,
    resample,
    save_layer,
    world_to_ego,
)

LIDAR_CHANNEL = "LIDAR_TOP"
# LIDAR_TOP-like mounting: roof centre, x right / y forward
DEFAULT_LIDAR_EXTRINSIC = Pose.from_yaw(-math.pi / 2, (0.943713, 0.0, 1.84023))

TABLES = ("log", "scene", "sample", "sample_data", "ego_pose", "calibrated_sensor", "sensor")
OPTIONAL_TABLES = ("attribute", "visibility", "category", "instance", "sample_annotation", "map")
META_NAME = "crossrig.json"


class PackagingError(RuntimeError):
    pass


class MissingImageError(PackagingError):
    pass


class DanglingTokenError(PackagingError):
    pass


class DatasetReadError(OSError):
    pass


def make_token(seed: int | str, *parts) -> str:
    """Deterministic 32-hex token from identifiers."""
    key = "|".join([str(seed), *map(str, parts)])
    return hashlib.md5(key.encode("utf-8")).hexdigest()


def to_microseconds(t: float) -> int:
    return int(round(float(t) * 1e6))


@dataclass
class DatasetManifest:
    version: str
    root: Path
    tables: dict[str, list] = field(default_factory=dict)
    label_files: dict[str, str] = field(default_factory=dict)  # sample token -> relative path

    @property
    def scenes(self) -> list[dict]:
        return self.tables.get("scene", [])

    @property
    def samples(self) -> list[dict]:
        return self.tables.get("sample", [])

    @property
    def sample_data(self) -> list[dict]:
        return self.tables.get("sample_data", [])

    @property
    def calibrated_sensors(self) -> list[dict]:
        return self.tables.get("calibrated_sensor", [])


def _label_layer(world_map: MapLayer, map_center: Pose, bev_range: BevRange, n_points: int) -> MapLayer:
    local = clip_to_range(world_to_ego(world_map, map_center), bev_range)
    els = []
    for e in local.elements:
        try:
            els.append(resample(e, n_points))
        except DegenerateElementError:
            continue
    return MapLayer(tuple(els), "ego", bev_range, {"center_frame": LIDAR_CHANNEL})


def _link(rows: list[dict]) -> None:
    for i, r in enumerate(rows):
        r["prev"] = rows[i - 1]["token"] if i > 0 else ""
        r["next"] = rows[i + 1]["token"] if i + 1 < len(rows) else ""


def package(render_rows: Sequence[dict], render_root: str | Path, target_rig: RigConfig,
            out_dir: str | Path, *, ego_poses: Sequence[tuple[float, Pose]] | None = None,
            world_map: MapLayer | None = None, masks_dir: str | Path | None = None,
            name: str = "crossrig", scene_name: str = "scene-0001", seed: int = 0,
            bev_range: BevRange | None = None, n_points: int = DEFAULT_N_POINTS) -> DatasetManifest:
    """Package one rendered scene.

    ``render_rows`` are render-manifest rows (``t``, ``camera``, ``image``
    relative to ``render_root``).  ``ego_poses`` are target-vehicle world
    poses; when omitted they are read from the rows.  The write is atomic:
    the dataset appears at ``out_dir`` only after it validates.
    """
    render_root = Path(render_root)
    out_dir = Path(out_dir)
    bev_range = bev_range or BevRange()
    version = f"v1.0-{name}"
    lidar_ext = target_rig.lidar_extrinsic or DEFAULT_LIDAR_EXTRINSIC
    cam_names = [c.name for c in target_rig.cameras]

    by_time: dict[int, dict[str, dict]] = {}
    for r in render_rows:
        by_time.setdefault(to_microseconds(r["t"]), {})[r["camera"]] = r
    times = sorted(by_time)
    poses: dict[int, Pose] = {}
    if ego_poses is not None:
        poses = {to_microseconds(t): p for t, p in ego_poses}
    for ts in times:
        missing = [c for c in cam_names if c not in by_time[ts]]
        if missing:
            raise MissingImageError(f"timestamp {ts}us lacks images for cameras {missing}")
        if ts not in poses:
            vp = next(iter(by_time[ts].values())).get("vehicle_pose")
            if vp is None:
                raise PackagingError(f"no ego pose for timestamp {ts}us")
            poses[ts] = Pose.from_dict(vp)

    parent = out_dir.parent
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}-", dir=parent))
    try:
        manifest = _write(tmp, version, times, by_time, poses, render_root, target_rig, lidar_ext,
                          world_map, masks_dir, scene_name, seed, bev_range, n_points)
        problems = validate(tmp)
        if problems:
            raise DanglingTokenError(f"packaged dataset is inconsistent: {problems[:5]}")
        if out_dir.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}-old-", dir=parent))
            os.replace(out_dir, old / "d")
            os.replace(tmp, out_dir)
            shutil.rmtree(old)
        else:
            os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    manifest.root = out_dir
    return manifest


def _write(root: Path, version, times, by_time, poses, render_root, rig, lidar_ext, world_map,
           masks_dir, scene_name, seed, bev_range, n_points) -> DatasetManifest:
    tables: dict[str, list] = {t: [] for t in TABLES + OPTIONAL_TABLES}
    labels: dict[str, str] = {}
    vdir = root / version
    vdir.mkdir(parents=True)

    sensors = {}
    for cam in rig.cameras:
        sensors[cam.name] = (cam.extrinsic, cam.intrinsics.matrix().tolist(), "camera")
    sensors[LIDAR_CHANNEL] = (lidar_ext, [], "lidar")
    calib_token = {}
    for ch, (ext, k, modality) in sensors.items():
        st = make_token(seed, "sensor", ch)
        ct = make_token(seed, "calibrated_sensor", rig.rig_name, ch)
        calib_token[ch] = ct
        tables["sensor"].append({"token": st, "channel": ch, "modality": modality})
        tables["calibrated_sensor"].append({
            "token": ct, "sensor_token": st,
            "translation": list(ext.translation), "rotation": list(ext.rotation),
            "camera_intrinsic": k,
        })

    if times:
        log_token = make_token(seed, "log", scene_name)
        scene_token = make_token(seed, "scene", scene_name)
        tables["log"].append({"token": log_token, "logfile": scene_name, "vehicle": rig.rig_name,
                              "date_captured": "", "location": "crossrig"})
        samples, chains = [], {ch: [] for ch in sensors}
        for ts in times:
            s_tok = make_token(seed, "sample", scene_name, ts)
            e_tok = make_token(seed, "ego_pose", scene_name, ts)
            pose = poses[ts]
            tables["ego_pose"].append({"token": e_tok, "timestamp": ts,
                                       "rotation": list(pose.rotation), "translation": list(pose.translation)})
            samples.append({"token": s_tok, "timestamp": ts, "scene_token": scene_token})
            for ch in sensors:
                sd_tok = make_token(seed, "sample_data", scene_name, ch, ts)
                if ch == LIDAR_CHANNEL:
                    rel = f"samples/{ch}/{scene_name}__{ch}__{ts}.pcd.bin"
                    (root / rel).parent.mkdir(parents=True, exist_ok=True)
                    (root / rel).write_bytes(b"")
                    w = h = 0
                    fmt = "pcd"
                else:
                    row = by_time[ts][ch]
                    src = render_root / row["image"]
                    if not src.is_file():
                        raise MissingImageError(f"rendered image not found: {src}")
                    rel = f"samples/{ch}/{scene_name}__{ch}__{ts}.png"
                    (root / rel).parent.mkdir(parents=True, exist_ok=True)
                    shutil.copyfile(src, root / rel)
                    k = rig.camera(ch).intrinsics
                    w, h, fmt = k.width, k.height, "png"
                chains[ch].append({
                    "token": sd_tok, "sample_token": s_tok, "ego_pose_token": e_tok,
                    "calibrated_sensor_token": calib_token[ch], "timestamp": ts,
                    "fileformat": fmt, "is_key_frame": True, "height": h, "width": w,
                    "filename": rel,
                })
            if world_map is not None:
                layer = _label_layer(world_map, pose @ lidar_ext, bev_range, n_points)
                rel = f"maps/labels/{s_tok}.json"
                save_layer(layer, root / rel)
                labels[s_tok] = rel
        _link(samples)
        tables["sample"] = samples
        for ch in sensors:
            _link(chains[ch])
            tables["sample_data"].extend(chains[ch])
        tables["scene"].append({
            "token": scene_token, "log_token": log_token, "nbr_samples": len(samples),
            "first_sample_token": samples[0]["token"], "last_sample_token": samples[-1]["token"],
            "name": scene_name, "description": f"rendered for rig {rig.rig_name}",
        })

    masks = {}
    if masks_dir is not None:
        for cam in rig.cameras:
            src = Path(masks_dir) / f"{cam.name}.png"
            if src.is_file():
                rel = f"masks/{cam.name}.png"
                (root / rel).parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, root / rel)
                masks[cam.name] = rel

    for name, rows in tables.items():
        with open(vdir / f"{name}.json", "w") as f:
            json.dump(rows, f, indent=1)
    meta = {
        "version": version,
        "rig": rig_to_dict(rig),
        "bev_range": bev_range.to_dict(),
        "n_points": n_points,
        "map_center_frame": LIDAR_CHANNEL,
        "label_axes": "x right, y forward (virtual LiDAR frame)",
        "vehicle_axes": "x forward, y left, z up",
        "timestamp_unit": "microseconds since scene start",
        "labels": labels,
        "masks": masks,
    }
    with open(vdir / META_NAME, "w") as f:
        json.dump(meta, f, indent=1)
    return DatasetManifest(version, root, tables, labels)


# -- validation ----------------------------------------------------------------

def _violation(kind, table, token, message) -> dict:
    return {"kind": kind, "table": table, "token": token, "message": message}


def load_dataset(dataset_dir: str | Path) -> tuple[Path, dict, dict]:
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DatasetReadError(f"not a directory: {root}")
    vdirs = sorted(p for p in root.glob("v1.0-*") if p.is_dir())
    if len(vdirs) != 1:
        raise DatasetReadError(f"expected exactly one v1.0-* directory in {root}, found {len(vdirs)}")
    tables = {}
    try:
        for name in TABLES + OPTIONAL_TABLES:
            p = vdirs[0] / f"{name}.json"
            if p.is_file():
                with open(p) as f:
                    tables[name] = json.load(f)
            elif name in TABLES:
                raise DatasetReadError(f"missing table {p}")
        meta_path = vdirs[0] / META_NAME
        meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetReadError(str(e)) from e
    return vdirs[0], tables, meta


def _walk(rows: list[dict], first: str, index: dict[str, dict], known: set[str]):
    """Follow next-links from ``first``; returns (ordered tokens, error or None)."""
    seen, order, prev = set(), [], ""
    tok = first
    while tok:
        if tok not in index:
            if tok in known:
                return order, f"link leaves the chain at {tok}"
            return order, None  # dangling; reported elsewhere
        if tok in seen:
            return order, f"cycle at {tok}"
        row = index[tok]
        if row.get("prev", "") != prev:
            return order, f"{tok}.prev is {row.get('prev')!r}, expected {prev!r}"
        seen.add(tok)
        order.append(tok)
        prev, tok = tok, row.get("next", "")
    if len(order) != len(rows):
        return order, f"chain reaches {len(order)} of {len(rows)} records"
    return order, None


def validate(dataset_dir: str | Path) -> list[dict]:
    """Structural checks; returns a list of violations (empty means valid)."""
    root = Path(dataset_dir)
    _, tables, meta = load_dataset(root)
    out: list[dict] = []

    index: dict[str, dict[str, dict]] = {}
    seen_tokens: dict[str, str] = {}
    for name, rows in tables.items():
        index[name] = {}
        for r in rows:
            tok = r.get("token", "")
            if not (isinstance(tok, str) and len(tok) == 32 and all(c in "0123456789abcdef" for c in tok)):
                out.append(_violation("bad-token", name, tok, "token is not 32 lowercase hex chars"))
            if tok in seen_tokens:
                out.append(_violation("duplicate-token", name, tok, f"token also used in {seen_tokens[tok]}"))
            seen_tokens[tok] = name
            index[name][tok] = r

    refs = {
        "scene": [("log_token", "log", False), ("first_sample_token", "sample", False),
                  ("last_sample_token", "sample", False)],
        "sample": [("scene_token", "scene", False), ("prev", "sample", True), ("next", "sample", True)],
        "sample_data": [("sample_token", "sample", False), ("ego_pose_token", "ego_pose", False),
                        ("calibrated_sensor_token", "calibrated_sensor", False),
                        ("prev", "sample_data", True), ("next", "sample_data", True)],
        "calibrated_sensor": [("sensor_token", "sensor", False)],
    }
    for name, fields in refs.items():
        for r in tables.get(name, []):
            for key, target, optional in fields:
                val = r.get(key, "")
                if optional and val == "":
                    continue
                if val not in index.get(target, {}):
                    out.append(_violation("dangling-token", name, r.get("token"),
                                          f"{key}={val!r} does not resolve in {target}"))

    # sample chains per scene, sample_data chains per (scene, channel)
    sensor_of_calib = {c["token"]: c.get("sensor_token") for c in tables.get("calibrated_sensor", [])}
    channel_of_sensor = {s["token"]: s.get("channel") for s in tables.get("sensor", [])}
    for sc in tables.get("scene", []):
        rows = [s for s in tables.get("sample", []) if s.get("scene_token") == sc["token"]]
        order, err = _walk(rows, sc.get("first_sample_token", ""), {r["token"]: r for r in rows},
                           set(index.get("sample", {})))
        if err is None and rows and order and order[-1] != sc.get("last_sample_token"):
            err = "last_sample_token is not the chain tail"
        if err is None and sc.get("nbr_samples") != len(rows):
            err = f"nbr_samples={sc.get('nbr_samples')} but {len(rows)} samples"
        if err:
            out.append(_violation("broken-link", "sample", sc["token"], f"scene {sc.get('name')!r}: {err}"))
        sample_ids = {r["token"] for r in rows}
        by_channel: dict[str, list] = {}
        for sd in tables.get("sample_data", []):
            if sd.get("sample_token") in sample_ids:
                ch = channel_of_sensor.get(sensor_of_calib.get(sd.get("calibrated_sensor_token")))
                by_channel.setdefault(ch, []).append(sd)
        for ch, sds in by_channel.items():
            heads = [d for d in sds if d.get("prev", "") == ""]
            if len(heads) != 1:
                out.append(_violation("broken-link", "sample_data", sc["token"],
                                      f"scene {sc.get('name')!r} channel {ch}: {len(heads)} chain heads"))
                continue
            _, err = _walk(sds, heads[0]["token"], {d["token"]: d for d in sds},
                           set(index.get("sample_data", {})))
            if err:
                out.append(_violation("broken-link", "sample_data", sc["token"],
                                      f"scene {sc.get('name')!r} channel {ch}: {err}"))

    for sd in tables.get("sample_data", []):
        if not (root / sd.get("filename", "")).is_file():
            out.append(_violation("missing-file", "sample_data", sd.get("token"),
                                  f"file {sd.get('filename')!r} not found"))
    for s_tok, rel in meta.get("labels", {}).items():
        if not (root / rel).is_file():
            out.append(_violation("missing-file", "sample", s_tok, f"map label file {rel!r} not found"))

    out.extend(_check_sensors(tables, meta, sensor_of_calib, channel_of_sensor))
    return out


def _check_sensors(tables, meta, sensor_of_calib, channel_of_sensor) -> list[dict]:
    out = []
    lidar = [s for s in tables.get("sensor", []) if s.get("channel") == LIDAR_CHANNEL]
    if len(lidar) != 1:
        out.append(_violation("virtual-lidar", "sensor", "", f"expected one {LIDAR_CHANNEL}, found {len(lidar)}"))
    rig = None
    if meta.get("rig"):
        try:
            rig = rig_from_dict(meta["rig"])
        except (KeyError, ValueError) as e:
            out.append(_violation("calibration-mismatch", "calibrated_sensor", "", f"unreadable rig: {e}"))
    if rig is not None:
        calib_by_channel = {channel_of_sensor.get(sensor_of_calib.get(c["token"])): c
                            for c in tables.get("calibrated_sensor", [])}
        for cam in rig.cameras:
            c = calib_by_channel.get(cam.name)
            if c is None:
                out.append(_violation("calibration-mismatch", "calibrated_sensor", "",
                                      f"no calibration for rig camera {cam.name}"))
                continue
            ok = (np.allclose(c["translation"], cam.extrinsic.translation, atol=1e-9)
                  and np.allclose(quat_to_matrix(c["rotation"]), cam.extrinsic.rotation_matrix(), atol=1e-9)
                  and np.allclose(c["camera_intrinsic"], cam.intrinsics.matrix(), atol=1e-9))
            if not ok:
                out.append(_violation("calibration-mismatch", "calibrated_sensor", c["token"],
                                      f"{cam.name} calibration differs from the declared rig"))
        n_cam = rig.n_cameras
        counts: dict[str, list[int]] = {}
        for sd in tables.get("sample_data", []):
            ch = channel_of_sensor.get(sensor_of_calib.get(sd.get("calibrated_sensor_token")))
            slot = counts.setdefault(sd.get("sample_token"), [0, 0])
            slot[1 if ch == LIDAR_CHANNEL else 0] += 1
        for s in tables.get("sample", []):
            n = counts.get(s["token"], [0, 0])
            if n != [n_cam, 1]:
                out.append(_violation("sample-sensors", "sample", s["token"],
                                      f"{n[0]} camera / {n[1]} lidar records, expected {n_cam} / 1"))
    return out


def load_ground_truth(dataset_dir: str | Path) -> dict[str, MapLayer]:
    """Map labels of a packaged dataset keyed by sample token."""
    root = Path(dataset_dir)
    _, tables, meta = load_dataset(root)
    out = {}
    try:
        for s in tables.get("sample", []):
            rel = meta.get("labels", {}).get(s["token"])
            out[s["token"]] = load_layer(root / rel) if rel else MapLayer((), "ego")
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetReadError(str(e)) from e
    return out
