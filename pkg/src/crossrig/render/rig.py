"""Render a scene along a trajectory through every camera of a target rig."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from PIL import Image

from ..geometry import CameraIntrinsics, Pose, RigConfig, RigOffset, target_camera_pose, target_vehicle_pose
from ..scene import Scene, flatten_at
from .projection import RenderCamera
from .raster import Framebuffer, render

MANIFEST_NAME = "manifest.jsonl"


def intrinsics_to_dict(k: CameraIntrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height}


def intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


def save_png(fb: Framebuffer, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(fb.to_uint8(), mode="RGB").save(path, optimize=False)


def retarget_poses(source_vehicle_poses: Sequence[tuple[float, Pose]], offset: RigOffset,
                   target_rig: RigConfig) -> list[dict]:
    """One row per (timestamp, camera) with the target vehicle and camera poses."""
    rows = []
    for frame, (t, src) in enumerate(source_vehicle_poses):
        vehicle = target_vehicle_pose(src, offset)
        for cam in target_rig.cameras:
            rows.append({
                "t": float(t),
                "frame": frame,
                "camera": cam.name,
                "vehicle_pose": vehicle.to_dict(),
                "camera_pose": target_camera_pose(vehicle, cam).to_dict(),
                "intrinsics": intrinsics_to_dict(cam.intrinsics),
            })
    return rows


def render_rig(scene: Scene, source_vehicle_poses: Sequence[tuple[float, Pose]], offset: RigOffset,
               target_rig: RigConfig, out_dir: str | Path, *, near: float = 0.2, far: float = 1000.0,
               threads: int | None = None, backend: str | None = None) -> list[dict]:
    """Render every target camera at every timestamp.

    Images go to ``out_dir/images/<camera>/<frame>.png``; the returned rows
    (also written to ``out_dir/manifest.jsonl``) carry the image path
    relative to ``out_dir``.
    """
    out_dir = Path(out_dir)
    rows = retarget_poses(source_vehicle_poses, offset, target_rig)
    cam_index = {c.name: i for i, c in enumerate(target_rig.cameras)}
    cloud_frame, cloud = None, None
    for row in rows:
        frame = row["frame"]
        if frame != cloud_frame:
            cloud_frame, cloud = frame, flatten_at(scene, row["t"])
        cam = RenderCamera(Pose.from_dict(row["camera_pose"]), intrinsics_from_dict(row["intrinsics"]),
                           near, far)
        fb = render(cloud, cam, scene.sky, threads=threads, backend=backend)
        rel = Path("images") / row["camera"] / f"{frame:06d}.png"
        save_png(fb, out_dir / rel)
        row["image"] = rel.as_posix()
    rows.sort(key=lambda r: (r["t"], cam_index[r["camera"]]))
    write_manifest(rows, out_dir / MANIFEST_NAME)
    return rows


def write_manifest(rows: Sequence[dict], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
