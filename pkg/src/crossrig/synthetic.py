"""Procedural driving scene, rigs and map used by the demo and the tests."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .config import save_trajectory
from .gaussians import GaussianCloud, rgb_to_sh_dc
from .geometry import (
    AV2_TO_NUSC_OFFSET,
    CAMERA_AXES,
    CameraDef,
    CameraIntrinsics,
    Pose,
    RigConfig,
    quat_from_matrix,
    save_rig,
)
from .ply import write_ply
from .scene import DynamicObject, Keyframe, Scene, SkyModel, Track, tracks_to_json
from .vectormap import MapClass, MapElement, MapLayer, save_layer

AV2_ORIGIN_HEIGHT = 0.33
LANE = 3.5


def _rz(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def camera_at(name: str, yaw_deg: float, xyz, width: int, height: int, hfov_deg: float) -> CameraDef:
    """Level pinhole camera looking along vehicle yaw ``yaw_deg`` (0 = forward)."""
    f = 0.5 * width / math.tan(math.radians(hfov_deg) / 2)
    r = _rz(math.radians(yaw_deg)) @ CAMERA_AXES["flu"]
    k = CameraIntrinsics(f, f, width / 2, height / 2, width, height)
    return CameraDef(name, k, Pose(quat_from_matrix(r), tuple(xyz)))


def av2_like_rig(width: int = 96, height: int = 64) -> RigConfig:
    """Seven ring cameras near the roof centre; origin 0.33 m above ground."""
    z = 1.7 - AV2_ORIGIN_HEIGHT
    specs = [("ring_front_center", 0), ("ring_front_left", 45), ("ring_front_right", -45),
             ("ring_side_left", 100), ("ring_side_right", -100),
             ("ring_rear_left", 150), ("ring_rear_right", -150)]
    cams = [camera_at(n, yaw, (1.3, 0.0, z), width, height, 60.0) for n, yaw in specs]
    return RigConfig("av2_like", tuple(cams), "rear axle, 0.33 m above ground; x fwd, y left, z up")


def nusc_like_rig(width: int = 96, height: int = 54) -> RigConfig:
    """Six cameras along the roof edges; origin on the ground."""
    specs = [("CAM_FRONT", 0, (1.7, 0.0)), ("CAM_FRONT_RIGHT", -55, (1.55, -0.5)),
             ("CAM_FRONT_LEFT", 55, (1.5, 0.5)), ("CAM_BACK", 180, (0.0, 0.0)),
             ("CAM_BACK_LEFT", 110, (1.0, 0.5)), ("CAM_BACK_RIGHT", -110, (1.0, -0.5))]
    cams = []
    for n, yaw, (x, y) in specs:
        fov = 110.0 if n == "CAM_BACK" else 70.0
        cams.append(camera_at(n, yaw, (x, y, 1.5), width, height, fov))
    lidar = Pose.from_yaw(-math.pi / 2, (0.94, 0.0, 1.84))
    return RigConfig("nusc_like", tuple(cams), "rear axle on the ground; x fwd, y left, z up", lidar)


def ground_plane(nx: int = 100, ny: int = 50, x_range=(-15.0, 65.0), y_range=(-12.0, 12.0),
                 seed: int = 0) -> GaussianCloud:
    """Flat textured road: asphalt noise plus white lane markings."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    means = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    dx = (x_range[1] - x_range[0]) / (nx - 1)
    dy = (y_range[1] - y_range[0]) / (ny - 1)
    scales = np.tile([0.6 * dx, 0.6 * dy, 0.02], (len(means), 1))
    base = 0.3 + 0.08 * rng.standard_normal(len(means))
    rgb = np.column_stack([base, base, base * 1.05])
    y = means[:, 1]
    marking = (np.abs(np.abs(y) - 2 * LANE) < 0.3) | ((np.abs(y) < 0.3) & (np.floor(means[:, 0] / 3) % 2 == 0))
    rgb[marking] = 0.92
    grass = np.abs(y) > 2 * LANE + 0.5
    rgb[grass] = [0.25, 0.45, 0.2]
    rgb = np.clip(rgb, 0.0, 1.0)
    n = len(means)
    return GaussianCloud(means, scales, np.tile([1.0, 0, 0, 0], (n, 1)), np.full(n, 0.95),
                         rgb_to_sh_dc(rgb)[:, None, :])


def box_object(size=(4.5, 1.8, 1.5), color=(0.8, 0.1, 0.1), n: int = 240, seed: int = 0) -> GaussianCloud:
    """Gaussians filling a box centred on the object origin."""
    rng = np.random.default_rng(seed)
    half = np.asarray(size) / 2
    means = rng.uniform(-half, half, (n, 3))
    scales = np.full((n, 3), 0.25)
    rgb = np.clip(np.asarray(color) + 0.05 * rng.standard_normal((n, 3)), 0, 1)
    return GaussianCloud(means, scales, np.tile([1.0, 0, 0, 0], (n, 1)), np.full(n, 0.9),
                         rgb_to_sh_dc(rgb)[:, None, :])


def moving_track(track_id: str, start, velocity, t_end: float, size=(4.5, 1.8, 1.5),
                 yaw: float = 0.0, dt: float = 0.5) -> Track:
    ts = np.arange(0.0, t_end + 1e-9, dt)
    kfs = [Keyframe(float(t), Pose.from_yaw(yaw, np.asarray(start) + t * np.asarray(velocity)), tuple(size))
           for t in ts]
    return Track(track_id, tuple(kfs))


def synthetic_scene(n_frames: int = 10, hz: float = 2.0, seed: int = 0) -> Scene:
    t_end = (n_frames - 1) / hz + 0.5
    bg = ground_plane(seed=seed)
    objs = (
        DynamicObject(moving_track("car_0", (12.0, LANE / 2, 0.75), (4.0, 0.0, 0.0), t_end),
                      box_object(color=(0.8, 0.1, 0.1), seed=seed + 1)),
        DynamicObject(moving_track("car_1", (40.0, -LANE / 2, 0.75), (-6.0, 0.0, 0.0), t_end, yaw=math.pi),
                      box_object(color=(0.1, 0.2, 0.8), seed=seed + 2)),
    )
    return Scene(bg, objs, SkyModel(), "synthetic", "av2_like", n_frames)


def straight_road_map(x_range=(-20.0, 100.0)) -> MapLayer:
    """Two-lane straight road with a crosswalk, in world coordinates."""
    x0, x1 = x_range

    def line(y, cls):
        return MapElement([[x0, y], [x1, y]], cls, False, "world")

    els = [
        line(0.0, MapClass.DIVIDER),
        line(2 * LANE, MapClass.BOUNDARY),
        line(-2 * LANE, MapClass.BOUNDARY),
        MapElement([[x0, LANE / 2], [x1, LANE / 2]], MapClass.CENTERLINE, False, "world"),
        MapElement([[x1, -LANE / 2], [x0, -LANE / 2]], MapClass.CENTERLINE, False, "world"),
        MapElement([[20.0, -2 * LANE], [24.0, -2 * LANE], [24.0, 2 * LANE], [20.0, 2 * LANE]],
                   MapClass.CROSSING, True, "world"),
    ]
    return MapLayer(tuple(els), "world")


def source_trajectory(n_frames: int = 10, hz: float = 2.0, speed: float = 5.0) -> list[tuple[float, Pose]]:
    """Source vehicle driving straight along +x in the right lane."""
    return [(i / hz, Pose(translation=(speed * i / hz, -LANE / 2, AV2_ORIGIN_HEIGHT))) for i in range(n_frames)]


def ego_masks(rig: RigConfig) -> dict[str, np.ndarray]:
    """Static masks: the bottom eighth of rear-facing views shows the ego body."""
    out = {}
    for cam in rig.cameras:
        k = cam.intrinsics
        m = np.zeros((k.height, k.width), np.uint8)
        if "BACK" in cam.name:
            m[-max(1, k.height // 8):] = 255
        out[cam.name] = m
    return out


def write_workspace(root: str | Path, n_frames: int = 10, seed: int = 0,
                    target_size=(96, 54), source_size=(96, 64)) -> Path:
    """Write every input of the pipeline plus ``config.json``; returns its path."""
    root = Path(root)
    (root / "objects").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    scene = synthetic_scene(n_frames, seed=seed)
    write_ply(root / "background.ply", scene.background)
    for obj in scene.objects:
        write_ply(root / "objects" / f"{obj.track.track_id}.ply", obj.gaussians)
    with open(root / "tracks.json", "w") as f:
        json.dump(tracks_to_json([o.track for o in scene.objects]), f, indent=1)
    src, tgt = av2_like_rig(*source_size), nusc_like_rig(*target_size)
    save_rig(src, root / "source_rig.json")
    save_rig(tgt, root / "target_rig.json")
    save_trajectory(source_trajectory(n_frames), root / "trajectory.json")
    save_layer(straight_road_map(), root / "map.json")
    for name, m in ego_masks(tgt).items():
        Image.fromarray(m, mode="L").save(root / "masks" / f"{name}.png")
    config = {
        "paths": {
            "background": "background.ply", "tracks": "tracks.json", "objects": "objects",
            "source_rig": "source_rig.json", "target_rig": "target_rig.json",
            "trajectory": "trajectory.json", "map": "map.json", "masks": "masks", "output": "out",
        },
        "offset": AV2_TO_NUSC_OFFSET.transform.to_dict(),
        "seed": seed,
    }
    with open(root / "config.json", "w") as f:
        json.dump(config, f, indent=2)
    return root / "config.json"
