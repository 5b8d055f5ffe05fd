"""Rigid poses, pinhole cameras, rig configurations and the retargeting chain.

Quaternions are stored as ``(w, x, y, z)`` with ``w >= 0``.  A :class:`Pose`
maps points from its child frame into its parent frame, so
``compose(a, b)`` is the matrix product ``T_a @ T_b`` (apply ``b`` first).

Camera frames use the computer-vision convention: +x right, +y down,
+z forward.  Vehicle frames are x forward, y left, z up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Pose",
    "CameraIntrinsics",
    "CameraDef",
    "RigConfig",
    "RigOffset",
    "PointBehindCameraError",
    "quat_normalize",
    "quat_multiply",
    "quat_to_matrix",
    "quat_from_matrix",
    "quat_slerp",
    "pose_compose",
    "pose_inverse",
    "target_vehicle_pose",
    "target_camera_pose",
    "project_point",
    "load_rig",
    "save_rig",
    "rig_to_dict",
    "rig_from_dict",
    "AV2_TO_NUSC_OFFSET",
]


class PointBehindCameraError(ValueError):
    pass


def quat_normalize(q: Sequence[float]) -> tuple[float, float, float, float]:
    """Unit quaternion with canonical sign ``w >= 0``."""
    w, x, y, z = (float(v) for v in q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if not math.isfinite(n) or n < 1e-12:
        raise ValueError(f"cannot normalize quaternion {tuple(q)!r}")
    w, x, y, z = w / n, x / n, y / n, z / n
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    return (w, x, y, z)


def quat_multiply(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, float, float]:
    """Hamilton product ``a * b`` (no normalization)."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return (
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> tuple[float, float, float, float]:
    """Rotation matrix to quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    return quat_normalize(q)


def quat_slerp(a: Sequence[float], b: Sequence[float], u: float) -> tuple[float, float, float, float]:
    """Spherical interpolation along the shorter arc, ``u`` in [0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = float(a @ b)
    if d < 0.0:
        b, d = -b, -d
    if d > 0.9995:
        q = a + u * (b - a)
    else:
        theta = math.acos(min(d, 1.0))
        s = math.sin(theta)
        q = (math.sin((1 - u) * theta) / s) * a + (math.sin(u * theta) / s) * b
    return quat_normalize(q)


@dataclass(frozen=True)
class Pose:
    """Rigid transform child -> parent, as unit quaternion plus translation."""

    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(v) for v in self.translation)
        if len(t) != 3 or not all(math.isfinite(v) for v in t):
            raise ValueError(f"translation must be 3 finite values, got {self.translation!r}")
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(quat_from_matrix(m[:3, :3]), tuple(m[:3, 3]))

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        """Rotation about +z by ``yaw`` radians."""
        return cls((math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)), tuple(translation))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float,
                        translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        ax = np.asarray(axis, dtype=float)
        ax = ax / np.linalg.norm(ax)
        s = math.sin(angle / 2)
        return cls((math.cos(angle / 2), ax[0] * s, ax[1] * s, ax[2] * s), tuple(translation))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Map child-frame points (``(..., 3)``) into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation_matrix().T + np.asarray(self.translation)

    def compose(self, other: "Pose") -> "Pose":
        return pose_compose(self, other)

    def inverse(self) -> "Pose":
        return pose_inverse(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return pose_compose(self, other)

    def angle_to(self, other: "Pose") -> float:
        """Rotation angle (radians) of ``self^-1 * other``."""
        d = abs(sum(a * b for a, b in zip(self.rotation, other.rotation)))
        return 2.0 * math.acos(min(1.0, d))

    def distance_to(self, other: "Pose") -> float:
        return math.dist(self.translation, other.translation)

    def to_dict(self) -> dict:
        return {"rotation_wxyz": list(self.rotation), "translation_xyz_m": list(self.translation)}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(tuple(d.get("rotation_wxyz", (1.0, 0.0, 0.0, 0.0))),
                   tuple(d.get("translation_xyz_m", (0.0, 0.0, 0.0))))


def pose_compose(a: Pose, b: Pose) -> Pose:
    """``a * b``: apply ``b`` then ``a``."""
    t = a.rotation_matrix() @ np.asarray(b.translation) + np.asarray(a.translation)
    return Pose(quat_multiply(a.rotation, b.rotation), tuple(t))


def pose_inverse(p: Pose) -> Pose:
    w, x, y, z = p.rotation
    r_t = p.rotation_matrix().T
    return Pose((w, -x, -y, -z), tuple(-(r_t @ np.asarray(p.translation))))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (int(self.width) == self.width and int(self.height) == self.height):
            raise ValueError("width and height must be integers")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Same field of view at a different resolution."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)


@dataclass(frozen=True)
class CameraDef:
    name: str
    intrinsics: CameraIntrinsics
    extrinsic: Pose  # camera -> vehicle


@dataclass(frozen=True)
class RigConfig:
    rig_name: str
    cameras: tuple[CameraDef, ...]
    frame_note: str = ""
    # virtual LiDAR -> vehicle; only used to anchor the map centre when packaging
    lidar_extrinsic: Pose | None = None

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.cameras:
            raise ValueError("a rig needs at least one camera")
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise ValueError(f"camera names must be unique, got {names}")

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)

    def camera(self, name: str) -> CameraDef:
        for c in self.cameras:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class RigOffset:
    """Target-vehicle -> source-vehicle transform."""

    transform: Pose = field(default_factory=Pose)


# AV2 places the vehicle origin on the rear axle ~33 cm above the ground,
# nuScenes on the ground: a target (nuScenes) origin sits 0.33 m below.
AV2_TO_NUSC_OFFSET = RigOffset(Pose(translation=(0.0, 0.0, -0.33)))


def target_vehicle_pose(source_vehicle: Pose, offset: RigOffset) -> Pose:
    """World pose of the target vehicle given the source vehicle pose."""
    return pose_compose(source_vehicle, offset.transform)


def target_camera_pose(target_vehicle: Pose, camera: CameraDef) -> Pose:
    """Camera-to-world pose of one target camera."""
    return pose_compose(target_vehicle, camera.extrinsic)


def project_point(p_cam: Sequence[float], k: CameraIntrinsics) -> tuple[float, float]:
    x, y, z = (float(v) for v in p_cam)
    if z <= 1e-6:
        raise PointBehindCameraError(f"point {tuple(p_cam)!r} is behind the camera")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy)


# -- rig configuration files -------------------------------------------------

# Rotation taking computer-vision camera axes into the declared camera axes;
# the stored extrinsic is right-multiplied by it on load.
CAMERA_AXES = {
    "opencv": np.eye(3),
    # x right, y up, z backward
    "opengl": np.diag([1.0, -1.0, -1.0]),
    # x forward, y left, z up
    "flu": np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
}


def rig_from_dict(d: dict) -> RigConfig:
    axes = d.get("camera_axes", "opencv")
    if axes not in CAMERA_AXES:
        raise ValueError(f"unknown camera_axes {axes!r}; expected one of {sorted(CAMERA_AXES)}")
    vehicle_axes = d.get("vehicle_axes", "flu")
    if vehicle_axes != "flu":
        raise ValueError(f"unsupported vehicle_axes {vehicle_axes!r}; only 'flu' is supported")
    to_cv = CAMERA_AXES[axes]
    cams = []
    for c in d["cameras"]:
        k = CameraIntrinsics(c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"])
        r = quat_to_matrix(quat_normalize(c["rotation_wxyz"])) @ to_cv
        cams.append(CameraDef(c["name"], k, Pose(quat_from_matrix(r), tuple(c["translation_xyz_m"]))))
    lidar = Pose.from_dict(d["lidar"]) if d.get("lidar") else None
    return RigConfig(d["rig_name"], tuple(cams), d.get("frame_note", ""), lidar)


def rig_to_dict(rig: RigConfig) -> dict:
    d = {
        "rig_name": rig.rig_name,
        "frame_note": rig.frame_note,
        "camera_axes": "opencv",
        "vehicle_axes": "flu",
        "cameras": [
            {
                "name": c.name,
                "width": c.intrinsics.width,
                "height": c.intrinsics.height,
                "fx": c.intrinsics.fx,
                "fy": c.intrinsics.fy,
                "cx": c.intrinsics.cx,
                "cy": c.intrinsics.cy,
                "rotation_wxyz": list(c.extrinsic.rotation),
                "translation_xyz_m": list(c.extrinsic.translation),
            }
            for c in rig.cameras
        ],
    }
    if rig.lidar_extrinsic is not None:
        d["lidar"] = rig.lidar_extrinsic.to_dict()
    return d


def load_rig(path: str | Path) -> RigConfig:
    with open(path) as f:
        return rig_from_dict(json.load(f))


def save_rig(rig: RigConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(rig_to_dict(rig), f, indent=2)

