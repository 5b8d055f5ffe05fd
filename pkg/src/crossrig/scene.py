"""Reconstructed scene: static background, track-driven rigid objects, sky."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gaussians import GaussianCloud, InvariantError
from .geometry import Pose, quat_slerp
from .ply import ParseError, read_ply

TRACK_TOLERANCE_S = 0.1
MIN_OPACITY = 1.0 / 255.0
DEFAULT_SKY = (0.53, 0.81, 0.92)
BOX_DILATION = 1.5


class MissingObjectError(FileNotFoundError):
    pass


class TrackRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Keyframe:
    t: float
    box_pose: Pose  # object -> world
    box_size: tuple[float, float, float]  # l, w, h


@dataclass(frozen=True)
class Track:
    track_id: str
    keyframes: tuple[Keyframe, ...]

    def __post_init__(self):
        object.__setattr__(self, "keyframes", tuple(self.keyframes))
        if not self.keyframes:
            raise ValueError(f"track {self.track_id!r} has no keyframes")
        ts = [k.t for k in self.keyframes]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"track {self.track_id!r}: timestamps must be strictly increasing")

    @property
    def t_start(self) -> float:
        return self.keyframes[0].t

    @property
    def t_end(self) -> float:
        return self.keyframes[-1].t

    def covers(self, t: float, tol: float = TRACK_TOLERANCE_S) -> bool:
        return self.t_start - tol <= t <= self.t_end + tol


@dataclass(frozen=True, eq=False)
class DynamicObject:
    track: Track
    gaussians: GaussianCloud  # object-local frame

    def __post_init__(self):
        size = np.max([k.box_size for k in self.track.keyframes], axis=0)
        half = BOX_DILATION * size / 2.0
        outside = (np.abs(self.gaussians.means) > half).any(axis=1)
        if outside.any():
            raise InvariantError(
                f"object {self.track.track_id!r}: Gaussian mean outside the dilated box",
                int(np.argmax(outside)),
            )


@dataclass(frozen=True)
class SkyModel:
    color: tuple[float, float, float] = DEFAULT_SKY
    mode: str = "constant"

    def __post_init__(self):
        c = tuple(float(v) for v in self.color)
        if len(c) != 3 or not all(0.0 <= v <= 1.0 for v in c):
            raise ValueError(f"sky colour must be 3 values in [0, 1], got {self.color!r}")
        if self.mode != "constant":
            raise ValueError(f"unsupported sky mode {self.mode!r}")
        object.__setattr__(self, "color", c)


@dataclass(frozen=True, eq=False)
class Scene:
    background: GaussianCloud
    objects: tuple[DynamicObject, ...] = ()
    sky: SkyModel = field(default_factory=SkyModel)
    scene_id: str = "scene"
    source_rig: str = ""
    frame_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.track.track_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate track ids: {ids}")

    def flatten_at(self, t: float) -> GaussianCloud:
        return flatten_at(self, t)


def object_pose_at(track: Track, t: float, tol: float = TRACK_TOLERANCE_S) -> Pose:
    """Box pose at time ``t``: lerp on translation, slerp on rotation."""
    if not track.covers(t, tol):
        raise TrackRangeError(
            f"t={t} outside track {track.track_id!r} range [{track.t_start}, {track.t_end}] (+/-{tol}s)"
        )
    kfs = track.keyframes
    if t <= kfs[0].t:
        return kfs[0].box_pose
    if t >= kfs[-1].t:
        return kfs[-1].box_pose
    ts = [k.t for k in kfs]
    i = bisect.bisect_right(ts, t)
    a, b = kfs[i - 1], kfs[i]
    if t == a.t:
        return a.box_pose
    u = (t - a.t) / (b.t - a.t)
    ta, tb = np.asarray(a.box_pose.translation), np.asarray(b.box_pose.translation)
    return Pose(quat_slerp(a.box_pose.rotation, b.box_pose.rotation, u), tuple(ta + u * (tb - ta)))


def flatten_at(scene: Scene, t: float) -> GaussianCloud:
    """World-space Gaussians at time ``t``; objects off their track are left out."""
    parts = [scene.background]
    for obj in scene.objects:
        if obj.track.covers(t):
            parts.append(obj.gaussians.transformed(object_pose_at(obj.track, t)))
    return GaussianCloud.concat(parts)


def _drop_transparent(cloud: GaussianCloud) -> GaussianCloud:
    keep = cloud.opacities >= MIN_OPACITY
    return cloud if keep.all() else cloud[keep]


def parse_tracks(data: dict) -> list[Track]:
    if not isinstance(data, dict):
        raise ParseError("tracks file must be a JSON object {track_id: [keyframes]}")
    tracks = []
    for tid, kfs in data.items():
        try:
            keyframes = [
                Keyframe(
                    float(k["t"]),
                    Pose(tuple(k["rotation_wxyz"]), tuple(k["translation_xyz_m"])),
                    tuple(float(v) for v in k["size_lwh_m"]),
                )
                for k in kfs
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"track {tid!r}: bad keyframe ({e})") from e
        tracks.append(Track(str(tid), tuple(keyframes)))
    return tracks


def tracks_to_json(tracks: Sequence[Track]) -> dict:
    return {
        tr.track_id: [
            {"t": k.t, **k.box_pose.to_dict(), "size_lwh_m": list(k.box_size)}
            for k in tr.keyframes
        ]
        for tr in tracks
    }


def load_scene(background_path, tracks_path=None, objects_dir=None,
               sky_color: Sequence[float] = DEFAULT_SKY, scene_id: str | None = None,
               source_rig: str = "") -> Scene:
    """Load a reconstructed scene.

    ``objects_dir`` must hold ``<track_id>.ply`` for every track in the
    tracks file.  Gaussians below 1/255 opacity are dropped.
    """
    background = _drop_transparent(read_ply(background_path))
    objects = []
    if tracks_path is not None:
        try:
            with open(tracks_path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{tracks_path}: {e}") from e
        for track in parse_tracks(data):
            ply = Path(objects_dir or ".") / f"{track.track_id}.ply"
            if not ply.is_file():
                raise MissingObjectError(f"no Gaussian file for track {track.track_id!r}: {ply}")
            objects.append(DynamicObject(track, _drop_transparent(read_ply(ply))))
    frames = max((len(o.track.keyframes) for o in objects), default=0)
    return Scene(
        background,
        tuple(objects),
        SkyModel(tuple(sky_color)),
        scene_id or Path(background_path).stem,
        source_rig,
        frames,
    )
