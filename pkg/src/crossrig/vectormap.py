"""Vector map elements: frame changes, BEV clipping and arc-length resampling.

Ego frames are x forward, y left, z up.  Closed elements (crossings,
boundary rings) store each vertex once and carry ``is_closed``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Pose

DEFAULT_N_POINTS = 20


class MapClass(str, enum.Enum):
    DIVIDER = "divider"
    CROSSING = "crossing"
    BOUNDARY = "boundary"
    CENTERLINE = "centerline"


MAP_CLASSES = tuple(MapClass)


class DegenerateElementError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MapElement:
    points: np.ndarray  # (N, 2) metres
    cls: MapClass
    is_closed: bool = False
    frame: str = "ego"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("a map element needs at least 2 points")
        if not np.isfinite(pts).all():
            raise ValueError("map element has non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cls", MapClass(self.cls))
        if self.frame not in ("ego", "world"):
            raise ValueError(f"frame must be 'ego' or 'world', got {self.frame!r}")

    def with_points(self, points, frame: str | None = None) -> "MapElement":
        return replace(self, points=points, frame=frame or self.frame)


@dataclass(frozen=True)
class BevRange:
    x_min: float = -15.0
    x_max: float = 15.0
    y_min: float = -30.0
    y_max: float = 30.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"empty BEV range {self}")

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts)
        return ((pts[..., 0] >= self.x_min - tol) & (pts[..., 0] <= self.x_max + tol)
                & (pts[..., 1] >= self.y_min - tol) & (pts[..., 1] <= self.y_max + tol))

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, d: dict) -> "BevRange":
        return cls(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]), float(d["y_max"]))


@dataclass(frozen=True, eq=False)
class MapLayer:
    elements: tuple[MapElement, ...] = ()
    frame: str = "ego"
    bev_range: BevRange | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        bad = [i for i, e in enumerate(self.elements) if e.frame != self.frame]
        if bad:
            raise ValueError(f"elements {bad} are not in the layer frame {self.frame!r}")

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def by_class(self, cls: MapClass) -> list[MapElement]:
        return [e for e in self.elements if e.cls == cls]


def _transform_layer(layer: MapLayer, pose: Pose, frame: str) -> MapLayer:
    out = []
    for e in layer.elements:
        p3 = np.column_stack([e.points, np.zeros(len(e.points))])
        out.append(e.with_points(pose.apply(p3)[:, :2], frame))
    return MapLayer(tuple(out), frame, layer.bev_range, dict(layer.meta))


def world_to_ego(layer: MapLayer, ego_pose: Pose) -> MapLayer:
    """Express a world-frame layer in the frame whose world pose is ``ego_pose``."""
    if layer.frame != "world":
        raise ValueError(f"expected a world-frame layer, got {layer.frame!r}")
    return _transform_layer(layer, ego_pose.inverse(), "ego")


def ego_to_world(layer: MapLayer, ego_pose: Pose) -> MapLayer:
    if layer.frame != "ego":
        raise ValueError(f"expected an ego-frame layer, got {layer.frame!r}")
    return _transform_layer(layer, ego_pose, "world")


# -- clipping ----------------------------------------------------------------

def _clip_segment(a, b, r: BevRange):
    """Liang-Barsky; returns ``(t0, t1)`` of the visible part or None."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], a[0] - r.x_min), (d[0], r.x_max - a[0]),
                 (-d[1], a[1] - r.y_min), (d[1], r.y_max - a[1])):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        t = q / p
        if p < 0.0:
            if t > t1:
                return None
            t0 = max(t0, t)
        else:
            if t < t0:
                return None
            t1 = min(t1, t)
    return t0, t1


def _snap(pts, r: BevRange) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    pts[:, 0] = np.clip(pts[:, 0], r.x_min, r.x_max)
    pts[:, 1] = np.clip(pts[:, 1], r.y_min, r.y_max)
    return pts


def _dedupe(pts: np.ndarray) -> np.ndarray:
    if len(pts) < 2:
        return pts
    keep = np.ones(len(pts), bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    return pts[keep]


def clip_polyline(points: np.ndarray, r: BevRange) -> list[np.ndarray]:
    """Clip an open polyline; each maximal inside run becomes its own chain."""
    chains, cur = [], None
    for a, b in zip(points[:-1], points[1:]):
        res = _clip_segment(a, b, r)
        if res is None:
            if cur is not None:
                chains.append(cur)
                cur = None
            continue
        t0, t1 = res
        p = a + t0 * (b - a) if t0 > 0.0 else a
        q = b if t1 >= 1.0 else a + t1 * (b - a)
        if cur is None or t0 > 0.0:
            if cur is not None:
                chains.append(cur)
            cur = [p]
        cur.append(q)
        if t1 < 1.0:
            chains.append(cur)
            cur = None
    if cur is not None:
        chains.append(cur)
    out = []
    for c in chains:
        pts = _dedupe(_snap(np.array(c), r))
        if len(pts) >= 2:
            out.append(pts)
    return out


def clip_polygon(points: np.ndarray, r: BevRange) -> np.ndarray:
    """Sutherland-Hodgman against the range rectangle (open vertex ring)."""
    poly = [np.asarray(p, dtype=float) for p in points]
    edges = (
        (lambda p: p[0] >= r.x_min, 0, r.x_min),
        (lambda p: p[0] <= r.x_max, 0, r.x_max),
        (lambda p: p[1] >= r.y_min, 1, r.y_min),
        (lambda p: p[1] <= r.y_max, 1, r.y_max),
    )
    for inside, axis, value in edges:
        if not poly:
            break
        src, poly = poly, []
        prev = src[-1]
        for cur in src:
            if inside(cur):
                if not inside(prev):
                    poly.append(_intersect(prev, cur, axis, value))
                poly.append(cur)
            elif inside(prev):
                poly.append(_intersect(prev, cur, axis, value))
            prev = cur
    if not poly:
        return np.zeros((0, 2))
    pts = _dedupe(_snap(np.array(poly), r))
    if len(pts) > 1 and np.all(pts[0] == pts[-1]):
        pts = pts[:-1]
    return pts


def _intersect(a, b, axis, value):
    t = (value - a[axis]) / (b[axis] - a[axis])
    p = a + t * (b - a)
    p[axis] = value
    return p


def clip_to_range(layer: MapLayer, bev_range: BevRange) -> MapLayer:
    if layer.frame != "ego":
        raise ValueError("clip_to_range expects an ego-frame layer")
    out = []
    for e in layer.elements:
        if e.is_closed:
            pts = clip_polygon(e.points, bev_range)
            if len(pts) >= 2:
                out.append(e.with_points(pts))
        else:
            out.extend(e.with_points(c) for c in clip_polyline(e.points, bev_range))
    return MapLayer(tuple(out), "ego", bev_range, dict(layer.meta))


# -- resampling ----------------------------------------------------------------

def resample(element: MapElement, n_p: int = DEFAULT_N_POINTS) -> MapElement:
    """``n_p`` points evenly spaced in arc length.

    Open elements keep both endpoints; closed ones start at the first vertex
    and stop one step short of it.
    """
    if n_p < 2:
        raise ValueError(f"n_p must be >= 2, got {n_p}")
    pts = element.points
    if element.is_closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    pts, seg = pts[keep], seg[seg > 0]
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total < 1e-9:
        raise DegenerateElementError(f"element arc length {total:.3g} m is degenerate")
    if element.is_closed:
        targets = np.arange(n_p) * (total / n_p)
    else:
        targets = np.linspace(0.0, total, n_p)
    out = np.column_stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])])
    out[0] = pts[0]
    if not element.is_closed:
        out[-1] = pts[-1]
    return element.with_points(out)


def resample_layer(layer: MapLayer, n_p: int = DEFAULT_N_POINTS) -> MapLayer:
    return MapLayer(tuple(resample(e, n_p) for e in layer.elements), layer.frame,
                    layer.bev_range, dict(layer.meta))


def arc_length(points: np.ndarray, closed: bool = False) -> float:
    pts = np.vstack([points, points[:1]]) if closed else np.asarray(points)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


# -- files ---------------------------------------------------------------------

def layer_to_dict(layer: MapLayer) -> dict:
    d = {
        "frame": layer.frame,
        "elements": [
            {"class": e.cls.value, "is_closed": bool(e.is_closed), "points": e.points.tolist()}
            for e in layer.elements
        ],
    }
    if layer.bev_range is not None:
        d["range"] = layer.bev_range.to_dict()
    if layer.meta:
        d["meta"] = layer.meta
    return d


def layer_from_dict(d: dict) -> MapLayer:
    frame = d.get("frame", "ego")
    els = [MapElement(e["points"], MapClass(e["class"]), bool(e.get("is_closed", False)), frame)
           for e in d.get("elements", [])]
    rng = BevRange.from_dict(d["range"]) if d.get("range") else None
    return MapLayer(tuple(els), frame, rng, dict(d.get("meta", {})))


def load_layer(path: str | Path) -> MapLayer:
    with open(path) as f:
        return layer_from_dict(json.load(f))


def save_layer(layer: MapLayer, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(layer_to_dict(layer), f)

