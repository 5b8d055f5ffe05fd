"""Tile-based front-to-back rasterizer.

Splats are binned into 16x16 tiles, ordered by depth inside each tile and
composited per pixel by the compiled kernel when it is available, or by the
numpy kernel otherwise.  Tiles are independent, so the image does not
depend on the thread count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..scene import SkyModel
from . import _backend
from .projection import ProjectedSplats, RenderCamera, project_gaussians, tile_grid

TILE = 16


@dataclass(frozen=True, eq=False)
class Framebuffer:
    width: int
    height: int
    rgb: np.ndarray    # (H, W, 3) linear [0, 1]
    alpha: np.ndarray  # (H, W)

    def to_uint8(self) -> np.ndarray:
        """8-bit gamma-2.2 encoding, round half up."""
        v = np.clip(self.rgb.astype(np.float64), 0.0, 1.0) ** (1.0 / 2.2)
        return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("CROSSRIG_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def bin_splats(splats: ProjectedSplats, width: int, height: int, tile: int = TILE):
    """CSR tile lists: ``ids[offsets[t]:offsets[t+1]]`` are splat rows of tile
    ``t`` in ascending depth order."""
    tx_n, ty_n = tile_grid(width, height, tile)
    n_tiles = tx_n * ty_n
    if not len(splats):
        return np.zeros(n_tiles + 1, np.int64), np.zeros(0, np.int64)
    rank = np.empty(len(splats), np.int64)
    rank[splats.depth_order()] = np.arange(len(splats))

    # pixel-centre range each footprint touches
    lo = np.ceil(splats.mean2d - splats.extent)
    hi = np.floor(splats.mean2d + splats.extent)
    x0 = np.clip(lo[:, 0], 0, width - 1).astype(np.int64) // tile
    x1 = np.clip(hi[:, 0], 0, width - 1).astype(np.int64) // tile
    y0 = np.clip(lo[:, 1], 0, height - 1).astype(np.int64) // tile
    y1 = np.clip(hi[:, 1], 0, height - 1).astype(np.int64) // tile
    empty = (lo[:, 0] > hi[:, 0]) | (lo[:, 1] > hi[:, 1]) | (hi[:, 0] < 0) | (hi[:, 1] < 0) \
        | (lo[:, 0] > width - 1) | (lo[:, 1] > height - 1)
    nx = np.where(empty, 0, x1 - x0 + 1)
    ny = np.where(empty, 0, y1 - y0 + 1)
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(splats)), counts)
    start = np.cumsum(counts) - counts
    local = np.arange(total) - np.repeat(start, counts)
    tx = x0[owner] + local % np.maximum(nx[owner], 1)
    ty = y0[owner] + local // np.maximum(nx[owner], 1)
    tile_id = ty * tx_n + tx
    order = np.lexsort((rank[owner], tile_id))
    ids = owner[order].astype(np.int64)
    offsets = np.zeros(n_tiles + 1, np.int64)
    np.cumsum(np.bincount(tile_id, minlength=n_tiles), out=offsets[1:])
    return offsets, ids


def render(gaussians, cam: RenderCamera, sky: SkyModel | None = None, *,
           threads: int | None = None, backend: str | None = None) -> Framebuffer:
    """Render world-space Gaussians from ``cam`` over a constant sky."""
    sky = sky or SkyModel()
    splats = project_gaussians(gaussians, cam)
    w, h = cam.width, cam.height
    offsets, ids = bin_splats(splats, w, h)
    kernel = _backend.get_kernel(backend)
    rgb, alpha = kernel(
        splats.mean2d, splats.conic, splats.opacity, splats.rgb,
        offsets, ids, w, h, TILE, np.asarray(sky.color, dtype=np.float64),
        resolve_threads(threads),
    )
    return Framebuffer(w, h, rgb, alpha)
