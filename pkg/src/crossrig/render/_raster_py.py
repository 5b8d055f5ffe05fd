"""Numpy compositing kernel, used when the compiled extension is missing.

Same contract as ``_raster.rasterize_tiles``.  Each tile is evaluated as a
(splats x pixels) block; early termination is reproduced with a prefix
mask on the running transmittance.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4


def _tile(t, tiles_x, tile, width, height, mean2d, conic, opacity, rgb,
          offsets, ids, sky, out_rgb, out_alpha):
    x0 = (t % tiles_x) * tile
    y0 = (t // tiles_x) * tile
    x1 = min(x0 + tile, width)
    y1 = min(y0 + tile, height)
    sel = ids[offsets[t]:offsets[t + 1]]
    if not len(sel):
        out_rgb[y0:y1, x0:x1] = sky
        out_alpha[y0:y1, x0:x1] = 0.0
        return
    py, px = np.mgrid[y0:y1, x0:x1]
    px = px.ravel().astype(np.float64)
    py = py.ravel().astype(np.float64)
    dx = px[None, :] - mean2d[sel, 0:1]
    dy = py[None, :] - mean2d[sel, 1:2]
    a, b, c = conic[sel, 0:1], conic[sel, 1:2], conic[sel, 2:3]
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    alpha = opacity[sel, None] * np.exp(power)
    alpha = np.minimum(alpha, ALPHA_MAX)
    alpha[alpha < ALPHA_MIN] = 0.0
    trans_after = np.cumprod(1.0 - alpha, axis=0)
    trans_before = np.empty_like(trans_after)
    trans_before[0] = 1.0
    trans_before[1:] = trans_after[:-1]
    live = trans_before >= T_MIN
    weight = np.where(live, alpha * trans_before, 0.0)
    color = weight.T @ rgb[sel]
    n_live = live.sum(axis=0)
    final_t = trans_after[n_live - 1, np.arange(len(px))]
    out = color + final_t[:, None] * sky[None, :]
    out_rgb[y0:y1, x0:x1] = out.reshape(y1 - y0, x1 - x0, 3)
    out_alpha[y0:y1, x0:x1] = (1.0 - final_t).reshape(y1 - y0, x1 - x0)


def rasterize_tiles(mean2d, conic, opacity, rgb, offsets, ids, width, height,
                    tile, sky, n_threads=1):
    """Composite binned splats; returns ``(rgb (H, W, 3), alpha (H, W))`` float32."""
    out_rgb = np.empty((height, width, 3), np.float32)
    out_alpha = np.empty((height, width), np.float32)
    tiles_x = -(-width // tile)
    tiles_y = -(-height // tile)
    sky = np.asarray(sky, np.float64)
    args = (tiles_x, tile, width, height, np.asarray(mean2d), np.asarray(conic),
            np.asarray(opacity), np.asarray(rgb), np.asarray(offsets), np.asarray(ids),
            sky, out_rgb, out_alpha)
    n_tiles = tiles_x * tiles_y
    if n_threads <= 1:
        for t in range(n_tiles):
            _tile(t, *args)
    else:
        with ThreadPoolExecutor(n_threads) as pool:
            list(pool.map(lambda t: _tile(t, *args), range(n_tiles)))
    return out_rgb, out_alpha
