"""Brute-force renderer used as the correctness oracle for :func:`render`.

Every pixel composites every projected splat in one global depth order,
in float64, without tiling and without early termination.
"""

from __future__ import annotations

import numpy as np

from ..gaussians import GaussianCloud
from ..scene import SkyModel
from .projection import RenderCamera, gaussian_alpha, project_gaussians, splat_power
from .raster import Framebuffer

_CHUNK = 4096


def render_reference(gaussians, cam: RenderCamera, sky: SkyModel | None = None, *,
                     return_weights: bool = False):
    """Oracle render.

    With ``return_weights`` also returns ``(N, H, W)`` compositing weights
    indexed by input Gaussian (zero for culled ones).
    """
    sky = sky or SkyModel()
    cloud = GaussianCloud.coerce(gaussians)
    s = project_gaussians(cloud, cam)
    order = s.depth_order()
    mean2d, conic = s.mean2d[order], s.conic[order]
    opac, rgb = s.opacity[order], s.rgb[order]

    w, h = cam.width, cam.height
    py, px = np.mgrid[0:h, 0:w]
    px = px.ravel().astype(np.float64)
    py = py.ravel().astype(np.float64)
    sky_c = np.asarray(sky.color, dtype=np.float64)
    out = np.empty((h * w, 3))
    final_t = np.ones(h * w)
    weights = np.zeros((len(cloud), h * w)) if return_weights else None

    for lo in range(0, h * w, _CHUNK):
        hi = min(lo + _CHUNK, h * w)
        if not len(order):
            out[lo:hi] = sky_c
            continue
        dx = px[None, lo:hi] - mean2d[:, 0:1]
        dy = py[None, lo:hi] - mean2d[:, 1:2]
        alpha = gaussian_alpha(splat_power(conic[:, None, :], dx, dy), opac[:, None])
        t_after = np.cumprod(1.0 - alpha, axis=0)
        t_before = np.vstack([np.ones((1, hi - lo)), t_after[:-1]])
        wgt = alpha * t_before
        final_t[lo:hi] = t_after[-1]
        out[lo:hi] = wgt.T @ rgb + t_after[-1][:, None] * sky_c
        if weights is not None:
            weights[s.index[order], lo:hi] = wgt

    fb = Framebuffer(w, h, out.reshape(h, w, 3), (1.0 - final_t).reshape(h, w))
    if return_weights:
        return fb, weights.reshape(len(cloud), h, w)
    return fb
