# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled compositing kernel.

Tiles run in parallel (OpenMP); every pixel is owned by exactly one tile
and walks that tile's depth-sorted list sequentially, so the output is
independent of the thread count.
"""

import numpy as np

from cython.parallel cimport prange
from libc.math cimport exp
from libc.stdint cimport int64_t

cdef double ALPHA_MIN = 1.0 / 255.0
cdef double ALPHA_MAX = 0.99
cdef double T_MIN = 1e-4


cdef void _tile(Py_ssize_t t, Py_ssize_t tiles_x, Py_ssize_t tile,
                Py_ssize_t width, Py_ssize_t height,
                const double[:, ::1] mean2d, const double[:, ::1] conic,
                const double[::1] opacity, const double[:, ::1] rgb,
                const int64_t[::1] offsets, const int64_t[::1] ids,
                double s0, double s1, double s2,
                float[:, :, ::1] out_rgb, float[:, ::1] out_alpha) noexcept nogil:
    cdef Py_ssize_t x0 = (t % tiles_x) * tile
    cdef Py_ssize_t y0 = (t // tiles_x) * tile
    cdef Py_ssize_t x1 = x0 + tile
    cdef Py_ssize_t y1 = y0 + tile
    cdef Py_ssize_t px, py, k, i
    cdef int64_t start = offsets[t]
    cdef int64_t stop = offsets[t + 1]
    cdef double T, c0, c1, c2, dx, dy, power, alpha, w
    if x1 > width:
        x1 = width
    if y1 > height:
        y1 = height
    for py in range(y0, y1):
        for px in range(x0, x1):
            T = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            for k in range(start, stop):
                i = ids[k]
                dx = px - mean2d[i, 0]
                dy = py - mean2d[i, 1]
                power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                alpha = opacity[i] * exp(power)
                if alpha > ALPHA_MAX:
                    alpha = ALPHA_MAX
                if alpha < ALPHA_MIN:
                    continue
                w = alpha * T
                c0 = c0 + w * rgb[i, 0]
                c1 = c1 + w * rgb[i, 1]
                c2 = c2 + w * rgb[i, 2]
                T = T * (1.0 - alpha)
                if T < T_MIN:
                    break
            out_rgb[py, px, 0] = <float>(c0 + T * s0)
            out_rgb[py, px, 1] = <float>(c1 + T * s1)
            out_rgb[py, px, 2] = <float>(c2 + T * s2)
            out_alpha[py, px] = <float>(1.0 - T)


def rasterize_tiles(mean2d, conic, opacity, rgb, offsets, ids, int width, int height,
                    int tile, sky, int n_threads=1):
    """Composite binned splats; returns ``(rgb (H, W, 3), alpha (H, W))`` float32."""
    cdef const double[:, ::1] m = np.ascontiguousarray(mean2d, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] q = np.ascontiguousarray(conic, dtype=np.float64).reshape(-1, 3)
    cdef const double[::1] o = np.ascontiguousarray(opacity, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(rgb, dtype=np.float64).reshape(-1, 3)
    cdef const int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[::1] idx = np.ascontiguousarray(ids, dtype=np.int64)
    out_rgb = np.empty((height, width, 3), np.float32)
    out_alpha = np.empty((height, width), np.float32)
    cdef float[:, :, ::1] orgb = out_rgb
    cdef float[:, ::1] oalpha = out_alpha
    cdef double s0 = sky[0], s1 = sky[1], s2 = sky[2]
    cdef Py_ssize_t tiles_x = (width + tile - 1) // tile
    cdef Py_ssize_t tiles_y = (height + tile - 1) // tile
    cdef Py_ssize_t n_tiles = tiles_x * tiles_y
    cdef Py_ssize_t t
    if n_threads < 1:
        n_threads = 1
    with nogil:
        for t in prange(n_tiles, num_threads=n_threads, schedule="dynamic"):
            _tile(t, tiles_x, tile, width, height, m, q, o, c, off, idx,
                  s0, s1, s2, orgb, oalpha)
    return out_rgb, out_alpha
