"""Kernel selection: the compiled extension when importable, else numpy.

Set ``CROSSRIG_PURE_PYTHON=1`` to force the numpy kernel.
"""

from __future__ import annotations

import os

from . import _raster_py

try:
    if os.environ.get("CROSSRIG_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernel requested")
    from . import _raster  # type: ignore[attr-defined]
except ImportError:
    _raster = None

KERNELS = {"python": _raster_py.rasterize_tiles}
if _raster is not None:
    KERNELS["cython"] = _raster.rasterize_tiles

BACKEND = "cython" if _raster is not None else "python"


def get_kernel(name: str | None = None):
    name = name or BACKEND
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"raster backend {name!r} unavailable; have {sorted(KERNELS)}") from None
