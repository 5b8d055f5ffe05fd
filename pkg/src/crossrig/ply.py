"""Binary little-endian PLY reader/writer for splat point clouds.

Per-vertex layout: ``x y z f_dc_0..2 [f_rest_*] opacity scale_0..2 rot_0..3``.
Opacity is stored as a logit and scale as a log unless the header carries
``comment crossrig_linear 1``.  ``f_rest`` is channel-major (all red
coefficients, then green, then blue).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .gaussians import GaussianCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

LINEAR_FLAG = "crossrig_linear"


class ParseError(ValueError):
    """Malformed input file."""


class PlyError(ParseError):
    pass


def _read_header(f):
    if f.readline().strip() != b"ply":
        raise PlyError("missing 'ply' magic")
    fmt = None
    linear = False
    elements = []  # [name, count, [(prop, dtype)]]
    while True:
        raw = f.readline()
        if not raw:
            raise PlyError("unexpected end of file inside header")
        line = raw.decode("ascii", errors="replace").strip()
        if line == "end_header":
            break
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else None
        elif parts[0] == "comment":
            if len(parts) >= 3 and parts[1] == LINEAR_FLAG:
                linear = parts[2] == "1"
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyError(f"bad element line: {line!r}")
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise PlyError("property before any element")
            if parts[1] == "list":
                raise PlyError("list properties are not supported")
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise PlyError(f"bad property line: {line!r}")
            elements[-1][2].append((parts[2], "<" + _PLY_TYPES[parts[1]]))
    if fmt != "binary_little_endian":
        raise PlyError(f"unsupported PLY format {fmt!r}; expected binary_little_endian")
    return elements, linear


def read_ply(path: str | Path) -> GaussianCloud:
    """Load a splat PLY into a validated :class:`GaussianCloud`.

    Raises :class:`PlyError` for malformed files and
    :class:`~crossrig.gaussians.InvariantError` for bad records.
    """
    with open(path, "rb") as f:
        elements, linear = _read_header(f)
        if not elements or elements[0][0] != "vertex":
            raise PlyError("first element must be 'vertex'")
        _, count, props = elements[0]
        dtype = np.dtype(props)
        buf = f.read(dtype.itemsize * count)
        if len(buf) != dtype.itemsize * count:
            raise PlyError(f"truncated vertex data: expected {count} records")
        v = np.frombuffer(buf, dtype=dtype, count=count)

    names = set(dtype.names)
    required = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    missing = [n for n in required if n not in names]
    if missing:
        raise PlyError(f"missing vertex properties: {missing}")
    n_rest = len([n for n in names if n.startswith("f_rest_")])
    if n_rest not in (0, 9, 24, 45):
        raise PlyError(f"f_rest count {n_rest} does not match an SH degree 0..3")

    def col(*keys):
        return np.stack([v[k].astype(float) for k in keys], axis=-1)

    means = col("x", "y", "z")
    scales = col("scale_0", "scale_1", "scale_2")
    opac = v["opacity"].astype(float)
    if not linear:
        scales = np.exp(scales)
        opac = 1.0 / (1.0 + np.exp(-opac))
    rots = col("rot_0", "rot_1", "rot_2", "rot_3")
    norms = np.linalg.norm(rots, axis=1, keepdims=True)
    rots = rots / np.where(norms > 0, norms, np.nan)
    rots[rots[:, 0] < 0] *= -1

    k = 1 + n_rest // 3
    sh = np.zeros((count, k, 3))
    sh[:, 0] = col("f_dc_0", "f_dc_1", "f_dc_2")
    if n_rest:
        rest = col(*[f"f_rest_{i}" for i in range(n_rest)]).reshape(count, 3, k - 1)
        sh[:, 1:] = rest.transpose(0, 2, 1)
    return GaussianCloud(means, scales, rots, opac, sh)


def write_ply(path: str | Path, cloud: GaussianCloud, linear: bool = False) -> None:
    n, k = len(cloud), cloud.sh_count
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    data = np.empty(n, dtype=[(nm, "<f4") for nm in names])
    for i, nm in enumerate("xyz"):
        data[nm] = cloud.means[:, i]
    for c in range(3):
        data[f"f_dc_{c}"] = cloud.sh[:, 0, c]
        for j in range(k - 1):
            data[f"f_rest_{c * (k - 1) + j}"] = cloud.sh[:, 1 + j, c]
    if linear:
        data["opacity"] = cloud.opacities
        scales = cloud.scales
    else:
        o = np.clip(cloud.opacities, 1e-7, 1 - 1e-7)
        data["opacity"] = np.log(o / (1 - o))
        scales = np.log(cloud.scales)
    for i in range(3):
        data[f"scale_{i}"] = scales[:, i]
    for i in range(4):
        data[f"rot_{i}"] = cloud.rotations[:, i]

    header = ["ply", "format binary_little_endian 1.0"]
    if linear:
        header.append(f"comment {LINEAR_FLAG} 1")
    header.append(f"element vertex {n}")
    header += [f"property float {nm}" for nm in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())
