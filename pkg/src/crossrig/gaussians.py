"""3D Gaussian primitives and spherical-harmonic colour.

A single splat is a :class:`Gaussian3D`.  Rendering and scene composition
work on :class:`GaussianCloud`, the same data laid out as parallel arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import Pose

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)

SH_COUNTS = (1, 4, 9, 16)


class InvariantError(ValueError):
    """A Gaussian record breaks a model invariant; ``index`` names the record."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index


def rgb_to_sh_dc(rgb) -> np.ndarray:
    return (np.asarray(rgb, dtype=float) - 0.5) / SH_C0


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """``(N, 4)`` wxyz quaternions to ``(N, 3, 3)`` rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - z * w)
    m[:, 0, 2] = 2 * (x * z + y * w)
    m[:, 1, 0] = 2 * (x * y + z * w)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - x * w)
    m[:, 2, 0] = 2 * (x * z - y * w)
    m[:, 2, 1] = 2 * (y * z + x * w)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def eval_sh(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Colour of ``(N, K, 3)`` SH coefficients along unit directions ``(N, 3)``.

    Uses the usual splatting convention (offset by 0.5); the result is
    clamped to [0, 1].
    """
    k = sh.shape[1]
    out = SH_C0 * sh[:, 0]
    if k > 1:
        x, y, z = (dirs[:, i : i + 1] for i in range(3))
        out = out - SH_C1 * y * sh[:, 1] + SH_C1 * z * sh[:, 2] - SH_C1 * x * sh[:, 3]
        if k > 4:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            out = (out
                   + SH_C2[0] * xy * sh[:, 4]
                   + SH_C2[1] * yz * sh[:, 5]
                   + SH_C2[2] * (2 * zz - xx - yy) * sh[:, 6]
                   + SH_C2[3] * xz * sh[:, 7]
                   + SH_C2[4] * (xx - yy) * sh[:, 8])
            if k > 9:
                out = (out
                       + SH_C3[0] * y * (3 * xx - yy) * sh[:, 9]
                       + SH_C3[1] * xy * z * sh[:, 10]
                       + SH_C3[2] * y * (4 * zz - xx - yy) * sh[:, 11]
                       + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh[:, 12]
                       + SH_C3[4] * x * (4 * zz - xx - yy) * sh[:, 13]
                       + SH_C3[5] * z * (xx - yy) * sh[:, 14]
                       + SH_C3[6] * x * (xx - 3 * yy) * sh[:, 15])
    return np.clip(out + 0.5, 0.0, 1.0)


def rotate_sh_band1(sh: np.ndarray, rot: np.ndarray) -> np.ndarray:
    """Rotate the degree-1 band of ``(N, K, 3)`` coefficients by ``rot`` (3x3).

    Higher bands are returned unchanged (an approximation).
    """
    if sh.shape[1] < 4:
        return sh
    out = sh.copy()
    # band 1 is C1 * (v . d) with v = (-c3, -c1, c2)
    v = np.stack([-sh[:, 3], -sh[:, 1], sh[:, 2]], axis=1)  # (N, 3xyz, 3rgb)
    v = np.einsum("ij,njc->nic", rot, v)
    out[:, 1] = -v[:, 1]
    out[:, 2] = v[:, 2]
    out[:, 3] = -v[:, 0]
    return out


@dataclass(frozen=True, eq=False)
class Gaussian3D:
    mean: np.ndarray      # (3,) metres
    scale: np.ndarray     # (3,) per-axis std-dev, metres
    rotation: np.ndarray  # (4,) wxyz
    opacity: float
    sh: np.ndarray        # (K, 3), K in {1, 4, 9, 16}

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(3))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float).reshape(3))
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        object.__setattr__(self, "rotation", q / np.linalg.norm(q))
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "sh", np.asarray(self.sh, dtype=float).reshape(-1, 3))
        _check(self.mean[None], self.scale[None], self.rotation[None],
               np.array([self.opacity]), self.sh[None])

    @classmethod
    def from_rgb(cls, mean, scale, rgb, opacity=1.0, rotation=(1.0, 0.0, 0.0, 0.0)) -> "Gaussian3D":
        return cls(mean, scale, rotation, opacity, rgb_to_sh_dc(rgb)[None])

    def covariance(self) -> np.ndarray:
        r = quats_to_matrices(self.rotation[None])[0]
        return r @ np.diag(self.scale**2) @ r.T


def _check(means, scales, rots, opac, sh, offset: int = 0) -> None:
    if sh.shape[1] not in SH_COUNTS:
        raise InvariantError(f"SH coefficient count {sh.shape[1]} not in {SH_COUNTS}")
    checks = (
        (~np.isfinite(means).all(axis=1), "non-finite mean"),
        (~(scales > 0).all(axis=1), "scale must be positive"),
        (~((opac >= 0) & (opac <= 1)), "opacity outside [0, 1]"),
        (~(np.abs(np.linalg.norm(rots, axis=1) - 1.0) <= 1e-6), "rotation is not a unit quaternion"),
        (~np.isfinite(sh).all(axis=(1, 2)), "non-finite SH coefficient"),
    )
    for bad, msg in checks:
        if bad.any():
            raise InvariantError(msg, offset + int(np.argmax(bad)))


class GaussianCloud:
    """Parallel-array collection of Gaussians.

    ``means``/``scales`` are ``(N, 3)``, ``rotations`` ``(N, 4)`` wxyz,
    ``opacities`` ``(N,)`` and ``sh`` ``(N, K, 3)``.
    """

    __slots__ = ("means", "scales", "rotations", "opacities", "sh")

    def __init__(self, means, scales, rotations, opacities, sh, *, validate: bool = True):
        self.means = np.array(means, dtype=float, order="C").reshape(-1, 3)
        n = len(self.means)
        self.scales = np.array(scales, dtype=float, order="C").reshape(n, 3)
        self.rotations = np.array(rotations, dtype=float, order="C").reshape(n, 4)
        self.opacities = np.array(opacities, dtype=float, order="C").reshape(n)
        sh = np.asarray(sh, dtype=float)
        k = sh.shape[1] if sh.ndim == 3 else 1
        self.sh = np.array(sh.reshape(n, -1, 3) if n else sh.reshape(0, k, 3), order="C")
        if validate:
            _check(self.means, self.scales, self.rotations, self.opacities, self.sh)
        for a in (self.means, self.scales, self.rotations, self.opacities, self.sh):
            a.flags.writeable = False

    @classmethod
    def empty(cls, sh_count: int = 1) -> "GaussianCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, sh_count, 3)))

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian3D]) -> "GaussianCloud":
        gs = list(gaussians)
        if not gs:
            return cls.empty()
        k = max(len(g.sh) for g in gs)
        sh = np.zeros((len(gs), k, 3))
        for i, g in enumerate(gs):
            sh[i, : len(g.sh)] = g.sh
        return cls(
            np.stack([g.mean for g in gs]),
            np.stack([g.scale for g in gs]),
            np.stack([g.rotation for g in gs]),
            np.array([g.opacity for g in gs]),
            sh,
        )

    @classmethod
    def coerce(cls, gaussians) -> "GaussianCloud":
        if isinstance(gaussians, GaussianCloud):
            return gaussians
        return cls.from_gaussians(gaussians)

    @classmethod
    def concat(cls, clouds: Sequence["GaussianCloud"]) -> "GaussianCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return cls.empty()
        if len(clouds) == 1:
            return clouds[0]
        k = max(c.sh.shape[1] for c in clouds)
        sh = np.concatenate([_pad_sh(c.sh, k) for c in clouds])
        return cls(
            np.concatenate([c.means for c in clouds]),
            np.concatenate([c.scales for c in clouds]),
            np.concatenate([c.rotations for c in clouds]),
            np.concatenate([c.opacities for c in clouds]),
            sh,
            validate=False,
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Gaussian3D(self.means[idx], self.scales[idx], self.rotations[idx],
                              self.opacities[idx], self.sh[idx])
        return GaussianCloud(self.means[idx], self.scales[idx], self.rotations[idx],
                             self.opacities[idx], self.sh[idx], validate=False)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def sh_count(self) -> int:
        return self.sh.shape[1]

    def covariances(self) -> np.ndarray:
        r = quats_to_matrices(self.rotations)
        rs = r * self.scales[:, None, :]
        return rs @ rs.transpose(0, 2, 1)

    def transformed(self, pose: Pose) -> "GaussianCloud":
        """Rigidly move the cloud: means mapped, rotations left-multiplied."""
        if not len(self):
            return self
        rot = pose.rotation_matrix()
        means = self.means @ rot.T + np.asarray(pose.translation)
        w1, x1, y1, z1 = pose.rotation
        w2, x2, y2, z2 = self.rotations.T
        q = np.stack([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ], axis=1)
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        return GaussianCloud(means, self.scales, q, self.opacities, rotate_sh_band1(self.sh, rot),
                             validate=False)

    def colors(self, camera_center) -> np.ndarray:
        """Per-Gaussian RGB seen from ``camera_center``."""
        if self.sh_count == 1:
            return np.clip(SH_C0 * self.sh[:, 0] + 0.5, 0.0, 1.0)
        d = self.means - np.asarray(camera_center, dtype=float)
        n = np.linalg.norm(d, axis=1, keepdims=True)
        d = d / np.where(n > 0, n, 1.0)
        return eval_sh(self.sh, d)


def _pad_sh(sh: np.ndarray, k: int) -> np.ndarray:
    if sh.shape[1] == k:
        return sh
    out = np.zeros((len(sh), k, 3))
    out[:, : sh.shape[1]] = sh
    return out
