"""EWA projection of 3D Gaussians into image-space splats."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..gaussians import Gaussian3D, GaussianCloud
from ..geometry import CameraIntrinsics, Pose

LOWPASS_PX2 = 0.3
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
SIGMA_EXTENT = 3.0
# the Jacobian is linearised at a view ray clamped to this multiple of the
# frustum half-angle tangent; keeps near, far off-axis splats bounded
FRUSTUM_GUARD = 1.3


@dataclass(frozen=True)
class RenderCamera:
    pose: Pose  # camera -> world, +z forward
    intrinsics: CameraIntrinsics
    near: float = 0.2
    far: float = 1000.0

    def __post_init__(self):
        if not (0.0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got near={self.near} far={self.far}")

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def world_to_camera(self, points) -> np.ndarray:
        r = self.pose.rotation_matrix()
        return (np.asarray(points, dtype=float) - np.asarray(self.pose.translation)) @ r


@dataclass(frozen=True, eq=False)
class Splat2D:
    mean2d: np.ndarray  # (2,) px
    cov2d: np.ndarray   # (2, 2) px^2, low-pass included
    depth: float
    opacity: float
    rgb: np.ndarray     # (3,)


@dataclass(frozen=True, eq=False)
class ProjectedSplats:
    """Surviving splats of a cloud; ``index`` points back into the input."""

    index: np.ndarray    # (M,) int64
    mean2d: np.ndarray   # (M, 2)
    cov2d: np.ndarray    # (M, 2, 2)
    conic: np.ndarray    # (M, 3) inverse covariance (a, b, c) for [[a, b], [b, c]]
    depth: np.ndarray    # (M,)
    opacity: np.ndarray  # (M,)
    rgb: np.ndarray      # (M, 3)
    extent: np.ndarray   # (M, 2) half-size of the footprint box in px

    def __len__(self) -> int:
        return len(self.index)

    def depth_order(self) -> np.ndarray:
        """Ascending depth, ties by input index."""
        return np.lexsort((self.index, self.depth))


def footprint_sigmas(opacity: np.ndarray) -> np.ndarray:
    """Footprint radius in standard deviations.

    At least 3 sigma, widened so that every pixel where a splat's alpha can
    reach 1/255 lies inside the footprint.
    """
    o = np.asarray(opacity, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.sqrt(np.maximum(2.0 * np.log(o / ALPHA_MIN), 0.0))
    return np.maximum(k, SIGMA_EXTENT)


def project_gaussians(gaussians, cam: RenderCamera) -> ProjectedSplats:
    cloud = GaussianCloud.coerce(gaussians)
    k = cam.intrinsics
    r_cw = cam.pose.rotation_matrix()
    w2c = r_cw.T
    p = (cloud.means - np.asarray(cam.pose.translation)) @ r_cw
    z = p[:, 2]
    keep = (z > cam.near) & (z < cam.far)
    idx = np.nonzero(keep)[0]
    p, z = p[idx], z[idx]
    x, y = p[:, 0], p[:, 1]

    lim_x = FRUSTUM_GUARD * max(k.cx, k.width - k.cx) / k.fx
    lim_y = FRUSTUM_GUARD * max(k.cy, k.height - k.cy) / k.fy
    tx = np.clip(x / z, -lim_x, lim_x)
    ty = np.clip(y / z, -lim_y, lim_y)
    jac = np.zeros((len(idx), 2, 3))
    jac[:, 0, 0] = k.fx / z
    jac[:, 0, 2] = -k.fx * tx / z
    jac[:, 1, 1] = k.fy / z
    jac[:, 1, 2] = -k.fy * ty / z
    t = jac @ w2c
    cov3 = cloud.covariances()[idx] if len(idx) else np.zeros((0, 3, 3))
    cov2 = t @ cov3 @ t.transpose(0, 2, 1)
    cov2[:, 0, 0] += LOWPASS_PX2
    cov2[:, 1, 1] += LOWPASS_PX2
    cov2[:, 0, 1] = cov2[:, 1, 0] = 0.5 * (cov2[:, 0, 1] + cov2[:, 1, 0])

    mean2d = np.stack([k.fx * x / z + k.cx, k.fy * y / z + k.cy], axis=1)
    opac = cloud.opacities[idx]
    sig = footprint_sigmas(opac)
    extent = sig[:, None] * np.sqrt(np.stack([cov2[:, 0, 0], cov2[:, 1, 1]], axis=1))
    # image rectangle in continuous pixel coordinates (pixel centres are integers)
    visible = (
        (mean2d[:, 0] + extent[:, 0] >= -0.5)
        & (mean2d[:, 0] - extent[:, 0] <= k.width - 0.5)
        & (mean2d[:, 1] + extent[:, 1] >= -0.5)
        & (mean2d[:, 1] - extent[:, 1] <= k.height - 0.5)
    )
    sel = np.nonzero(visible)[0]
    idx, mean2d, cov2, z, opac, extent = idx[sel], mean2d[sel], cov2[sel], z[sel], opac[sel], extent[sel]

    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    rgb = cloud[idx].colors(cam.pose.translation) if len(idx) else np.zeros((0, 3))
    return ProjectedSplats(idx.astype(np.int64), np.ascontiguousarray(mean2d), cov2,
                           np.ascontiguousarray(conic), z, np.ascontiguousarray(opac),
                           np.ascontiguousarray(rgb), extent)


def project_gaussian(g: Gaussian3D, cam: RenderCamera) -> Splat2D | None:
    """Project one Gaussian; ``None`` means culled."""
    s = project_gaussians([g], cam)
    if not len(s):
        return None
    return Splat2D(s.mean2d[0], s.cov2d[0], float(s.depth[0]), float(s.opacity[0]), s.rgb[0])


def gaussian_alpha(power: np.ndarray, opacity) -> np.ndarray:
    """Clamped, thresholded alpha from the Gaussian exponent."""
    alpha = np.minimum(ALPHA_MAX, opacity * np.exp(power))
    return np.where(alpha < ALPHA_MIN, 0.0, alpha)


def splat_power(conic: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """``-0.5 d^T Sigma^-1 d`` with ``conic`` broadcast against ``dx``/``dy``."""
    a, b, c = conic[..., 0], conic[..., 1], conic[..., 2]
    return -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy


def tile_grid(width: int, height: int, tile: int) -> tuple[int, int]:
    return math.ceil(width / tile), math.ceil(height / tile)
