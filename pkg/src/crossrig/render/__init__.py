"""Software Gaussian-splat rendering."""

from ._backend import BACKEND, KERNELS
from .projection import ProjectedSplats, RenderCamera, Splat2D, project_gaussian, project_gaussians
from .raster import Framebuffer, bin_splats, render
from .reference import render_reference
from .rig import read_manifest, render_rig, retarget_poses, save_png

__all__ = [
    "BACKEND",
    "KERNELS",
    "Framebuffer",
    "ProjectedSplats",
    "RenderCamera",
    "Splat2D",
    "bin_splats",
    "project_gaussian",
    "project_gaussians",
    "read_manifest",
    "render",
    "render_reference",
    "render_rig",
    "retarget_poses",
    "save_png",
]
