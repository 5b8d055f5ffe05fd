"""Compare the compiled and numpy raster kernels on one synthetic frame.

    python3 benchmarks/bench_raster.py --gaussians 5000 --size 480 270 --repeat 3
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from crossrig.gaussians import GaussianCloud
from crossrig.geometry import Pose
from crossrig.render import KERNELS, RenderCamera, render
from crossrig.scene import SkyModel
from crossrig.synthetic import box_object, camera_at, ground_plane


def build(n: int, width: int, height: int):
    car = box_object(seed=1).transformed(Pose((1.0, 0.0, 0.0, 0.0), (10.0, 0.0, 0.75)))
    cloud = GaussianCloud.concat([ground_plane(), car])
    cloud = cloud[np.arange(min(n, len(cloud)))]
    cam = camera_at("CAM_FRONT", 0.0, (1.5, 0.0, 1.6), width, height, 70.0)
    return cloud, RenderCamera(cam.extrinsic, cam.intrinsics)


def time_backend(cloud, cam, backend, threads, repeat):
    render(cloud, cam, SkyModel(), threads=threads, backend=backend)  # warm up
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fb = render(cloud, cam, SkyModel(), threads=threads, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, fb


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--gaussians", type=int, default=6000)
    ap.add_argument("--size", type=int, nargs=2, default=(480, 270), metavar=("W", "H"))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    cloud, cam = build(args.gaussians, *args.size)
    print(f"{len(cloud)} Gaussians, {args.size[0]}x{args.size[1]}, threads={args.threads}")
    results = {}
    for name in sorted(KERNELS):
        secs, fb = time_backend(cloud, cam, name, args.threads, args.repeat)
        results[name] = (secs, fb)
        print(f"  {name:8s} {secs * 1e3:9.1f} ms")
    if len(results) == 2:
        (a, fa), (b, fb) = results["cython"], results["python"]
        diff = float(np.max(np.abs(fa.rgb.astype(np.float64) - fb.rgb)))
        print(f"  speedup  {b / a:9.1f}x   max |cython - python| {diff:.2e}")
    else:
        print("  compiled kernel not available; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
