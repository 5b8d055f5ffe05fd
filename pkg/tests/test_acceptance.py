"""Acceptance gate: one PASS/FAIL line per primary criterion.

Run with pytest (lines are collected into the terminal summary) or directly
with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import math
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES, random_cloud, random_fixture  # noqa: E402
from oracles import evaluate_loops, matrix4  # noqa: E402

from crossrig.cli import main  # noqa: E402
from crossrig.config import load_config, load_trajectory  # noqa: E402
from crossrig.evaluation import THRESHOLDS, EvalSample, Prediction, evaluate  # noqa: E402
from crossrig.geometry import (  # noqa: E402
    AV2_TO_NUSC_OFFSET,
    CameraDef,
    CameraIntrinsics,
    Pose,
    RigOffset,
    load_rig,
    target_camera_pose,
    target_vehicle_pose,
)
from crossrig.packager import load_ground_truth, make_token, validate  # noqa: E402
from crossrig.ply import read_ply  # noqa: E402
from crossrig.render import KERNELS, RenderCamera, render, render_reference  # noqa: E402
from crossrig.render.raster import resolve_threads  # noqa: E402
from crossrig.scene import SkyModel  # noqa: E402
from crossrig.vectormap import MAP_CLASSES, BevRange, MapElement, MapLayer, clip_to_range, ego_to_world, \
    world_to_ego  # noqa: E402


def report(name: str, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


# -- criteria ----------------------------------------------------------------------

def check_transform_chain(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    triples = [tuple(Pose(tuple(rng.standard_normal(4)), tuple(rng.uniform(-100, 100, 3))) for _ in range(3))
               for _ in range(n)]
    k = CameraIntrinsics(1000.0, 1000.0, 800.0, 450.0, 1600, 900)
    t0 = time.perf_counter()
    got = [target_camera_pose(target_vehicle_pose(s, RigOffset(o)), CameraDef("c", k, e)) for s, o, e in triples]
    elapsed = time.perf_counter() - t0
    err = max(np.max(np.abs(g.matrix() - matrix4(s.rotation, s.translation) @ matrix4(o.rotation, o.translation)
                            @ matrix4(e.rotation, e.translation)))
              for g, (s, o, e) in zip(got, triples))
    ok = err <= 1e-9 and elapsed < 1.0
    return ok, f"{n} triples, max |error| {err:.2e} (tol 1e-9), {elapsed:.3f} s (limit 1 s)"


def check_ground_offset(seed=0):
    from crossrig.synthetic import nusc_like_rig

    rng = np.random.default_rng(seed)
    rig = nusc_like_rig()
    worst = 0.0
    for _ in range(50):
        src = Pose.from_yaw(rng.uniform(-math.pi, math.pi), tuple(rng.uniform(-500, 500, 3)))
        for cam in rig.cameras:
            a = target_camera_pose(target_vehicle_pose(src, AV2_TO_NUSC_OFFSET), cam)
            b = target_camera_pose(target_vehicle_pose(src, RigOffset()), cam)
            worst = max(worst, abs((a.translation[2] - b.translation[2]) - (-0.33)),
                        abs(a.translation[0] - b.translation[0]), abs(a.translation[1] - b.translation[1]))
    return worst <= 1e-12, f"50 yaw-only poses x {rig.n_cameras} cameras, max deviation from -0.33 m {worst:.2e}"


def random_scene(rng):
    n = int(rng.integers(1, 201))
    w, h = int(rng.integers(64, 129)), int(rng.integers(64, 129))
    cloud = random_cloud(rng, n, sh_degree=int(rng.integers(0, 4)))
    pose = Pose.from_axis_angle(rng.standard_normal(3), rng.uniform(0, 0.3), tuple(rng.uniform(-0.5, 0.5, 3)))
    f = rng.uniform(0.6, 1.2) * w
    k = CameraIntrinsics(f, f * rng.uniform(0.9, 1.1), w / 2 + rng.uniform(-3, 3), h / 2 + rng.uniform(-3, 3), w, h)
    # move the cloud with the camera so it stays in view
    return cloud.transformed(pose), RenderCamera(pose, k), SkyModel(tuple(rng.uniform(0, 1, 3)))


def check_renderer_oracle(n=20, seed=0):
    rng = np.random.default_rng(seed)
    worst, elapsed = 0.0, 0.0
    for _ in range(n):
        cloud, cam, sky = random_scene(rng)
        t0 = time.perf_counter()
        fast = render(cloud, cam, sky, threads=1)
        ref = render_reference(cloud, cam, sky)
        elapsed += time.perf_counter() - t0
        worst = max(worst, float(np.max(np.abs(fast.rgb.astype(np.float64) - ref.rgb))))
    ok = worst <= 1e-3 and elapsed < 60.0
    return ok, f"{n} scenes, max |render - reference| {worst:.2e} (tol 1e-3), {elapsed:.2f} s single-threaded"


def check_determinism(seed=0):
    rng = np.random.default_rng(seed)
    counts = sorted({1, resolve_threads(None), 4})
    same = True
    for backend in sorted(KERNELS):
        for _ in range(3):
            cloud, cam, sky = random_scene(rng)
            base = render(cloud, cam, sky, threads=1, backend=backend)
            for n in counts[1:]:
                other = render(cloud, cam, sky, threads=n, backend=backend)
                same &= np.array_equal(base.rgb, other.rgb) and np.array_equal(base.alpha, other.alpha)
    return same, f"backends {sorted(KERNELS)}, threads {counts}: {'bit-identical' if same else 'MISMATCH'}"


def check_eval_oracle(n=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    structural = THRESHOLDS == (0.5, 1.0, 1.5) and len(MAP_CLASSES) == 4
    for _ in range(n):
        samples, plain = random_fixture(rng, int(rng.integers(1, 6)))
        rep = evaluate(samples)
        ap, _, m = evaluate_loops(plain, THRESHOLDS, MAP_CLASSES)
        for c in MAP_CLASSES:
            for t in THRESHOLDS:
                a, b = rep.ap[c.value][t], ap[c][t]
                if (a is None) != (b is None):
                    worst = math.inf
                elif a is not None:
                    worst = max(worst, abs(a - b))
        worst = max(worst, abs(rep.map - m) / 100.0)
        defined = [v for v in rep.class_ap.values() if v is not None]
        structural &= len(rep.class_ap) == 4
        if defined:
            structural &= math.isclose(rep.map, 100.0 * sum(defined) / len(defined), abs_tol=1e-12)
    ok = worst <= 1e-9 and structural
    return ok, f"{n} fixtures, max |AP - brute force| {worst:.2e} (tol 1e-9), thresholds {list(THRESHOLDS)}, 4 classes, x100"


def check_perfect_and_empty(dataset: Path):
    gt = load_ground_truth(dataset)
    perfect = [EvalSample(s, tuple(Prediction(e, 1.0) for e in layer.elements), layer) for s, layer in gt.items()]
    empty = [EvalSample(s, (), layer) for s, layer in gt.items()]
    hi, lo = evaluate(perfect).map, evaluate(empty).map
    ok = len(gt) == 10 and hi == 100.0 and lo == 0.0
    return ok, f"{len(gt)} samples: perfect {hi:.1f} (want 100.0), empty {lo:.1f} (want 0.0)"


def check_map_round_trip(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    worst_rt, worst_clip = 0.0, 0.0
    r = BevRange()
    for _ in range(n):
        k = int(rng.integers(2, 15))
        closed = bool(rng.integers(2)) and k >= 3
        pts = rng.uniform(-2000, 2000, 2) + np.cumsum(rng.normal(0, 8, (k, 2)), axis=0)
        layer = MapLayer((MapElement(pts, MAP_CLASSES[int(rng.integers(4))], closed, "world"),), "world")
        pose = Pose.from_yaw(rng.uniform(-math.pi, math.pi), (*(pts[0] + rng.normal(0, 10, 2)), rng.uniform(-3, 3)))
        ego = world_to_ego(layer, pose)
        back = ego_to_world(ego, pose)
        worst_rt = max(worst_rt, float(np.max(np.abs(back.elements[0].points - pts))))
        for e in clip_to_range(ego, r).elements:
            p = e.points
            over = max(r.x_min - p[:, 0].min(), p[:, 0].max() - r.x_max,
                       r.y_min - p[:, 1].min(), p[:, 1].max() - r.y_max, 0.0)
            worst_clip = max(worst_clip, over)
    ok = worst_rt <= 1e-9 and worst_clip <= 1e-9
    return ok, f"{n} elements, round-trip error {worst_rt:.2e}, max range excess {worst_clip:.2e} (tol 1e-9)"


def run_end_to_end(root: Path):
    """Build, render, package, validate and self-evaluate; returns (ok, detail, config)."""
    from crossrig.synthetic import write_workspace

    t0 = time.perf_counter()
    cfg_path = write_workspace(root)
    codes = [main([c, "--config", str(cfg_path)]) for c in ("retarget", "render", "package", "validate")]
    preds = root / "self.jsonl"
    codes.append(main(["labels", "--config", str(cfg_path), "--out", str(preds)]))
    codes.append(main(["eval", "--config", str(cfg_path), "--predictions", str(preds)]))
    elapsed = time.perf_counter() - t0

    cfg = load_config(cfg_path)
    n_bg = len(read_ply(cfg.path("background")))
    n_obj = len(json.loads(cfg.path("tracks").read_text()))
    n_src = load_rig(cfg.path("source_rig")).n_cameras
    n_tgt = load_rig(cfg.path("target_rig")).n_cameras
    n_t = len(load_trajectory(cfg.path("trajectory")))
    violations = validate(cfg.output / "dataset")
    m = json.loads((cfg.output / "eval" / "report.json").read_text())["mAP_x100"]
    ok = (codes == [0] * 6 and not violations and m == 100.0 and elapsed < 300
          and 4000 <= n_bg <= 6000 and n_obj == 2 and (n_src, n_tgt, n_t) == (7, 6, 10))
    detail = (f"{n_bg} ground Gaussians, {n_obj} objects, {n_src}->{n_tgt} cameras, {n_t} timestamps; "
              f"exit codes {codes}, {len(violations)} violations, self-eval mAP {m:.1f}, {elapsed:.1f} s")
    return ok, detail, cfg


def check_fault_injection(dataset: Path, work: Path):
    def fresh(tag):
        dst = work / tag
        shutil.copytree(dataset, dst)
        vdir = next(dst.glob("v1.0-*"))
        return dst, vdir

    results = []
    d, v = fresh("deleted-image")
    sd = json.loads((v / "sample_data.json").read_text())
    victim = next(r for r in sd if r["fileformat"] == "png")
    (d / victim["filename"]).unlink()
    results.append(("missing-file", victim["token"], validate(d)))

    d, v = fresh("dangling-token")
    sd = json.loads((v / "sample_data.json").read_text())
    sd[7]["ego_pose_token"] = make_token("fault", "ego_pose")
    (v / "sample_data.json").write_text(json.dumps(sd))
    results.append(("dangling-token", sd[7]["token"], validate(d)))

    d, v = fresh("broken-link")
    samples = json.loads((v / "sample.json").read_text())
    samples[4]["prev"] = ""
    (v / "sample.json").write_text(json.dumps(samples))
    scene = json.loads((v / "scene.json").read_text())[0]["token"]
    results.append(("broken-link", scene, validate(d)))

    ok = all(len(found) == 1 and found[0]["kind"] == kind and found[0]["token"] == tok
             for kind, tok, found in results)
    detail = ", ".join(f"{kind}: {[f['kind'] for f in found]}" for kind, _, found in results)
    return ok, detail


# -- pytest wrappers ------------------------------------------------------------------

@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    return run_end_to_end(root), root


def _gate(name, result):
    ok, detail = result[:2]
    report(name, ok, detail)
    assert ok, detail


class TestAcceptance:
    def test_transform_chain_oracle(self):
        _gate("transform chain vs 4x4 products", check_transform_chain())

    def test_ground_level_offset(self):
        _gate("0.33 m ground-level offset", check_ground_offset())

    def test_renderer_oracle(self):
        _gate("renderer vs reference", check_renderer_oracle())

    def test_renderer_determinism(self):
        _gate("renderer determinism across threads", check_determinism())

    def test_eval_oracle(self):
        _gate("Chamfer/AP vs brute force", check_eval_oracle())

    def test_perfect_and_empty_predictions(self, e2e):
        (_, _, cfg), _ = e2e
        _gate("perfect and empty predictions", check_perfect_and_empty(cfg.output / "dataset"))

    def test_map_round_trip(self):
        _gate("map label round trip and clipping", check_map_round_trip())

    def test_end_to_end(self, e2e):
        _gate("end-to-end synthetic pipeline", e2e[0])

    def test_fault_injection(self, e2e, tmp_path):
        (_, _, cfg), _ = e2e
        _gate("packager fault injection", check_fault_injection(cfg.output / "dataset", tmp_path))


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        checks = [
            ("transform chain vs 4x4 products", check_transform_chain),
            ("0.33 m ground-level offset", check_ground_offset),
            ("renderer vs reference", check_renderer_oracle),
            ("renderer determinism across threads", check_determinism),
            ("Chamfer/AP vs brute force", check_eval_oracle),
            ("map label round trip and clipping", check_map_round_trip),
        ]
        results = [check() for _, check in checks]
        ok_e2e, detail_e2e, cfg = run_end_to_end(tmp / "e2e")
        ds = cfg.output / "dataset"
        (tmp / "faults").mkdir()
        results[5:5] = [check_perfect_and_empty(ds)]
        checks[5:5] = [("perfect and empty predictions", None)]
        checks += [("end-to-end synthetic pipeline", None), ("packager fault injection", None)]
        results += [(ok_e2e, detail_e2e), check_fault_injection(ds, tmp / "faults")]
        print()
        for (name, _), (ok, detail) in zip(checks, results):
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        sys.exit(0 if all(ok for ok, _ in results) else 1)
