from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crossrig.evaluation import EvalSample, Prediction  # noqa: E402
from crossrig.gaussians import GaussianCloud, rgb_to_sh_dc  # noqa: E402
from crossrig.geometry import CameraIntrinsics, Pose  # noqa: E402
from crossrig.render import RenderCamera  # noqa: E402
from crossrig.vectormap import MAP_CLASSES, MapElement, MapLayer  # noqa: E402

# filled by test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_cloud(rng: np.random.Generator, n: int, *, depth=(2.0, 12.0), spread=3.0,
                 sh_degree: int = 0) -> GaussianCloud:
    """Random Gaussians in front of a camera at the origin looking down +z."""
    z = rng.uniform(*depth, n)
    xy = rng.uniform(-spread, spread, (n, 2)) * (z[:, None] / depth[1])
    means = np.column_stack([xy, z])
    scales = rng.uniform(0.03, 0.5, (n, 3))
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opac = rng.uniform(0.05, 1.0, n)
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0] = rgb_to_sh_dc(rng.uniform(0, 1, (n, 3)))
    if k > 1:
        sh[:, 1:] = 0.2 * rng.standard_normal((n, k - 1, 3))
    return GaussianCloud(means, scales, q, opac, sh)


def pinhole(width: int, height: int, hfov_deg: float = 60.0, pose: Pose | None = None) -> RenderCamera:
    f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
    k = CameraIntrinsics(f, f, (width - 1) / 2, (height - 1) / 2, width, height)
    return RenderCamera(pose or Pose.identity(), k)


def random_fixture(rng, n_samples=5, n_p=6):
    """Samples whose predictions are noisy copies, shifted copies and clutter."""
    samples, plain = [], []
    for s in range(n_samples):
        gts, preds = [], []
        for cls in MAP_CLASSES:
            for _ in range(int(rng.integers(0, 4))):
                pts = np.cumsum(rng.normal(0, 1.5, (n_p, 2)), axis=0) + rng.uniform(-15, 15, 2)
                gts.append(MapElement(pts, cls))
                if rng.random() < 0.8:
                    noisy = pts + rng.normal(0, rng.choice([0.1, 0.5, 1.2]), pts.shape)
                    preds.append(Prediction(MapElement(noisy, cls), float(rng.choice([0.3, 0.5, rng.random()]))))
            for _ in range(int(rng.integers(0, 3))):
                pts = rng.uniform(-15, 15, (n_p, 2))
                preds.append(Prediction(MapElement(pts, cls), float(rng.random())))
        samples.append(EvalSample(f"s{s}", tuple(preds), MapLayer(tuple(gts))))
        plain.append(([(p.element.cls, p.score, p.element.points) for p in preds],
                      [(g.cls, g.points) for g in gts]))
    return samples, plain


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Synthetic workspace run through render and package once per session."""
    from crossrig.cli import main
    from crossrig.synthetic import write_workspace

    root = tmp_path_factory.mktemp("ws")
    cfg = write_workspace(root)
    for cmd in ("render", "package"):
        assert main([cmd, "--config", str(cfg)]) == 0
    return cfg
