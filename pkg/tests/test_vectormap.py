import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossrig.geometry import Pose
from crossrig.vectormap import (
    MAP_CLASSES,
    BevRange,
    DegenerateElementError,
    MapClass,
    MapElement,
    MapLayer,
    arc_length,
    clip_polygon,
    clip_polyline,
    clip_to_range,
    ego_to_world,
    load_layer,
    resample,
    save_layer,
    world_to_ego,
)
from oracles import arc_length_points, segment_box

R = BevRange()


def el(points, cls=MapClass.DIVIDER, closed=False, frame="ego"):
    return MapElement(points, cls, closed, frame)


def random_element(rng, frame="world", scale=40.0):
    n = int(rng.integers(2, 12))
    return MapElement(rng.uniform(-scale, scale, (n, 2)), MAP_CLASSES[int(rng.integers(4))],
                      bool(rng.integers(2)) and n >= 3, frame)


class TestTypes:
    def test_exactly_four_classes(self):
        assert [c.value for c in MAP_CLASSES] == ["divider", "crossing", "boundary", "centerline"]

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            el([[0, 0]])

    def test_finite(self):
        with pytest.raises(ValueError):
            el([[0, 0], [np.inf, 0]])

    def test_layer_frame_is_homogeneous(self):
        with pytest.raises(ValueError):
            MapLayer((el([[0, 0], [1, 0]], frame="world"),), "ego")

    def test_empty_range(self):
        with pytest.raises(ValueError):
            BevRange(1, 1, 0, 2)


class TestWorldToEgo:
    def test_identity(self):
        layer = MapLayer((el([[1, 2], [3, 4]], frame="world"),), "world")
        out = world_to_ego(layer, Pose())
        assert np.array_equal(out.elements[0].points, layer.elements[0].points)

    def test_translation(self):
        out = world_to_ego(MapLayer((el([[12, 3], [13, 3]], frame="world"),), "world"), Pose(translation=(10, 0, 0)))
        assert np.allclose(out.elements[0].points[0], (2, 3))

    def test_yaw_against_rotation_matrix(self):
        yaw = math.pi / 2
        ego = Pose.from_yaw(yaw, (5, -2, 0))
        world = np.array([[6.0, -2.0], [5.0, 1.0]])
        out = world_to_ego(MapLayer((el(world, frame="world"),), "world"), ego)
        rot = np.array([[math.cos(yaw), -math.sin(yaw)], [math.sin(yaw), math.cos(yaw)]])
        expected = (world - [5, -2]) @ rot  # R^T (p - t), row-vector form
        assert np.allclose(out.elements[0].points, expected, atol=1e-12)
        assert np.allclose(out.elements[0].points[0], (0, -1), atol=1e-12)

    def test_wrong_frame(self):
        with pytest.raises(ValueError):
            world_to_ego(MapLayer((el([[0, 0], [1, 1]]),), "ego"), Pose())

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_invertible(self, seed):
        rng = np.random.default_rng(seed)
        layer = MapLayer(tuple(random_element(rng) for _ in range(5)), "world")
        pose = Pose.from_yaw(rng.uniform(-math.pi, math.pi), (*rng.uniform(-1e3, 1e3, 2), rng.uniform(-2, 2)))
        back = ego_to_world(world_to_ego(layer, pose), pose)
        for a, b in zip(layer.elements, back.elements):
            assert np.allclose(a.points, b.points, atol=1e-9, rtol=0)


class TestClip:
    def test_inside_unchanged(self):
        pts = np.array([[0.0, 0.0], [1.0, 5.0], [-3.0, 10.0]])
        (out,) = clip_polyline(pts, R)
        assert np.array_equal(out, pts)

    def test_outside_removed(self):
        assert clip_polyline(np.array([[20.0, 0], [30.0, 0]]), R) == []
        layer = clip_to_range(MapLayer((el([[20, 0], [30, 0]]),)), R)
        assert len(layer) == 0

    def test_long_segment(self):
        (out,) = clip_polyline(np.array([[-20.0, 0], [20.0, 0]]), R)
        assert np.array_equal(out, [[-15, 0], [15, 0]])

    def test_chain_split(self):
        pts = np.array([[0.0, 0], [20.0, 0], [20.0, 10], [0.0, 10]])
        out = clip_polyline(pts, R)
        assert len(out) == 2
        assert np.allclose(out[0], [[0, 0], [15, 0]])
        assert np.allclose(out[1], [[15, 10], [0, 10]])

    @pytest.mark.parametrize("seed", range(20))
    def test_segment_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(-40, 40, 2), rng.uniform(-40, 40, 2)
        got = clip_polyline(np.array([a, b]), R)
        expected = segment_box(a, b, R.x_min, R.x_max, R.y_min, R.y_max)
        if expected is None or np.allclose(expected[0], expected[1]):
            assert got == [] or np.allclose(got[0][0], got[0][-1], atol=1e-9)
        else:
            assert len(got) == 1
            assert np.allclose(got[0], np.array(expected), atol=1e-9)

    def test_polygon(self):
        square = np.array([[10.0, -5], [20.0, -5], [20.0, 5], [10.0, 5]])
        out = clip_polygon(square, R)
        assert len(out) == 4
        assert set(map(tuple, out)) == {(10, -5), (15, -5), (15, 5), (10, 5)}

    def test_polygon_outside(self):
        assert len(clip_polygon(np.array([[20.0, 0], [30.0, 0], [30.0, 5]]), R)) == 0

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_outputs_stay_in_range(self, seed):
        rng = np.random.default_rng(seed)
        layer = MapLayer(tuple(random_element(rng, "ego") for _ in range(8)))
        out = clip_to_range(layer, R)
        for e in out.elements:
            assert R.contains(e.points, tol=1e-9).all()
            assert len(e.points) >= 2


class TestResample:
    def test_segment(self):
        out = resample(el([[0, 0], [1, 0]]), 3)
        assert np.array_equal(out.points, [[0, 0], [0.5, 0], [1, 0]])

    def test_fixed_point(self):
        pts = np.column_stack([np.linspace(0, 7, 9), np.zeros(9)])
        assert np.allclose(resample(el(pts), 9).points, pts, atol=1e-12)

    def test_l_shape_arc_length_table(self):
        pts = [[0, 0], [1, 0], [1, 1]]
        out = resample(el(pts), 5).points
        assert np.allclose(out, arc_length_points(pts, 5), atol=1e-12)
        assert np.allclose(out, [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1]], atol=1e-12)

    def test_closed_perimeter(self):
        square = [[0, 0], [1, 0], [1, 1], [0, 1]]
        out = resample(el(square, MapClass.CROSSING, True), 8).points
        assert np.allclose(out, [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1], [0.5, 1], [0, 1], [0, 0.5]])
        assert not np.allclose(out[0], out[-1])

    def test_degenerate(self):
        with pytest.raises(DegenerateElementError):
            resample(el([[1, 1], [1, 1]]), 5)

    def test_n_p_minimum(self):
        with pytest.raises(ValueError):
            resample(el([[0, 0], [1, 0]]), 1)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 50))
    def test_endpoints_and_length(self, seed, n_p):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-20, 20, (int(rng.integers(2, 10)), 2))
        out = resample(el(pts), n_p).points
        assert len(out) == n_p
        assert np.array_equal(out[0], pts[0]) and np.array_equal(out[-1], pts[-1])
        # every resampled point lies on the original polyline, in order
        assert arc_length(out) <= arc_length(pts) + 1e-9
        assert np.allclose(out, arc_length_points(pts, n_p), atol=1e-9)


class TestFiles:
    def test_round_trip(self, tmp_path, rng):
        layer = MapLayer(tuple(random_element(rng, "ego") for _ in range(6)), "ego", R, {"k": 1})
        save_layer(layer, tmp_path / "m.json")
        back = load_layer(tmp_path / "m.json")
        assert back.bev_range == R and back.meta == {"k": 1}
        for a, b in zip(layer.elements, back.elements):
            assert np.array_equal(a.points, b.points) and a.cls == b.cls and a.is_closed == b.is_closed
