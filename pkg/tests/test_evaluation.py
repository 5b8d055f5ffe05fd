import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossrig.evaluation import (
    THRESHOLDS,
    EvalSample,
    InconsistentPointCountError,
    Prediction,
    average_precision,
    chamfer,
    chamfer_matrix,
    evaluate,
    match_class,
    read_predictions,
    write_predictions,
    write_report,
)
from crossrig.vectormap import MAP_CLASSES, MapClass, MapElement, MapLayer
from conftest import random_fixture
from oracles import ap_by_definition, chamfer_loops, evaluate_loops

N_P = 6


def line(y, x0=0.0, x1=5.0, cls=MapClass.DIVIDER, n=N_P):
    return MapElement(np.column_stack([np.linspace(x0, x1, n), np.full(n, y)]), cls)


class TestChamfer:
    def test_identical(self):
        assert chamfer([[0, 0], [1, 1]], [[0, 0], [1, 1]]) == 0.0

    def test_single_pair(self):
        assert chamfer([[0, 0]], [[3, 4]]) == 5.0

    def test_unequal_sizes(self):
        assert chamfer([[0, 0], [2, 0]], [[1, 0]]) == pytest.approx(1.0, abs=1e-15)
        assert chamfer_loops([[0, 0], [2, 0]], [[1, 0]]) == pytest.approx(1.0, abs=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            chamfer([], [[0, 0]])

    def test_matrix_matches_pairwise(self, rng):
        a, b = rng.normal(size=(4, N_P, 2)), rng.normal(size=(3, N_P, 2))
        m = chamfer_matrix(a, b)
        for i, j in itertools.product(range(4), range(3)):
            assert m[i, j] == pytest.approx(chamfer_loops(a[i], b[j]), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_and_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(N_P, 2)), rng.normal(size=(N_P, 2))
        assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-12)
        assert chamfer(a, b) >= 0


class TestMatching:
    def test_exact_match_everywhere(self):
        g = line(0)
        for t in THRESHOLDS:
            assert match_class([Prediction(g, 0.5)], [g], t).tolist() == [True]

    def test_no_ground_truth(self):
        assert match_class([Prediction(line(0), 0.9), Prediction(line(1), 0.2)], [], 1.0).tolist() == [False, False]

    def test_greedy_by_score(self):
        gt = line(0)
        p_high = Prediction(line(0.4), 0.9)  # chamfer 0.4
        p_low = Prediction(line(0.2), 0.8)   # chamfer 0.2
        assert match_class([p_high, p_low], [gt], 0.5).tolist() == [True, False]
        # a distance-optimal assignment would have picked the low-score prediction
        d = [chamfer(p.element.points, gt.points) for p in (p_high, p_low)]
        assert int(np.argmin(d)) == 1

    def test_ties_by_index(self):
        gt = line(0)
        flags = match_class([Prediction(line(0.1), 0.5), Prediction(line(0.1), 0.5)], [gt], 0.5)
        assert flags.tolist() == [True, False]

    def test_claims_nearest_unclaimed(self):
        g0, g1 = line(0), line(1)
        preds = [Prediction(line(0.1), 0.9), Prediction(line(0.2), 0.8)]
        assert match_class(preds, [g0, g1], 1.0).tolist() == [True, True]


class TestAveragePrecision:
    def test_one_tp(self):
        assert average_precision([True], [0.9], 1) == 1.0

    def test_no_predictions(self):
        assert average_precision([], [], 1) == 0.0

    def test_undefined(self):
        assert average_precision([], [], 0) is None
        assert average_precision([False], [0.3], 0) == 0.0

    def test_documented_example(self):
        ap = average_precision([True, False, True], [0.9, 0.8, 0.7], 2)
        assert ap == pytest.approx((51 * 1.0 + 50 * 2 / 3) / 101, abs=1e-12)
        assert ap == pytest.approx(ap_by_definition([True, False, True], [0.9, 0.8, 0.7], 2), abs=1e-12)

    def test_all_point_mode(self):
        assert average_precision([True, False, True], [0.9, 0.8, 0.7], 2, mode="all") == pytest.approx(
            0.5 * 1.0 + 0.5 * 2 / 3)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.floats(0, 1)), max_size=30), st.integers(0, 10))
    def test_against_definition(self, rows, extra_gt):
        tp = [r[0] for r in rows]
        scores = [r[1] for r in rows]
        n_gt = sum(tp) + extra_gt
        got = average_precision(tp, scores, n_gt)
        want = ap_by_definition(tp, scores, n_gt)
        if want is None:
            assert got is None
        else:
            assert got == pytest.approx(want, abs=1e-12)
            assert 0.0 <= got <= 1.0


class TestEvaluate:
    @pytest.mark.parametrize("seed", range(10))
    def test_against_brute_force(self, seed):
        samples, plain = random_fixture(np.random.default_rng(seed))
        rep = evaluate(samples)
        ap, class_ap, m = evaluate_loops(plain, THRESHOLDS, MAP_CLASSES)
        for c in MAP_CLASSES:
            for t in THRESHOLDS:
                if ap[c][t] is None:
                    assert rep.ap[c.value][t] is None
                else:
                    assert rep.ap[c.value][t] == pytest.approx(ap[c][t], abs=1e-9)
        assert rep.map == pytest.approx(m, abs=1e-9)

    def test_perfect(self):
        gts = [line(0), line(3, cls=MapClass.CROSSING), line(6, cls=MapClass.BOUNDARY),
               line(9, cls=MapClass.CENTERLINE)]
        s = EvalSample("a", tuple(Prediction(g, 1.0) for g in gts), MapLayer(tuple(gts)))
        rep = evaluate([s])
        assert rep.map == 100.0
        assert all(v == 1.0 for v in rep.class_ap.values())

    def test_no_predictions(self):
        s = EvalSample("a", (), MapLayer((line(0), line(3, cls=MapClass.CROSSING))))
        assert evaluate([s]).map == 0.0

    def test_inconsistent_point_count(self):
        s = EvalSample("a", (Prediction(line(0, n=5), 1.0),), MapLayer((line(0, n=6),)))
        with pytest.raises(InconsistentPointCountError):
            evaluate([s])

    def test_per_sample_pooling_differs(self):
        s1 = EvalSample("a", (Prediction(line(0), 0.9),), MapLayer((line(0),)))
        s2 = EvalSample("b", (Prediction(line(5), 0.95),), MapLayer((line(0),)))
        assert evaluate([s1, s2]).map != evaluate([s1, s2], pooling="per_sample").map

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_threshold_monotonicity(self, seed):
        samples, _ = random_fixture(np.random.default_rng(seed), 3)
        rep = evaluate(samples)
        for c in MAP_CLASSES:
            vals = [rep.ap[c.value][t] for t in THRESHOLDS]
            if vals[0] is not None:
                assert vals[0] <= vals[1] + 1e-12 <= vals[2] + 2e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0))
    def test_score_scaling_invariance(self, seed, k):
        samples, _ = random_fixture(np.random.default_rng(seed), 3)
        scaled = [EvalSample(s.sample_id, tuple(Prediction(p.element, p.score * k) for p in s.predictions),
                             s.ground_truth) for s in samples]
        a, b = evaluate(samples), evaluate(scaled)
        assert a.ap == b.ap

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_unmatched_duplicate_gt_never_helps(self, seed):
        rng = np.random.default_rng(seed)
        samples, _ = random_fixture(rng, 3)
        cls = MAP_CLASSES[int(rng.integers(4))]
        far = MapElement(np.column_stack([np.linspace(500, 505, N_P), np.full(N_P, 500.0)]), cls)
        first = samples[0]
        extra = EvalSample(first.sample_id, first.predictions,
                           MapLayer(first.ground_truth.elements + (far,)))
        before, after = evaluate(samples), evaluate([extra] + samples[1:])
        for t in THRESHOLDS:
            b, a = before.ap[cls.value][t], after.ap[cls.value][t]
            assert a <= (b if b is not None else 0.0) + 1e-12


class TestFiles:
    def test_predictions_round_trip(self, tmp_path):
        preds = {"x": [Prediction(line(0), 0.7), Prediction(line(1, cls=MapClass.CROSSING), 0.2)]}
        write_predictions(preds, tmp_path / "p.jsonl")
        back = read_predictions(tmp_path / "p.jsonl")
        assert [p.score for p in back["x"]] == [0.7, 0.2]
        assert np.array_equal(back["x"][1].element.points, preds["x"][1].element.points)

    def test_report_files(self, tmp_path):
        s = EvalSample("a", (Prediction(line(0), 1.0),), MapLayer((line(0),)))
        write_report(evaluate([s]), tmp_path)
        d = json.loads((tmp_path / "report.json").read_text())
        assert d["mAP_x100"] == 100.0 and d["thresholds_m"] == [0.5, 1.0, 1.5]
        assert d["class_ap"]["crossing"] is None
        assert "Div." in (tmp_path / "report.txt").read_text()

    def test_score_range(self):
        with pytest.raises(ValueError):
            Prediction(line(0), 1.5)
