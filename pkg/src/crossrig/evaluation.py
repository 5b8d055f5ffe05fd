"""Chamfer-distance matching and mAP for vector-map predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .vectormap import MAP_CLASSES, MapClass, MapElement, MapLayer

THRESHOLDS = (0.5, 1.0, 1.5)
RECALL_POINTS = np.arange(101) / 100.0


class InconsistentPointCountError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Prediction:
    element: MapElement
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True, eq=False)
class EvalSample:
    sample_id: str
    predictions: tuple[Prediction, ...]
    ground_truth: MapLayer

    def __post_init__(self):
        object.__setattr__(self, "predictions", tuple(self.predictions))


def chamfer(a, b) -> float:
    """Mean of the two directed average nearest-neighbour distances."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if not len(a) or not len(b):
        raise ValueError("chamfer distance needs two non-empty point sets")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return 0.5 * d.min(axis=1).mean() + 0.5 * d.min(axis=0).mean()


def chamfer_matrix(pred_pts: np.ndarray, gt_pts: np.ndarray) -> np.ndarray:
    """Pairwise Chamfer distances between ``(P, N, 2)`` and ``(G, N, 2)``."""
    out = np.zeros((len(pred_pts), len(gt_pts)))
    if not len(pred_pts) or not len(gt_pts):
        return out
    for i, p in enumerate(pred_pts):
        d = np.linalg.norm(p[None, :, None, :] - gt_pts[:, None, :, :], axis=-1)  # (G, N, N)
        out[i] = 0.5 * d.min(axis=2).mean(axis=1) + 0.5 * d.min(axis=1).mean(axis=1)
    return out


def _score_order(scores: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores, dtype=float)))


def greedy_match(dist: np.ndarray, scores: np.ndarray, threshold: float) -> np.ndarray:
    """TP flags (input order) from a precomputed ``(P, G)`` distance matrix."""
    n_pred, n_gt = dist.shape
    tp = np.zeros(n_pred, bool)
    if not n_gt:
        return tp
    free = np.ones(n_gt, bool)
    for i in _score_order(scores):
        if not free.any():
            break
        d = np.where(free, dist[i], np.inf)
        j = int(np.argmin(d))
        if d[j] <= threshold:
            tp[i] = True
            free[j] = False
    return tp


def match_class(preds: Sequence[Prediction], gts: Sequence[MapElement], threshold: float) -> np.ndarray:
    """Greedy by descending score: each prediction claims the nearest unclaimed
    ground truth if it lies within ``threshold``."""
    scores = np.array([p.score for p in preds], dtype=float)
    dist = chamfer_matrix(_stack([p.element for p in preds]), _stack(gts))
    return greedy_match(dist, scores, threshold)


def average_precision(tp: Sequence[bool], scores: Sequence[float], n_gt: int,
                      mode: str = "101") -> float | None:
    """AP from pooled TP flags.

    ``mode="101"`` averages interpolated precision at recall 0, 0.01, ..., 1;
    ``mode="all"`` integrates the interpolated curve at every recall step.
    Returns ``None`` when there is nothing to score (no GT, no predictions).
    """
    tp = np.asarray(tp, dtype=bool)
    if n_gt == 0:
        return None if len(tp) == 0 else 0.0
    if len(tp) == 0:
        return 0.0
    order = _score_order(np.asarray(scores, dtype=float))
    hits = tp[order].astype(float)
    ctp = np.cumsum(hits)
    cfp = np.cumsum(1.0 - hits)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    # precision envelope: best precision at this or any higher recall
    env = np.maximum.accumulate(precision[::-1])[::-1]
    if mode == "101":
        idx = np.searchsorted(recall, RECALL_POINTS, side="left")
        vals = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
        return float(vals.mean())
    if mode == "all":
        r = np.concatenate([[0.0], recall])
        return float(np.sum((r[1:] - r[:-1]) * env))
    raise ValueError(f"unknown AP mode {mode!r}")


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    ap: dict[str, dict[float, float | None]]   # class -> threshold -> AP
    class_ap: dict[str, float | None]
    map: float                                  # mean over classes, x100
    n_gt: dict[str, int] = field(default_factory=dict)
    n_pred: dict[str, int] = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "thresholds_m": list(self.thresholds),
            "ap": {c: {f"{t:g}": v for t, v in d.items()} for c, d in self.ap.items()},
            "class_ap": self.class_ap,
            "mAP_x100": self.map,
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "options": self.options,
        }

    def to_text(self) -> str:
        """Plain-text table: one row per threshold plus the mean, values x100."""
        heads = ("Div.", "Cross.", "Bound.", "Center.", "mAP")

        def fmt(v):
            return "   -" if v is None else f"{100 * v:6.1f}"

        lines = [f"{'Threshold':>10} " + " ".join(f"{h:>7}" for h in heads)]
        for t in self.thresholds:
            vals = [self.ap[c.value][t] for c in MAP_CLASSES]
            defined = [v for v in vals if v is not None]
            m = sum(defined) / len(defined) if defined else None
            lines.append(f"{t:>9g}m " + " ".join(f"{fmt(v):>7}" for v in vals + [m]))
        vals = [self.class_ap[c.value] for c in MAP_CLASSES]
        lines.append(f"{'mean':>10} " + " ".join(f"{fmt(v):>7}" for v in vals) + f" {self.map:7.1f}")
        return "\n".join(lines)


def _stack(elements: Iterable[MapElement]) -> np.ndarray:
    els = list(elements)
    if not els:
        return np.zeros((0, 0, 2))
    return np.stack([e.points for e in els])


def _check_points(samples: Sequence[EvalSample]) -> int | None:
    counts = {len(p.element.points) for s in samples for p in s.predictions}
    counts |= {len(e.points) for s in samples for e in s.ground_truth.elements}
    if len(counts) > 1:
        raise InconsistentPointCountError(
            f"predictions and ground truth must share one point count, found {sorted(counts)}")
    return counts.pop() if counts else None


def evaluate(samples: Sequence[EvalSample], thresholds: Sequence[float] = THRESHOLDS, *,
             ap_mode: str = "101", pooling: str = "global") -> EvalReport:
    """Per-class AP at each Chamfer threshold, class AP and mAP (x100).

    ``pooling="global"`` pools TP flags over all samples before computing AP;
    ``pooling="per_sample"`` averages per-sample APs instead.  Classes with
    no ground truth and no predictions anywhere are left out of the mAP.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if pooling not in ("global", "per_sample"):
        raise ValueError(f"unknown pooling {pooling!r}")
    n_p = _check_points(samples)
    ap: dict[str, dict[float, float | None]] = {}
    class_ap: dict[str, float | None] = {}
    n_gt_all: dict[str, int] = {}
    n_pred_all: dict[str, int] = {}
    for cls in MAP_CLASSES:
        per_sample = []
        for s in samples:
            preds = [p for p in s.predictions if p.element.cls == cls]
            gts = s.ground_truth.by_class(cls)
            scores = np.array([p.score for p in preds], dtype=float)
            dist = chamfer_matrix(_stack(p.element for p in preds), _stack(gts))
            per_sample.append((dist, scores, len(gts)))
        n_gt_all[cls.value] = sum(n for _, _, n in per_sample)
        n_pred_all[cls.value] = sum(len(sc) for _, sc, _ in per_sample)
        ap[cls.value] = {}
        for t in thresholds:
            flags = [greedy_match(d, sc, t) for d, sc, _ in per_sample]
            if pooling == "global":
                tp = np.concatenate(flags) if flags else np.zeros(0, bool)
                sc = np.concatenate([sc for _, sc, _ in per_sample]) if per_sample else np.zeros(0)
                ap[cls.value][t] = average_precision(tp, sc, n_gt_all[cls.value], ap_mode)
            else:
                vals = [average_precision(f, sc, n, ap_mode) for f, (_, sc, n) in zip(flags, per_sample)]
                vals = [v for v in vals if v is not None]
                ap[cls.value][t] = float(np.mean(vals)) if vals else None
        defined = [v for v in ap[cls.value].values() if v is not None]
        class_ap[cls.value] = float(np.mean(defined)) if defined else None
    defined = [v for v in class_ap.values() if v is not None]
    m = 100.0 * float(np.mean(defined)) if defined else 0.0
    return EvalReport(thresholds, ap, class_ap, m, n_gt_all, n_pred_all,
                      {"ap_mode": ap_mode, "pooling": pooling, "n_points": n_p})


# -- files ---------------------------------------------------------------------

def read_predictions(path: str | Path) -> dict[str, list[Prediction]]:
    """JSON lines ``{sample_id, class, score, points}`` grouped by sample."""
    out: dict[str, list[Prediction]] = {}
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            r = json.loads(line)
            el = MapElement(r["points"], MapClass(r["class"]), bool(r.get("is_closed", False)))
            out.setdefault(str(r["sample_id"]), []).append(Prediction(el, float(r["score"])))
    return out


def write_predictions(preds: dict[str, Sequence[Prediction]], path: str | Path) -> None:
    with open(path, "w") as f:
        for sid in sorted(preds):
            for p in preds[sid]:
                f.write(json.dumps({
                    "sample_id": sid,
                    "class": p.element.cls.value,
                    "score": p.score,
                    "is_closed": p.element.is_closed,
                    "points": p.element.points.tolist(),
                }) + "\n")


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    (out_dir / "report.txt").write_text(report.to_text() + "\n")
