"""ODS / OIS / AP summaries over per-image, per-threshold match counts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .matching import MatchCounts


def prf(c: MatchCounts):
    """Precision, recall, F1 with 0 for empty denominators."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    ods_f: float
    ods_threshold: float
    ois_f: float
    ap: float
    pr_points: List[PRPoint] = field(default_factory=list)
    mode: str = "c-eval"

    def summary(self) -> str:
        return (f"[{self.mode}] ODS={self.ods_f:.4f} (t={self.ods_threshold:.2f}) "
                f"OIS={self.ois_f:.4f} AP={self.ap:.4f}")


def average_precision(points: Sequence[PRPoint]) -> float:
    """Trapezoidal area under the PR polyline.

    Points with no predicted pixels are left out. The rest are sorted by
    recall (ties by descending threshold) and anchored at recall 0 with the
    first point's precision.
    """
    pts = [p for p in points if p.tp + p.fp > 0]
    if not pts:
        return 0.0
    pts.sort(key=lambda p: (p.recall, -p.threshold))
    r = np.array([0.0] + [p.recall for p in pts])
    pr = np.array([pts[0].precision] + [p.precision for p in pts])
    return float(np.clip(np.sum(np.diff(r) * (pr[1:] + pr[:-1]) / 2.0), 0.0, 1.0))


def optimal_image_scale(per_image: Sequence[Sequence[MatchCounts]], start: float = 0.0) -> float:
    """Best pooled F when every image may use its own threshold.

    Pooled F is ``2TP / (2TP + FP + FN)``, a ratio of sums, so the joint
    per-image choice is solved exactly by Dinkelbach iteration: for a
    candidate value ``lam`` each image independently maximizes
    ``2tp - lam * (2tp + fp + fn)``. Starting from the shared-threshold
    optimum the value never decreases, hence OIS >= ODS.
    """
    num = [np.array([2 * c.tp for c in counts], dtype=np.float64) for counts in per_image]
    den = [np.array([2 * c.tp + c.fp + c.fn for c in counts], dtype=np.float64) for counts in per_image]
    lam = float(start)
    for _ in range(100):
        picks = [int(np.argmax(a - lam * b)) for a, b in zip(num, den)]
        top = sum(a[k] for a, k in zip(num, picks))
        bottom = sum(b[k] for b, k in zip(den, picks))
        value = top / bottom if bottom else 0.0
        if value <= lam + 1e-15:
            break
        lam = value
    return float(min(max(lam, start), 1.0))


def summarize(per_image: Sequence[Sequence[MatchCounts]], thresholds: Sequence[float], mode: str = "c-eval") -> EvalReport:
    """``per_image[i][k]`` holds the counts of image ``i`` at ``thresholds[k]``."""
    if len(per_image) == 0:
        raise ValueError("summarize needs at least one image")
    if len(thresholds) < 2:
        raise ValueError("summarize needs at least two thresholds")
    for counts in per_image:
        if len(counts) != len(thresholds):
            raise ValueError("every image needs one count per threshold")
    points = []
    for k, t in enumerate(thresholds):
        pooled = MatchCounts(0, 0, 0)
        for counts in per_image:
            pooled = pooled + counts[k]
        p, r, f = prf(pooled)
        points.append(PRPoint(float(t), pooled.tp, pooled.fp, pooled.fn, p, r, f))
    best = max(range(len(points)), key=lambda k: (points[k].f1, -k))
    ois = optimal_image_scale(per_image, start=points[best].f1)
    return EvalReport(
        ods_f=points[best].f1,
        ods_threshold=points[best].threshold,
        ois_f=ois,
        ap=average_precision(points),
        pr_points=points,
        mode=mode,
    )
