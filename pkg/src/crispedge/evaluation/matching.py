"""Distance-tolerant one-to-one correspondence between edge pixel sets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError(f"negative match count {self}")

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def default_tolerance(shape, fraction: float = 0.0075) -> int:
    """Benchmark tolerance: ``fraction`` of the image diagonal, rounded up to whole pixels."""
    h, w = shape[:2]
    return int(math.ceil(fraction * math.hypot(h, w)))


def match_pixels(pred_pts: np.ndarray, gt_pts: np.ndarray, tol: float) -> np.ndarray:
    """Maximum one-to-one matching with distance <= tol.

    Returns, for each predicted point, the index of its matched ground-truth
    point or -1.
    """
    n, m = len(pred_pts), len(gt_pts)
    if n == 0 or m == 0:
        return np.full(n, -1, dtype=int)
    tree = cKDTree(gt_pts)
    hits = tree.query_ball_point(pred_pts, r=tol + 1e-9)
    rows = np.repeat(np.arange(n), [len(h) for h in hits])
    cols = np.fromiter((j for h in hits for j in h), dtype=int, count=len(rows))
    if len(rows) == 0:
        return np.full(n, -1, dtype=int)
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, m))
    return np.asarray(maximum_bipartite_matching(graph, perm_type="column"), dtype=int)


def correspond(pred: np.ndarray, gts: Sequence[np.ndarray], tol_px: float) -> MatchCounts:
    """Count matches of a binary prediction against one or more annotator maps.

    A predicted pixel is a true positive if it is matched to at least one
    annotator; false negatives are summed over annotators.
    """
    if tol_px < 0:
        raise ValueError("tol_px must be >= 0")
    pred = np.asarray(pred, dtype=bool)
    if isinstance(gts, np.ndarray) and gts.ndim == 2:
        gts = [gts]
    if len(gts) == 0:
        raise ValueError("ground-truth set is empty")
    pred_pts = np.argwhere(pred).astype(np.float64)
    matched_any = np.zeros(len(pred_pts), dtype=bool)
    fn = 0
    for gt in gts:
        gt = np.asarray(gt, dtype=bool)
        if gt.shape != pred.shape:
            raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
        gt_pts = np.argwhere(gt).astype(np.float64)
        assign = match_pixels(pred_pts, gt_pts, tol_px)
        hit = assign >= 0
        matched_any |= hit
        fn += len(gt_pts) - int(hit.sum())
    tp = int(matched_any.sum())
    return MatchCounts(tp=tp, fp=len(pred_pts) - tp, fn=fn)
