"""S-Eval / C-Eval drivers and the CSV report format.

Report CSV layout: a header row, one row per threshold with
``threshold,tp,fp,fn,precision,recall,f1``, then a summary row
``summary,ods,ods_t,ois,ap`` followed by the four values.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .matching import MatchCounts, correspond, default_tolerance
from .metrics import EvalReport, summarize
from .nms import oriented_nms
from .thinning import morphological_thin

MODES = ("s-eval", "c-eval")


def default_thresholds(n: int = 99) -> np.ndarray:
    """``n`` evenly spaced thresholds strictly inside (0, 1); 99 gives 0.01..0.99."""
    return np.round(np.linspace(0.0, 1.0, n + 2)[1:-1], 10)


def binarize(p: np.ndarray, t: float) -> np.ndarray:
    return np.asarray(p) >= t


def _normalize_mode(mode: str) -> str:
    m = mode.lower().replace("_", "-")
    if m in ("s", "seval", "standard"):
        m = "s-eval"
    if m in ("c", "ceval", "crisp", "crispness"):
        m = "c-eval"
    if m not in MODES:
        raise ValueError(f"unknown evaluation mode {mode!r}; use one of {MODES}")
    return m


def image_counts(
    p: np.ndarray,
    gts: Sequence[np.ndarray],
    mode: str,
    thresholds: Sequence[float],
    tol_px: Optional[float] = None,
) -> List[MatchCounts]:
    """Per-threshold match counts for one image."""
    mode = _normalize_mode(mode)
    p = np.asarray(p, dtype=np.float64)
    if isinstance(gts, np.ndarray) and gts.ndim == 2:
        gts = [gts]
    tol = default_tolerance(p.shape) if tol_px is None else tol_px
    src = oriented_nms(p) if mode == "s-eval" else p
    out = []
    prev_key, prev = None, None
    for t in thresholds:
        b = binarize(src, t)
        key = b.tobytes()
        if key == prev_key:
            out.append(prev)
            continue
        if mode == "s-eval":
            b = morphological_thin(b)
        prev_key, prev = key, correspond(b, gts, tol)
        out.append(prev)
    return out


def evaluate(
    preds: Sequence[np.ndarray],
    gts: Sequence[Sequence[np.ndarray]],
    mode: str = "c-eval",
    thresholds: Optional[Sequence[float]] = None,
    tol_px: Optional[float] = None,
    jobs: int = 1,
) -> EvalReport:
    """Evaluate aligned lists of probability maps and ground-truth sets.

    S-Eval applies oriented NMS, then per threshold binarizes and thins before
    matching; C-Eval matches the binarized raw maps directly.
    """
    mode = _normalize_mode(mode)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions but {len(gts)} ground-truth sets")
    if len(preds) == 0:
        raise ValueError("nothing to evaluate")
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)

    def one(i):
        return image_counts(preds[i], gts[i], mode, thresholds, tol_px)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_image = list(pool.map(one, range(len(preds))))
    else:
        per_image = [one(i) for i in range(len(preds))]
    return summarize(per_image, list(thresholds), mode)


def write_report_csv(report: EvalReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "tp", "fp", "fn", "precision", "recall", "f1"])
        for pt in report.pr_points:
            w.writerow([f"{pt.threshold:.6g}", pt.tp, pt.fp, pt.fn,
                        f"{pt.precision:.6f}", f"{pt.recall:.6f}", f"{pt.f1:.6f}"])
        w.writerow(["summary", "ods", "ods_t", "ois", "ap"])
        w.writerow(["summary", f"{report.ods_f:.6f}", f"{report.ods_threshold:.6g}",
                    f"{report.ois_f:.6f}", f"{report.ap:.6f}"])


def write_pr_csv(report: EvalReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for pt in report.pr_points:
            w.writerow([f"{pt.threshold:.6g}", f"{pt.precision:.6f}", f"{pt.recall:.6f}"])
