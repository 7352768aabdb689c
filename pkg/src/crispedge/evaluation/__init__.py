from .matching import MatchCounts, correspond, default_tolerance
from .metrics import EvalReport, PRPoint, average_precision, prf, summarize
from .nms import oriented_nms
from .protocol import binarize, default_thresholds, evaluate, image_counts, write_pr_csv, write_report_csv
from .thinning import has_full_2x2, morphological_thin

__all__ = [
    "MatchCounts", "correspond", "default_tolerance", "EvalReport", "PRPoint",
    "average_precision", "prf", "summarize", "oriented_nms", "binarize",
    "default_thresholds", "evaluate", "image_counts", "write_pr_csv",
    "write_report_csv", "has_full_2x2", "morphological_thin",
]
