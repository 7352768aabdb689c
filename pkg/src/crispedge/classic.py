"""Classical derivative-based edge operators used as baselines.

All operators take a 2-D float image in [0, 1]. Borders use replicate
padding so that constant images produce no response anywhere.
"""

from __future__ import annotations

import math
from typing import Dict, Tuple

import numpy as np
from scipy import ndimage

from .evaluation.thinning import morphological_thin

KERNELS: Dict[str, Tuple[np.ndarray, np.ndarray]] = {
    "sobel": (
        np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]),
        np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]),
    ),
    "scharr": (
        np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]]),
        np.array([[-3.0, -10.0, -3.0], [0.0, 0.0, 0.0], [3.0, 10.0, 3.0]]),
    ),
    "roberts": (
        np.array([[1.0, 0.0], [0.0, -1.0]]),
        np.array([[0.0, 1.0], [-1.0, 0.0]]),
    ),
}

LAPLACIAN_4 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])

OPERATORS = ("sobel", "scharr", "roberts", "laplacian", "canny")


def _as_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def correlate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Cross-correlation with replicate padding; 2x2 kernels anchor at the top-left tap."""
    kh, kw = kernel.shape
    top, left = (kh - 1) // 2, (kw - 1) // 2
    padded = np.pad(img, ((top, kh - 1 - top), (left, kw - 1 - left)), mode="edge")
    out = np.zeros_like(img)
    h, w = img.shape
    for i in range(kh):
        for j in range(kw):
            if kernel[i, j]:
                out += kernel[i, j] * padded[i:i + h, j:j + w]
    return out


def gradients(img: np.ndarray, operator: str = "sobel") -> Tuple[np.ndarray, np.ndarray]:
    if operator not in KERNELS:
        raise ValueError(f"unknown gradient operator {operator!r}; choose from {sorted(KERNELS)}")
    img = _as_gray(img)
    kx, ky = KERNELS[operator]
    return correlate(img, kx), correlate(img, ky)


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if hi - lo <= 0:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def gradient_magnitude(img: np.ndarray, operator: str = "sobel", normalize: bool = True) -> np.ndarray:
    """``sqrt(Gx^2 + Gy^2)``, min-max scaled to [0, 1] unless ``normalize`` is false."""
    gx, gy = gradients(img, operator)
    mag = np.hypot(gx, gy)
    return _minmax(mag) if normalize else mag


def laplacian_response(img: np.ndarray) -> np.ndarray:
    return correlate(_as_gray(img), LAPLACIAN_4)


def zero_crossings(lap: np.ndarray, magnitude_floor: float = 0.0) -> np.ndarray:
    """Pixels whose response is positive with a negative 4-neighbour at least ``floor`` away.

    Only the positive side of each sign change is marked, which keeps the
    result one pixel wide.
    """
    if magnitude_floor < 0:
        raise ValueError("magnitude_floor must be >= 0")
    lap = np.asarray(lap, dtype=np.float64)
    h, w = lap.shape
    edge = np.zeros((h, w), dtype=bool)
    padded = np.pad(lap, 1, mode="edge")
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        edge |= (lap > 0) & (nb < 0) & (lap - nb >= magnitude_floor)
    return edge


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(_as_gray(img), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def _quantized_nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that beat their neighbours along the gradient (4 directions).

    The tie rule (``>=`` the previous neighbour, ``>`` the next) lets exactly
    one pixel of a flat-topped ridge survive.
    """
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    angle = (np.degrees(np.arctan2(gy, gx)) + 180.0) % 180.0
    sector = np.zeros((h, w), dtype=np.int64)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    # offsets (dy, dx) along the gradient for each sector; x right, y down
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros((h, w), dtype=bool)
    for s, (dy, dx) in steps.items():
        nxt = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        prv = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= (sector == s) & (mag >= prv) & (mag > nxt)
    return keep & (mag > 0)


def canny(img: np.ndarray, sigma: float = 1.0, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Blur, Sobel gradients, quantised NMS, 8-connected hysteresis, then thinning.

    ``low``/``high`` are fractions of the maximum gradient magnitude.
    """
    if not 0.0 <= low < high <= 1.0:
        raise ValueError(f"need 0 <= low < high <= 1, got low={low}, high={high}")
    smooth = gaussian_blur(img, sigma)
    gx, gy = gradients(smooth, "sobel")
    mag = np.hypot(gx, gy)
    peak = float(mag.max())
    if peak <= 1e-12:
        return np.zeros(mag.shape, dtype=bool)
    mag = mag / peak
    thin = _quantized_nms(mag, gx, gy)
    weak = thin & (mag >= low)
    strong = thin & (mag >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(mag.shape, dtype=bool)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return morphological_thin(keep[labels])


def run_operator(name: str, img: np.ndarray, **kwargs) -> np.ndarray:
    """Baseline map in [0, 1] for the CLI: magnitudes, or binary maps as 0/1."""
    if name in KERNELS:
        return gradient_magnitude(img, name)
    if name == "laplacian":
        return _minmax(np.abs(laplacian_response(img)))
    if name == "canny":
        return canny(img, **kwargs).astype(np.float64)
    raise ValueError(f"unknown operator {name!r}; choose from {', '.join(OPERATORS)}")
