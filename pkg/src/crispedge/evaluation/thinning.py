"""Zhang-Suen thinning of binary edge maps."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=int)


def _neighbours(img: np.ndarray):
    p = np.pad(img, 1)
    h, w = img.shape
    # P2..P9 clockwise from north
    return [
        p[0:h, 1:w + 1],      # P2 N
        p[0:h, 2:w + 2],      # P3 NE
        p[1:h + 1, 2:w + 2],  # P4 E
        p[2:h + 2, 2:w + 2],  # P5 SE
        p[2:h + 2, 1:w + 1],  # P6 S
        p[2:h + 2, 0:w],      # P7 SW
        p[1:h + 1, 0:w],      # P8 W
        p[0:h, 0:w],          # P9 NW
    ]


def _subiteration(img: np.ndarray, first: bool) -> np.ndarray:
    n = _neighbours(img)
    p2, p3, p4, p5, p6, p7, p8, p9 = n
    b = sum(n)
    seq = n + [p2]
    a = sum(((seq[k] == 0) & (seq[k + 1] == 1)).astype(np.uint8) for k in range(8))
    if first:
        c1 = p2 * p4 * p6
        c2 = p4 * p6 * p8
    else:
        c1 = p2 * p4 * p8
        c2 = p2 * p6 * p8
    return (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & (c1 == 0) & (c2 == 0)


def has_full_2x2(b: np.ndarray) -> bool:
    b = np.asarray(b, dtype=bool)
    return bool(np.any(b[:-1, :-1] & b[1:, :-1] & b[:-1, 1:] & b[1:, 1:]))


def _break_squares(img: np.ndarray) -> bool:
    """Drop one pixel from each fully set 2x2 block when that keeps 8-connectivity."""
    changed = False
    h, w = img.shape
    ys, xs = np.nonzero(img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:])
    for y, x in zip(ys, xs):
        if not (img[y, x] and img[y + 1, x] and img[y, x + 1] and img[y + 1, x + 1]):
            continue
        for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
            cy, cx = y + dy, x + dx
            if _is_simple(img, cy, cx):
                img[cy, cx] = 0
                changed = True
                break
    return changed


def _is_simple(img: np.ndarray, y: int, x: int) -> bool:
    """True if removing (y, x) keeps the 8-connected neighbourhood in one piece."""
    h, w = img.shape
    win = np.zeros((3, 3), dtype=np.uint8)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                win[dy + 1, dx + 1] = img[yy, xx]
    if win[0, 1] and win[1, 0] and win[1, 2] and win[2, 1]:
        return False
    win[1, 1] = 0
    pts = [(i, j) for i in range(3) for j in range(3) if win[i, j]]
    if len(pts) < 2:
        return False
    seen = {pts[0]}
    stack = [pts[0]]
    while stack:
        i, j = stack.pop()
        for q in pts:
            if q not in seen and abs(q[0] - i) <= 1 and abs(q[1] - j) <= 1:
                seen.add(q)
                stack.append(q)
    return len(seen) == len(pts)


def _guarded_delete(img: np.ndarray, kill: np.ndarray) -> bool:
    """Apply a parallel deletion, undoing it inside components it would erase or split."""
    labels, n = ndimage.label(img, structure=_EIGHT)
    after = img.copy()
    after[kill] = 0
    new_labels, _ = ndimage.label(after, structure=_EIGHT)
    for comp in np.unique(labels[kill]):
        inside = labels == comp
        parts = np.unique(new_labels[inside])
        parts = parts[parts > 0]
        if len(parts) == 1:
            continue
        if len(parts) == 0:
            ys, xs = np.nonzero(inside)
            after[ys[0], xs[0]] = 1
        else:
            after[inside & kill] = 1
    changed = bool(np.any(after != img))
    img[...] = after
    return changed


def morphological_thin(b: np.ndarray, max_iter: int = 1000) -> np.ndarray:
    """Thin a binary map to an 8-connected skeleton.

    Runs the two Zhang-Suen sub-iterations until nothing changes, then removes
    the rare surviving 2x2 blocks pixel by pixel, and repeats until stable.
    Deletions that would erase or split an 8-connected component (the
    classic failure on 2x2 squares) are withheld. The result is a fixed point.
    """
    img = (np.asarray(b) > 0).astype(np.uint8)
    for _ in range(max_iter):
        changed = False
        for first in (True, False):
            kill = _subiteration(img, first)
            if kill.any() and _guarded_delete(img, kill):
                changed = True
        if not changed:
            changed = _break_squares(img)
            if not changed:
                break
    return img.astype(bool)
