"""Synthetic shape corpus, PNG dataset I/O and rotation/crop/flip augmentation.

Images are stored channel-first, ``(3, H, W)`` floats in [0, 1]. Ground truth
is a list of boolean ``(H, W)`` annotator maps.

On-disk layout::

    <root>/images/<id>.png         RGB or grayscale, 8-bit
    <root>/gt/<id>.png             single annotator, or
    <root>/gt/<id>.a<k>.png        annotator k (k = 0, 1, ...)

A ground-truth pixel is an edge when its 8-bit value exceeds 127.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .evaluation.thinning import morphological_thin

PathLike = Union[str, Path]


@dataclass
class SamplePair:
    image: np.ndarray
    gt: List[np.ndarray]
    id: str

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"{self.id}: image must be (3,H,W), got {self.image.shape}")
        if not self.gt:
            raise ValueError(f"{self.id}: at least one ground-truth map is required")
        self.gt = [np.asarray(g).astype(bool) for g in self.gt]
        for g in self.gt:
            if g.shape != self.image.shape[1:]:
                raise ValueError(f"{self.id}: gt shape {g.shape} != image shape {self.image.shape[1:]}")


# ------------------------------------------------------------------ synthesis

_SUPERSAMPLE = 4
_NOISE_SIGMA = 0.02


def _sample_grid(size: int, factor: int) -> Tuple[np.ndarray, np.ndarray]:
    # pixel (i, j) covers [i, i+1) x [j, j+1); sub-samples sit at cell centres
    coords = (np.arange(size * factor) + 0.5) / factor
    return np.meshgrid(coords, coords, indexing="ij")


def _random_shape(rng: np.random.Generator, size: int):
    """Return an inside-test ``f(rows, cols) -> bool array`` for a random shape."""
    cy, cx = rng.uniform(0.15 * size, 0.85 * size, 2)
    if rng.random() < 0.5:
        a, b = rng.uniform(0.1 * size, 0.3 * size, 2)
        theta = rng.uniform(0, np.pi)
        c, s = np.cos(theta), np.sin(theta)

        def inside(r, q):
            u = (r - cy) * c + (q - cx) * s
            v = -(r - cy) * s + (q - cx) * c
            return (u / a) ** 2 + (v / b) ** 2 <= 1.0

        return inside

    k = int(rng.integers(3, 7))
    # jittered even spacing keeps the polygon convex and non-degenerate
    angles = np.linspace(0, 2 * np.pi, k, endpoint=False) + rng.uniform(0, 2 * np.pi) + rng.uniform(-0.3, 0.3, k) * (2 * np.pi / k)
    radius = rng.uniform(0.12 * size, 0.32 * size)
    vy = cy + radius * np.sin(angles)
    vx = cx + radius * np.cos(angles)

    def inside(r, q):
        pos = np.ones(r.shape, dtype=bool)
        neg = np.ones(r.shape, dtype=bool)
        for i in range(k):
            y0, x0, y1, x1 = vy[i], vx[i], vy[(i + 1) % k], vx[(i + 1) % k]
            side = (x1 - x0) * (r - y0) - (y1 - y0) * (q - x0)
            pos &= side >= 0
            neg &= side <= 0
        return pos | neg

    return inside


def boundary_map(labels: np.ndarray, intensity: np.ndarray) -> np.ndarray:
    """Thin occlusion boundary of a label map.

    A pixel is marked when a 4-neighbour belongs to a different region of
    lower intensity, so each boundary is drawn once, on its brighter side.
    The result is skeletonised to a one-pixel 8-connected curve.
    """
    level = intensity[labels]
    edge = np.zeros(labels.shape, dtype=bool)
    for axis in (0, 1):
        for shift in (1, -1):
            nb_lab = np.roll(labels, shift, axis=axis)
            nb_lev = np.roll(level, shift, axis=axis)
            hit = (nb_lab != labels) & (nb_lev < level)
            # discard wrap-around comparisons
            border = [slice(None)] * 2
            border[axis] = 0 if shift == 1 else -1
            hit[tuple(border)] = False
            edge |= hit
    return morphological_thin(edge)


def synth_sample(size: int, rng: np.random.Generator, ident: str = "0") -> SamplePair:
    n_shapes = int(rng.integers(2, 6))
    # well-separated grey levels: background plus one per shape
    levels = rng.choice(np.linspace(0.1, 0.9, 9), size=n_shapes + 1, replace=False)

    rr, cc = _sample_grid(size, _SUPERSAMPLE)
    pr, pc = _sample_grid(size, 1)
    fine = np.zeros(rr.shape, dtype=np.int64)
    labels = np.zeros((size, size), dtype=np.int64)
    for k in range(1, n_shapes + 1):
        inside = _random_shape(rng, size)
        fine[inside(rr, cc)] = k
        labels[inside(pr, pc)] = k

    f = _SUPERSAMPLE
    grey = levels[fine].reshape(size, f, size, f).mean(axis=(1, 3))
    grey = grey + rng.normal(0.0, _NOISE_SIGMA, grey.shape)
    image = np.clip(np.repeat(grey[None], 3, axis=0), 0.0, 1.0)
    return SamplePair(image, [boundary_map(labels, levels)], ident)


def gen_synthetic(n: int, size: int = 64, seed: int = 0) -> List[SamplePair]:
    """``n`` shape images with exact thin ground truth; a pure function of its arguments.

    Sample ``i`` draws from its own stream seeded by ``(seed, i)``, so any
    subset can be regenerated independently.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < 32:
        raise ValueError("size must be >= 32")
    return [synth_sample(size, np.random.default_rng([seed, i]), f"{i:05d}") for i in range(n)]


# ---------------------------------------------------------------- augmentation

def _default_angles() -> Tuple[float, ...]:
    return tuple(15.0 * k for k in range(24))


@dataclass
class AugmentConfig:
    rotation_angles: Tuple[float, ...] = field(default_factory=_default_angles)
    crop_size: Optional[Tuple[int, int]] = None
    horizontal_flip: float = 0.5

    def __post_init__(self) -> None:
        self.rotation_angles = tuple(float(a) for a in self.rotation_angles)
        if self.crop_size is not None:
            self.crop_size = (int(self.crop_size[0]), int(self.crop_size[1]))
        self.validate()

    def validate(self) -> None:
        if not self.rotation_angles:
            raise ValueError("rotation_angles: need at least one angle")
        if not 0.0 <= self.horizontal_flip <= 1.0:
            raise ValueError("horizontal_flip: probability must lie in [0, 1]")
        if self.crop_size is not None and min(self.crop_size) < 1:
            raise ValueError("crop_size: must be positive")


@dataclass(frozen=True)
class Transform:
    angle: float
    top: int
    left: int
    crop: Tuple[int, int]
    flip: bool


def _is_right_angle(angle: float) -> bool:
    return abs(angle / 90.0 - round(angle / 90.0)) < 1e-9


def _rotated_shape(shape: Tuple[int, int], angle: float) -> Tuple[int, int]:
    quarter = int(round(angle / 90.0)) % 2
    return (shape[1], shape[0]) if _is_right_angle(angle) and quarter else shape


def _crop_fits(shape, angle, top, left, crop) -> bool:
    """Every corner of the crop window maps back inside the source image."""
    if _is_right_angle(angle):
        h, w = _rotated_shape(shape, angle)
        return 0 <= top and 0 <= left and top + crop[0] <= h and left + crop[1] <= w
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(angle)
    c, s = math.cos(t), math.sin(t)
    for r in (top, top + crop[0] - 1):
        for q in (left, left + crop[1] - 1):
            y, x = r - cy, q - cx
            sy, sx = c * y + s * x + cy, c * x - s * y + cx
            if not (-1e-9 <= sy <= h - 1 + 1e-9 and -1e-9 <= sx <= w - 1 + 1e-9):
                return False
    return True


@lru_cache(maxsize=1024)
def _valid_offsets(shape, angle, crop) -> Tuple[Tuple[int, int], ...]:
    shape, crop = tuple(shape), tuple(crop)
    h, w = _rotated_shape(shape, angle)
    return tuple(
        (t, l)
        for t in range(0, h - crop[0] + 1)
        for l in range(0, w - crop[1] + 1)
        if _crop_fits(shape, angle, t, l, crop)
    )


def sample_transform(
    shape: Tuple[int, int],
    cfg: AugmentConfig,
    rng: np.random.Generator,
    angle: Optional[float] = None,
) -> Transform:
    """Draw an angle whose rotated canvas holds the crop, then a valid offset and flip."""
    shape = tuple(int(v) for v in shape)
    crop = tuple(cfg.crop_size or shape)
    if angle is not None:
        offsets = _valid_offsets(shape, angle, crop)
        if not offsets:
            raise ValueError(f"crop {crop} does not fit inside an image of {shape} rotated by {angle} degrees")
        candidates = [(angle, offsets)]
    else:
        candidates = [(a, o) for a in cfg.rotation_angles if (o := _valid_offsets(shape, a, crop))]
        if not candidates:
            raise ValueError(f"crop {crop} does not fit inside an image of {shape} at any configured angle")
    a, offsets = candidates[int(rng.integers(len(candidates)))]
    top, left = offsets[int(rng.integers(len(offsets)))]
    flip = bool(rng.random() < cfg.horizontal_flip)
    return Transform(a, top, left, crop, flip)


def apply_transform(arr: np.ndarray, tf: Transform, order: int) -> np.ndarray:
    """Apply ``tf`` to a 2-D map (``order`` 1 bilinear, 0 nearest).

    Rotation is counter-clockwise about the image centre, then the crop
    window is cut and the result optionally mirrored left-right.
    """
    arr = np.asarray(arr)
    out_h, out_w = tf.crop
    if _is_right_angle(tf.angle):
        rot = np.rot90(arr, int(round(tf.angle / 90.0)) % 4)
        out = rot[tf.top:tf.top + out_h, tf.left:tf.left + out_w]
    else:
        h, w = arr.shape
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        t = math.radians(tf.angle)
        c, s = math.cos(t), math.sin(t)
        r, q = np.meshgrid(np.arange(tf.top, tf.top + out_h), np.arange(tf.left, tf.left + out_w), indexing="ij")
        y, x = r - cy, q - cx
        src = np.stack([c * y + s * x + cy, c * x - s * y + cx])
        out = ndimage.map_coordinates(arr.astype(np.float64), src, order=order, mode="nearest")
        if arr.dtype == bool:
            out = out > 0.5
    if tf.flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(
    pair: SamplePair,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    angle: Optional[float] = None,
) -> SamplePair:
    """Rotate, crop and flip an image and all its annotator maps identically."""
    tf = sample_transform(pair.image.shape[1:], cfg, rng, angle)
    image = np.stack([apply_transform(ch, tf, order=1) for ch in pair.image])
    gts = []
    for g in pair.gt:
        moved = apply_transform(g.astype(bool), tf, order=0)
        gts.append(moved if _is_right_angle(tf.angle) else morphological_thin(moved))
    return SamplePair(image, gts, pair.id)


# ------------------------------------------------------------------------ I/O

_GT_NAME = re.compile(r"^(?P<id>.+?)(?:\.a(?P<k>\d+))?\.png$")


def read_image(path: PathLike) -> np.ndarray:
    """8-bit PNG as a ``(3, H, W)`` float array in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return np.transpose(arr, (2, 0, 1))


def read_gray(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def read_mask(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) > 127
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read ground truth {path}: {exc}") from exc


def to_uint8(p: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_probmap(p: np.ndarray, path: PathLike) -> None:
    """Write a probability map as 8-bit grayscale ``round(p * 255)``."""
    p = np.asarray(p)
    if p.ndim != 2:
        raise ValueError(f"probability map must be 2-D, got shape {p.shape}")
    Image.fromarray(to_uint8(p), mode="L").save(path)


def save_mask(b: np.ndarray, path: PathLike) -> None:
    Image.fromarray(np.asarray(b, dtype=bool).astype(np.uint8) * 255, mode="L").save(path)


def save_image(image: np.ndarray, path: PathLike) -> None:
    Image.fromarray(np.transpose(to_uint8(image), (1, 2, 0)), mode="RGB").save(path)


def load_probmaps(directory: PathLike) -> dict:
    """``{id: float map}`` for every PNG in ``directory``."""
    return {p.stem: read_gray(p) for p in sorted(Path(directory).glob("*.png"))}


def load_gt_dir(directory: PathLike) -> dict:
    """``{id: [annotator maps]}`` following the ``<id>[.a<k>].png`` convention."""
    found: dict = {}
    for path in sorted(Path(directory).glob("*.png")):
        m = _GT_NAME.match(path.name)
        k = int(m.group("k")) if m.group("k") is not None else -1
        found.setdefault(m.group("id"), []).append((k, path))
    return {ident: [read_mask(p) for _, p in sorted(files)] for ident, files in sorted(found.items())}


def load_dataset(directory: PathLike) -> List[SamplePair]:
    root = Path(directory)
    img_dir, gt_dir = root / "images", root / "gt"
    if not img_dir.is_dir():
        if root.is_dir() and not any(root.iterdir()):
            return []
        raise FileNotFoundError(f"missing images directory {img_dir}")
    gts = load_gt_dir(gt_dir) if gt_dir.is_dir() else {}
    pairs = []
    for path in sorted(img_dir.glob("*.png")):
        ident = path.stem
        if ident not in gts:
            raise FileNotFoundError(f"no ground truth for image {ident!r} in {gt_dir}")
        pairs.append(SamplePair(read_image(path), gts[ident], ident))
    return pairs


def save_dataset(pairs: Sequence[SamplePair], directory: PathLike) -> None:
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    for pair in pairs:
        save_image(pair.image, root / "images" / f"{pair.id}.png")
        if len(pair.gt) == 1:
            save_mask(pair.gt[0], root / "gt" / f"{pair.id}.png")
        else:
            for k, g in enumerate(pair.gt):
                save_mask(g, root / "gt" / f"{pair.id}.a{k}.png")
