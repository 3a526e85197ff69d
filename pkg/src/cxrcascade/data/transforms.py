"""Resizing, box rescaling, augmentation and deterministic splits."""
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from ..exceptions import AugmentationRejected, ParameterError
from .samples import BBox, ImageSample


def resize_area(image, side):
    """Downscale a square image by block averaging.

    Accepts ``(H, W)`` or ``(1, H, W)`` arrays and returns the same rank.
    """
    img = np.asarray(image)
    squeeze = img.ndim == 3
    if squeeze:
        if img.shape[0] != 1:
            raise ParameterError(f"expected a single-channel image, got {img.shape}")
        img = img[0]
    h, w = img.shape
    if h != w:
        raise ParameterError(f"resize_area needs a square image, got {h}x{w}")
    if side <= 0 or h % side:
        raise ParameterError(f"target side {side} does not divide {h}")
    f = h // side
    out = img if f == 1 else img.reshape(side, f, side, f).mean(axis=(1, 3))
    return out[None] if squeeze else out


def _round_half_up(num, den):
    return (2 * num + den) // (2 * den)


def scale_boxes(boxes, from_side, to_side):
    """Rescale boxes between square resolutions.

    Both corners are scaled by ``to_side / from_side`` and rounded half-up,
    then clamped to the target frame; boxes that end with zero area are
    dropped.
    """
    if from_side <= 0 or to_side <= 0:
        raise ParameterError("sides must be positive")
    out = []
    for b in boxes:
        x0 = min(_round_half_up(b.x * to_side, from_side), to_side)
        y0 = min(_round_half_up(b.y * to_side, from_side), to_side)
        x1 = min(_round_half_up(b.x1 * to_side, from_side), to_side)
        y1 = min(_round_half_up(b.y1 * to_side, from_side), to_side)
        if x1 > x0 and y1 > y0:
            out.append(BBox(x0, y0, x1 - x0, y1 - y0))
    return out


@dataclass(frozen=True)
class AugmentPolicy:
    """Uniform jitter ranges: shift in +-translate*side, rotation in +-rotate_deg."""

    translate: float = 0.05
    rotate_deg: float = 5.0
    brightness: tuple = (0.9, 1.1)

    def __post_init__(self):
        if not 0 <= self.translate <= 0.05:
            raise ParameterError(f"translation limit must be within 5% of side, got {self.translate}")
        if not 0 <= self.rotate_deg <= 5:
            raise ParameterError(f"rotation limit must be within 5 degrees, got {self.rotate_deg}")
        lo, hi = self.brightness
        if not 0.9 <= lo <= hi <= 1.1:
            raise ParameterError(f"brightness range must lie in [0.9, 1.1], got {self.brightness}")

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, (1.0, 1.0))


def _affine_matrix(side, dx, dy, angle_deg):
    # forward map: rotate about the image centre, then translate
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    cx = cy = side / 2.0
    rot = np.array([[c, -s], [s, c]])
    offset = np.array([cx, cy]) - rot @ np.array([cx, cy]) + np.array([dx, dy])
    return rot, offset


def _transform_box(box, rot, offset, side):
    corners = np.array([[box.x, box.y], [box.x1, box.y], [box.x, box.y1], [box.x1, box.y1]],
                       dtype=np.float64)
    moved = corners @ rot.T + offset
    # tolerate floating noise on exact integer shifts
    lo = np.floor(moved.min(axis=0) + 1e-9)
    hi = np.ceil(moved.max(axis=0) - 1e-9)
    x0, y0 = (int(v) for v in np.clip(lo, 0, side))
    x1, y1 = (int(v) for v in np.clip(hi, 0, side))
    if x1 <= x0 or y1 <= y0:
        return None
    return BBox(x0, y0, x1 - x0, y1 - y0)


def apply_affine(sample, dx=0.0, dy=0.0, angle_deg=0.0, brightness=1.0, suffix="aug"):
    """Shift/rotate/brighten ``sample``; boxes follow as axis-aligned hulls.

    Raises :class:`AugmentationRejected` if a positive loses all its boxes.
    """
    side = sample.side
    rot, offset = _affine_matrix(side, dx, dy, angle_deg)
    px = sample.pixels
    if dx or dy or angle_deg:
        # pixel centres sit at (i + 0.5); affine_transform maps output -> input
        inv = np.linalg.inv(rot)
        centre = np.array([0.5, 0.5])
        inv_offset_xy = inv @ (centre - offset) - centre
        # ndimage works in (row, col) = (y, x)
        matrix_rc = inv[::-1, ::-1]
        px = ndimage.affine_transform(px, matrix_rc, offset=inv_offset_xy[::-1],
                                      order=1, mode="constant", cval=0.0)
    if brightness != 1.0:
        px = px * brightness
    px = np.clip(px, 0.0, 1.0).astype(sample.pixels.dtype, copy=False)
    boxes = tuple(b for b in (_transform_box(b, rot, offset, side) for b in sample.boxes)
                  if b is not None)
    if sample.label == 1 and not boxes:
        raise AugmentationRejected(f"{sample.id}: every box left the frame")
    return ImageSample(f"{sample.id}_{suffix}", px, sample.label, boxes, sample.category)


def augment(sample, rng, policy=AugmentPolicy(), suffix="aug"):
    """Random affine jitter + brightness scaling drawn from ``policy``."""
    side = sample.side
    dx = rng.uniform(-policy.translate, policy.translate) * side
    dy = rng.uniform(-policy.translate, policy.translate) * side
    angle = rng.uniform(-policy.rotate_deg, policy.rotate_deg)
    gain = rng.uniform(*policy.brightness)
    return apply_affine(sample, dx, dy, angle, gain, suffix=suffix)


def expand_dataset(samples, target, rng, policy=AugmentPolicy(), max_retries=10):
    """Return ``samples`` plus augmented copies until ``target`` items exist.

    Sources are visited in a seeded shuffled order, cycling as needed; a
    rejected augmentation is retried with fresh draws.
    """
    samples = list(samples)
    if target < len(samples):
        raise ParameterError(f"target {target} smaller than the {len(samples)} inputs")
    if not samples and target:
        raise ParameterError("cannot expand an empty dataset")
    out = list(samples)
    order = rng.permutation(len(samples)) if samples else []
    k = 0
    while len(out) < target:
        src = samples[order[k % len(samples)]]
        suffix = f"aug{k // len(samples)}"
        for _ in range(max_retries):
            try:
                out.append(augment(src, rng, policy, suffix=suffix))
                break
            except AugmentationRejected:
                continue
        k += 1
    return out


def partition_sizes(n, fractions):
    """Floor of each share, remainder added to the first partition."""
    if not fractions or any(f <= 0 for f in fractions):
        raise ParameterError(f"fractions must be positive, got {fractions}")
    exact = [Fraction(f).limit_denominator(10**9) for f in fractions]
    if sum(exact) != 1:
        raise ParameterError(f"fractions must sum to 1, got {fractions}")
    sizes = [math.floor(n * f) for f in exact]
    sizes[0] += n - sum(sizes)
    return sizes


def split(items, fractions=(0.8, 0.2), seed=0):
    """Seeded shuffle of ``items`` (a manifest or a list) cut into partitions."""
    from .manifest import DatasetManifest

    seq = items.records if isinstance(items, DatasetManifest) else list(items)
    sizes = partition_sizes(len(seq), fractions)
    order = np.random.default_rng(seed).permutation(len(seq))
    parts, start = [], 0
    for size in sizes:
        chunk = [seq[i] for i in order[start:start + size]]
        start += size
        parts.append(items.subset(chunk) if isinstance(items, DatasetManifest) else chunk)
    return parts
