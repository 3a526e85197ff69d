"""Patch sampling, the overlap labelling rule and sliding-window heatmaps."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import LoadError, ParameterError


@dataclass(frozen=True)
class PatchRect:
    x: int
    y: int
    side: int

    def inside(self, full_side):
        return (0 <= self.x and 0 <= self.y
                and self.x + self.side <= full_side and self.y + self.side <= full_side)


@dataclass(frozen=True)
class WindowGrid:
    full_side: int
    patch_side: int
    stride: int

    def __post_init__(self):
        if self.patch_side < 1 or self.stride < 1:
            raise ParameterError("patch_side and stride must be positive")
        if self.patch_side > self.full_side:
            raise ParameterError(
                f"patch side {self.patch_side} exceeds image side {self.full_side}")
        if (self.full_side - self.patch_side) % self.stride:
            raise ParameterError(
                f"({self.full_side} - {self.patch_side}) is not divisible by stride {self.stride}")

    @property
    def grid_side(self):
        return (self.full_side - self.patch_side) // self.stride + 1

    def offsets(self):
        return [i * self.stride for i in range(self.grid_side)]

    def rects(self):
        """Row-major: the outer index walks y offsets, the inner one x offsets."""
        offs = self.offsets()
        return [PatchRect(x, y, self.patch_side) for y in offs for x in offs]

    def windows(self, image):
        """All windows of a ``(full_side, full_side)`` image, shape (G*G, P, P)."""
        if image.shape != (self.full_side, self.full_side):
            raise ParameterError(
                f"image shape {image.shape} does not match grid side {self.full_side}")
        win = sliding_window_view(image, (self.patch_side, self.patch_side))
        win = win[::self.stride, ::self.stride]
        return win.reshape(-1, self.patch_side, self.patch_side)


def window_grid(full_side, patch_side, stride):
    return WindowGrid(full_side, patch_side, stride)


def union_mask(boxes):
    """Rasterised union of ``boxes`` and the (x0, y0) origin of the mask."""
    x0 = min(b.x for b in boxes)
    y0 = min(b.y for b in boxes)
    x1 = max(b.x1 for b in boxes)
    y1 = max(b.y1 for b in boxes)
    mask = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    for b in boxes:
        mask[b.y - y0:b.y1 - y0, b.x - x0:b.x1 - x0] = True
    return mask, x0, y0


def _masked_fraction(mask, x0, y0, total, rect):
    h, w = mask.shape
    cx0 = max(rect.x - x0, 0)
    cy0 = max(rect.y - y0, 0)
    cx1 = min(rect.x + rect.side - x0, w)
    cy1 = min(rect.y + rect.side - y0, h)
    if cx1 <= cx0 or cy1 <= cy0:
        return 0.0
    return int(mask[cy0:cy1, cx0:cx1].sum()) / total


def overlap_fraction(boxes, rect):
    """Share of the box union's pixel area that lies inside ``rect``."""
    if not boxes:
        return 0.0
    mask, x0, y0 = union_mask(boxes)
    return _masked_fraction(mask, x0, y0, int(mask.sum()), rect)


def label_patch(fraction, threshold=0.10):
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    return int(fraction >= threshold)


def sample_rects(full_side, patch_side, count, rng):
    hi = full_side - patch_side + 1
    xs = rng.integers(0, hi, size=count)
    ys = rng.integers(0, hi, size=count)
    return [PatchRect(int(x), int(y), patch_side) for x, y in zip(xs, ys)]


def sample_patches(sample, count, rng, patch_side, threshold=0.10):
    """Draw ``count`` uniform random patches and label each by the overlap rule.

    Returns ``(patches, labels, rects)`` with patches shaped (count, P, P).
    """
    full = sample.side
    if patch_side > full:
        raise ParameterError(f"patch side {patch_side} exceeds image side {full}")
    rects = sample_rects(full, patch_side, count, rng)
    patches = np.empty((count, patch_side, patch_side), dtype=sample.pixels.dtype)
    labels = np.zeros(count, dtype=np.int64)
    if sample.label == 1:
        mask, x0, y0 = union_mask(sample.boxes)
        total = int(mask.sum())
    for k, r in enumerate(rects):
        patches[k] = sample.pixels[r.y:r.y + patch_side, r.x:r.x + patch_side]
        if sample.label == 1:
            labels[k] = label_patch(_masked_fraction(mask, x0, y0, total, r), threshold)
    return patches, labels, rects


@dataclass
class Heatmap:
    probs: np.ndarray
    bits: np.ndarray
    threshold: float = 0.5

    @property
    def grid_side(self):
        return self.probs.shape[0]

    @classmethod
    def from_probs(cls, probs, threshold=0.5):
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs, (probs >= threshold).astype(np.uint8), threshold)

    def lit_rects(self, grid):
        return [r for r, bit in zip(grid.rects(), self.bits.reshape(-1)) if bit]


def window_probabilities(patch_model, image, grid):
    if getattr(patch_model, "input_side", grid.patch_side) != grid.patch_side:
        raise ParameterError(
            f"model input side {patch_model.input_side} != grid patch side {grid.patch_side}")
    probs = np.asarray(patch_model.predict_proba(grid.windows(image)), dtype=np.float64)
    return probs.reshape(grid.grid_side, grid.grid_side)


def build_heatmap(patch_model, image, grid, threshold=0.5):
    """Run the stage-1 model on every window of ``image``.

    ``patch_model`` needs ``predict_proba(patches) -> (n,)`` and, optionally,
    an ``input_side`` attribute that must equal ``grid.patch_side``.
    """
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    return Heatmap.from_probs(window_probabilities(patch_model, image, grid), threshold)


# text export ---------------------------------------------------------------


def heatmap_paths(directory, sample_id):
    directory = Path(directory)
    return directory / f"{sample_id}.probs.txt", directory / f"{sample_id}.bits.txt"


def write_heatmap(heatmap, directory, sample_id):
    probs_path, bits_path = heatmap_paths(directory, sample_id)
    probs_path.parent.mkdir(parents=True, exist_ok=True)
    probs_path.write_text(
        "\n".join(" ".join(f"{p:.6f}" for p in row) for row in heatmap.probs) + "\n")
    bits_path.write_text("\n".join(" ".join(str(int(b)) for b in row) for row in heatmap.bits)
                         + "\n")
    return probs_path, bits_path


def read_heatmap(directory, sample_id, threshold=0.5):
    probs_path, bits_path = heatmap_paths(directory, sample_id)
    try:
        probs = np.loadtxt(probs_path, ndmin=2)
        bits = np.loadtxt(bits_path, ndmin=2, dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise LoadError(f"heatmap for {sample_id}: {exc}") from None
    if probs.shape != bits.shape or probs.shape[0] != probs.shape[1]:
        raise LoadError(f"heatmap for {sample_id}: inconsistent grids {probs.shape}/{bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        raise LoadError(f"heatmap for {sample_id}: bit grid holds values other than 0/1")
    return Heatmap(probs, bits.astype(np.uint8), threshold)
