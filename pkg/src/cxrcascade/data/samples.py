from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..exceptions import LoadError, ParameterError

CATEGORIES = ("pneumonia", "other_disease", "normal")


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box in integer pixel coordinates; covers [x, x+w) x [y, y+h)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ParameterError(f"box origin must be non-negative: {self}")
        if self.w <= 0 or self.h <= 0:
            raise ParameterError(f"box extent must be positive: {self}")

    @property
    def x1(self):
        return self.x + self.w

    @property
    def y1(self):
        return self.y + self.h

    @property
    def area(self):
        return self.w * self.h

    @property
    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def within(self, side):
        return self.x1 <= side and self.y1 <= side

    def intersects(self, x, y, w, h):
        return self.x < x + w and x < self.x1 and self.y < y + h and y < self.y1

    def to_text(self):
        return f"{self.x},{self.y},{self.w},{self.h}"

    @classmethod
    def parse(cls, text):
        parts = text.split(",")
        if len(parts) != 4:
            raise ValueError(f"box needs 4 comma-separated integers, got {text!r}")
        return cls(*(int(p) for p in parts))


@dataclass
class ImageSample:
    id: str
    pixels: np.ndarray
    label: int
    boxes: Tuple[BBox, ...] = field(default_factory=tuple)
    category: Optional[str] = None

    def __post_init__(self):
        self.boxes = tuple(self.boxes)
        self.label = int(self.label)

    @property
    def side(self):
        return self.pixels.shape[-1]

    def validate(self, require_square=True):
        check_record(self.id, self.label, self.boxes, self.category, side=None)
        if self.pixels.ndim != 2:
            raise LoadError(f"{self.id}: pixels must be a 2-D grayscale array")
        h, w = self.pixels.shape
        if require_square and h != w:
            raise LoadError(f"{self.id}: image is {h}x{w}, pipeline needs square inputs")
        for b in self.boxes:
            if b.x1 > w or b.y1 > h:
                raise LoadError(f"{self.id}: box {b.to_text()} leaves the {w}x{h} image")
        return self


def check_record(rec_id, label, boxes, category, side=None):
    """Raise :class:`LoadError` naming ``rec_id`` if the record breaks an invariant."""
    if label not in (0, 1):
        raise LoadError(f"{rec_id}: label must be 0 or 1, got {label!r}")
    if label == 1 and not boxes:
        raise LoadError(f"{rec_id}: label 1 requires at least one box")
    if label == 0 and boxes:
        raise LoadError(f"{rec_id}: label 0 must not carry boxes")
    if category is not None:
        if category not in CATEGORIES:
            raise LoadError(f"{rec_id}: unknown category {category!r}")
        if (category == "pneumonia") != (label == 1):
            raise LoadError(f"{rec_id}: category {category!r} disagrees with label {label}")
    if side is not None:
        for b in boxes:
            if not b.within(side):
                raise LoadError(f"{rec_id}: box {b.to_text()} exceeds image side {side}")
