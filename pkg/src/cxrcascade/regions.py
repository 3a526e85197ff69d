"""Review-area geometry: the apex band and the behind-the-heart zone."""
from dataclasses import asdict, dataclass

from .exceptions import ParameterError

REVIEW_AREA = "review_area"
OTHER = "other"


@dataclass(frozen=True)
class RegionRule:
    """Normalised image-frame intervals (image right = patient left)."""

    apex_y: tuple = (0.0, 0.20)
    heart_x: tuple = (0.55, 0.90)
    heart_y: tuple = (0.55, 0.95)

    def __post_init__(self):
        for name in ("apex_y", "heart_x", "heart_y"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ParameterError(f"{name} must be an interval inside [0, 1], got {(lo, hi)}")

    def in_apex(self, u, v):
        return self.apex_y[0] <= v <= self.apex_y[1]

    def in_heart(self, u, v):
        return (self.heart_x[0] <= u <= self.heart_x[1]
                and self.heart_y[0] <= v <= self.heart_y[1])

    def is_review(self, u, v):
        return self.in_apex(u, v) or self.in_heart(u, v)

    def describe(self):
        return {f"region.{k}": f"{v[0]:g},{v[1]:g}" for k, v in asdict(self).items()}


def region_of(boxes, side, rule=RegionRule()):
    """``review_area`` if any box centre falls in the apex band or heart zone."""
    if not boxes:
        raise ParameterError("region_of needs at least one box (positives only)")
    for b in boxes:
        cx, cy = b.center
        if rule.is_review(cx / side, cy / side):
            return REVIEW_AREA
    return OTHER
