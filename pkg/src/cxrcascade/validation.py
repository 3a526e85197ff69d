"""Input checks shared by the estimator wrappers."""
import numpy as np
from sklearn.utils import check_array, check_consistent_length

from .data.samples import BBox, ImageSample
from .exceptions import DimensionError, ParameterError


def check_images(X, side=None, dtype=np.float32):
    """Return ``X`` as a finite (N, H, H) array with values in [0, 1]."""
    X = check_array(X, allow_nd=True, dtype=dtype, ensure_min_samples=1)
    if X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise DimensionError(f"expected square images of shape (N, H, H), got {X.shape}")
    if side is not None and X.shape[1] != side:
        raise DimensionError(f"expected {side}x{side} images, got {X.shape[1]}x{X.shape[2]}")
    if X.min() < 0 or X.max() > 1:
        raise ParameterError("pixel values must lie in [0, 1]")
    return X


def check_labels(y, n=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError(f"labels must be 1-D, got shape {y.shape}")
    if n is not None:
        check_consistent_length(np.empty(n), y)
    if not np.all((y == 0) | (y == 1)):
        raise ParameterError("labels must be 0 or 1")
    return y.astype(np.int64)


def check_boxes(boxes, labels, side):
    """Per-image box tuples; ``None`` means no boxes anywhere."""
    n = len(labels)
    if boxes is None:
        boxes = [()] * n
    boxes = list(boxes)
    check_consistent_length(np.empty(n), boxes)
    out = []
    for i, (bs, y) in enumerate(zip(boxes, labels)):
        bs = tuple(b if isinstance(b, BBox) else BBox(*b) for b in bs)
        if any(not b.within(side) for b in bs):
            raise ParameterError(f"image {i}: box outside the {side}x{side} frame")
        if bs and not y:
            raise ParameterError(f"image {i}: negative label carries boxes")
        out.append(bs)
    return out


def to_samples(X, y, boxes=None):
    y = check_labels(y, len(X))
    boxes = check_boxes(boxes, y, X.shape[1])
    width = len(str(max(len(X) - 1, 0)))
    return [ImageSample(f"img{i:0{width}d}", X[i], int(y[i]), boxes[i],
                        "pneumonia" if y[i] else None) for i in range(len(X))]
