"""scikit-learn style wrappers around the two training phases.

All estimators take whole square images ``X`` of shape (N, H, H) with values
in [0, 1]; lesion boxes are passed to ``fit`` as a per-image list of
``(x, y, w, h)`` tuples.
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data.transforms import resize_area, scale_boxes
from .exceptions import ParameterError
from .models import Cascade, FusionNetConfig, PatchNetConfig
from .nn.optim import LrSchedule
from .patching import WindowGrid, build_heatmap
from .training import TrainConfig, compute_heatmaps, train_stage1, train_stage2
from .validation import check_boxes, check_images, check_labels, to_samples


def _two_columns(p):
    p = np.asarray(p, dtype=np.float64)
    return np.column_stack([1 - p, p])


class _TrainParams:
    def _train_config(self, epochs):
        return TrainConfig(
            batch_size=self.batch_size,
            schedule=LrSchedule(self.base_lr, self.gamma, self.period_epochs),
            epochs=epochs, seed=self.random_state,
            patches_per_image=self.patches_per_image, val_fraction=self.val_fraction,
            label_threshold=self.label_threshold)

    def _net_config(self, input_side):
        return PatchNetConfig(input_side=input_side, base_channels=self.base_channels,
                              blocks=self.blocks, extra_conv=self.extra_conv,
                              dropout_rate=self.dropout_rate)


class PatchClassifier(_TrainParams, ClassifierMixin, BaseEstimator):
    """Stage-1 patch classifier.

    ``fit`` takes whole images and boxes and samples labelled patches itself;
    ``predict``/``predict_proba`` take patches of side ``input_side``.
    """

    def __init__(self, input_side=32, base_channels=8, blocks=3, extra_conv=True,
                 dropout_rate=0.5, epochs=10, batch_size=16, base_lr=1e-5, gamma=0.9,
                 period_epochs=50, patches_per_image=4, val_fraction=0.2,
                 label_threshold=0.10, random_state=0):
        self.input_side = input_side
        self.base_channels = base_channels
        self.blocks = blocks
        self.extra_conv = extra_conv
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.gamma = gamma
        self.period_epochs = period_epochs
        self.patches_per_image = patches_per_image
        self.val_fraction = val_fraction
        self.label_threshold = label_threshold
        self.random_state = random_state

    def fit(self, X, y, boxes=None):
        X = check_images(X)
        if X.shape[1] < self.input_side:
            raise ParameterError(f"images ({X.shape[1]}) smaller than patches ({self.input_side})")
        samples = to_samples(X, y, boxes)
        self.model_, self.history_ = train_stage1(
            self._train_config(self.epochs), samples, self._net_config(self.input_side))
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return _two_columns(self.model_.predict_proba(check_images(X, self.input_side)))

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


class HeatmapTransformer(TransformerMixin, BaseEstimator):
    """Images -> flattened sliding-window heatmaps from a fitted patch model.

    ``output`` selects the binary grid ("bits") or the raw probabilities.
    """

    def __init__(self, patch_model=None, full_side=64, patch_side=32, stride=2,
                 threshold=0.5, output="bits"):
        self.patch_model = patch_model
        self.full_side = full_side
        self.patch_side = patch_side
        self.stride = stride
        self.threshold = threshold
        self.output = output

    def _net(self):
        m = self.patch_model
        if isinstance(m, PatchClassifier):
            check_is_fitted(m, "model_")
            return m.model_
        if m is None or not hasattr(m, "predict_proba"):
            raise ParameterError("patch_model must be a fitted PatchClassifier or PatchNet")
        return m

    def fit(self, X=None, y=None):
        if self.output not in ("bits", "probs"):
            raise ParameterError(f"output must be 'bits' or 'probs', got {self.output!r}")
        self.grid_ = WindowGrid(self.full_side, self.patch_side, self.stride)
        self._net()
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        X = check_images(X)
        net = self._net()
        maps = [build_heatmap(net, resize_area(img, self.full_side), self.grid_,
                              self.threshold) for img in X]
        key = "bits" if self.output == "bits" else "probs"
        g = self.grid_.grid_side
        return np.stack([getattr(h, key) for h in maps]).reshape(len(X), g * g).astype(
            np.float64)


class CascadeClassifier(_TrainParams, ClassifierMixin, BaseEstimator):
    """Both phases end to end: patch model, heatmaps, fusion model."""

    def __init__(self, full_side=64, patch_side=32, stride=2, input_side=32, base_channels=4,
                 blocks=3, extra_conv=True, dropout_rate=0.2, heatmap_channels=8,
                 heatmap_threshold=0.5, stage1_epochs=12, stage2_epochs=20, batch_size=16,
                 base_lr=1e-3, gamma=0.9, period_epochs=50, patches_per_image=4,
                 val_fraction=0.2, label_threshold=0.10, threshold=0.5, random_state=0):
        self.full_side = full_side
        self.patch_side = patch_side
        self.stride = stride
        self.input_side = input_side
        self.base_channels = base_channels
        self.blocks = blocks
        self.extra_conv = extra_conv
        self.dropout_rate = dropout_rate
        self.heatmap_channels = heatmap_channels
        self.heatmap_threshold = heatmap_threshold
        self.stage1_epochs = stage1_epochs
        self.stage2_epochs = stage2_epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.gamma = gamma
        self.period_epochs = period_epochs
        self.patches_per_image = patches_per_image
        self.val_fraction = val_fraction
        self.label_threshold = label_threshold
        self.threshold = threshold
        self.random_state = random_state

    def _working(self, X, boxes=None):
        side = X.shape[1]
        if side % self.full_side:
            raise ParameterError(f"image side {side} is not a multiple of {self.full_side}")
        small = np.stack([resize_area(img, self.full_side) for img in X])
        if boxes is None:
            return small, None
        return small, [scale_boxes(bs, side, self.full_side) for bs in boxes]

    def fit(self, X, y, boxes=None):
        X = check_images(X)
        y = check_labels(y, len(X))
        grid = WindowGrid(self.full_side, self.patch_side, self.stride)
        if self.full_side % self.input_side:
            raise ParameterError("input_side must divide full_side")
        small, small_boxes = self._working(X, check_boxes(boxes, y, X.shape[1]))
        samples = to_samples(small, y, small_boxes)
        stage1, self.stage1_history_ = train_stage1(
            self._train_config(self.stage1_epochs), samples, self._net_config(self.patch_side))
        maps = compute_heatmaps(stage1, samples, grid, self.heatmap_threshold)
        fusion = FusionNetConfig(grid.grid_side, self.heatmap_channels,
                                 self._net_config(self.input_side), self.dropout_rate)
        stage2, self.stage2_history_ = train_stage2(
            self._train_config(self.stage2_epochs), samples, stage1, fusion, grid, heatmaps=maps)
        self.cascade_ = Cascade(stage1, stage2, grid, self.heatmap_threshold, self.threshold)
        self.classes_ = np.array([0, 1])
        return self

    def heatmaps(self, X):
        check_is_fitted(self, "cascade_")
        small, _ = self._working(check_images(X))
        return [self.cascade_.heatmap(img) for img in small]

    def predict_proba(self, X):
        check_is_fitted(self, "cascade_")
        small, _ = self._working(check_images(X))
        return _two_columns(self.cascade_.predict_proba(list(small)))

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(np.int64)
