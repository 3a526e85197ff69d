"""Two-stage sliding-window CNN cascade for chest radiograph classification."""
from .estimators import CascadeClassifier, HeatmapTransformer, PatchClassifier
from .evaluation import auroc, confusion, prf1, reader_compare
from .exceptions import (CascadeError, CheckpointError, ConfigError, DimensionError,
                         LoadError, MissingPrerequisiteError, NumericError, ParameterError)
from .models import (Cascade, FusionNet, FusionNetConfig, PatchNet, PatchNetConfig,
                     load_checkpoint, predict, save_checkpoint)
from .patching import Heatmap, WindowGrid, build_heatmap, overlap_fraction, window_grid
from .training import TrainConfig, train_stage1, train_stage2

__version__ = "0.1.0"
