"""Exception types shared across the package.

The CLI maps these onto exit codes, so keep the hierarchy flat.
"""


class CascadeError(Exception):
    """Base class for every error raised deliberately by this package."""


class DimensionError(CascadeError, ValueError):
    """Array shapes do not agree with what an operation needs."""


class ParameterError(CascadeError, ValueError):
    """A scalar argument is outside its allowed range."""


class ConfigError(CascadeError, ValueError):
    """Invalid model, geometry or run configuration."""


class LoadError(CascadeError):
    """A file on disk could not be parsed or failed validation."""


class CheckpointError(LoadError):
    """A checkpoint file is truncated, of the wrong version, or mismatched."""


class MissingPrerequisiteError(CascadeError):
    """A pipeline step needs an artifact that has not been produced yet."""


class AugmentationRejected(CascadeError):
    """An augmentation pushed every lesion box of a positive out of frame."""


class UndefinedMetricError(CascadeError, ValueError):
    """The metric has no value for this input (e.g. a single-class AUROC)."""


class NumericError(CascadeError, FloatingPointError):
    """Training produced a non-finite loss."""
