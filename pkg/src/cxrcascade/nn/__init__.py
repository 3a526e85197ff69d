"""Minimal numpy neural-network core: layers, BCE, Adam, gradient checks."""
from .functional import (activation, bce_loss, conv2d, dense, dropout, maxpool2,
                         sigmoid)
from .gradcheck import grad_check
from .layers import (Activation, Conv2D, Dense, Dropout, Flatten, GlobalAvgPool,
                     MaxPool2, Sequential)
from .optim import Adam, AdamState, LrSchedule, adam_step, lr_at_epoch

__all__ = [
    "Activation", "Adam", "AdamState", "Conv2D", "Dense", "Dropout", "Flatten",
    "GlobalAvgPool", "LrSchedule", "MaxPool2", "Sequential", "activation",
    "adam_step", "bce_loss", "conv2d", "dense", "dropout", "grad_check",
    "lr_at_epoch", "maxpool2", "sigmoid",
]
