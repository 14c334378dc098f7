"""Cross-modal fusion model, pyramid heads, decoding, and losses."""

from .checkpoint import load_checkpoint, save_checkpoint
from .decode import decode_windows
from .losses import assign_targets, loss_localization
from .model import (
    CrossModalModel,
    DenseOutputs,
    FusionConfig,
    MomentPrediction,
    PyramidFeatures,
)

__all__ = [
    "CrossModalModel",
    "DenseOutputs",
    "FusionConfig",
    "MomentPrediction",
    "PyramidFeatures",
    "assign_targets",
    "decode_windows",
    "load_checkpoint",
    "loss_localization",
    "save_checkpoint",
]
