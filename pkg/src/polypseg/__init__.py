"""Binary segmentation engine with a dual-attention pyramid bottleneck.

The public surface re-exports the pieces most callers need; submodules stay
importable for everything else (polypseg.convops, polypseg.verification, ...).
"""

from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    NumericError,
    PolypsegError,
    StateError,
    ValidationError,
)
from .gradcheck import grad_check
from .losses import FocalParams, LossWeights, bce_loss, dice_loss, focal_loss, hybrid_loss
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    binarize,
    compute_metrics,
    confusion_counts,
    macro_average,
    xor_error_map,
)
from .network import Model, ModelConfig, model_init
from .synth import Sample, SynthConfig, generate_sample
from .tensor import Tape, Tensor, backward
from .trainer import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DimensionError", "FormatError", "NumericError",
    "PolypsegError", "StateError", "ValidationError",
    "grad_check",
    "FocalParams", "LossWeights", "bce_loss", "dice_loss", "focal_loss", "hybrid_loss",
    "ConfusionCounts", "MetricsReport", "binarize", "compute_metrics",
    "confusion_counts", "macro_average", "xor_error_map",
    "Model", "ModelConfig", "model_init",
    "Sample", "SynthConfig", "generate_sample",
    "Tape", "Tensor", "backward",
    "TrainConfig", "evaluate", "load_checkpoint", "model_from_checkpoint",
    "save_checkpoint", "train",
    "__version__",
]
