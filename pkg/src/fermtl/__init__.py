"""Multi-task facial expression recognition at desk scale.

A dual-branch network (attention-gated emotion branch plus a
landmark-supervised appearance branch) fused by shared fully connected
layers, trained with weighted cross-entropy and landmark MSE jointly, and
deployed as a bagged soft-voting ensemble scored by macro F1 over six
expression classes.
"""

from .constants import EXPRESSIONS, NUM_CLASSES, NUM_LANDMARKS
from .errors import (
    ConfigurationError,
    DimensionError,
    FermtlError,
    ManifestError,
    TrainingDiverged,
)

__version__ = "0.1.0"

__all__ = [
    "EXPRESSIONS",
    "NUM_CLASSES",
    "NUM_LANDMARKS",
    "FermtlError",
    "DimensionError",
    "ConfigurationError",
    "ManifestError",
    "TrainingDiverged",
    "__version__",
]
