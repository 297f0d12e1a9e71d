"""seqcascade: cascaded multi-task sequence annotation.

A single encoder feeds a chain of attention decoders; each task's decoder
attends to the encoder and to every previous decoder, and all tasks are
trained jointly by summing their cross-entropy losses.
"""

from .config import ModelConfig
from .corpus import LevelSchema, SequenceExample, Vocabulary
from .model import CascadeModel, LossReport, build_model

__version__ = "0.1.0"

__all__ = [
    "CascadeModel",
    "LevelSchema",
    "LossReport",
    "ModelConfig",
    "SequenceExample",
    "Vocabulary",
    "build_model",
    "__version__",
]
