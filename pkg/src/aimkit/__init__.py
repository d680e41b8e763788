"""Desk-scale joint disentangled representation learning and cross-age
face synthesis, trained adversarially on a procedural synthetic dataset."""

__version__ = "0.1.0"

from . import autodiff, errors, evaluator, layers, losses, networks, synthdata, trainer
from .autodiff import Tape, Tensor
from .losses import LossReport, LossWeights
from .networks import AIMModel, ModelConfig

__all__ = [
    "AIMModel", "LossReport", "LossWeights", "ModelConfig", "Tape", "Tensor",
    "autodiff", "errors", "evaluator", "layers", "losses", "networks",
    "synthdata", "trainer",
]
