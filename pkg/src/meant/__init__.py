"""Multimodal temporal-attention model and MACD lag-window dataset pipeline."""

from .fusion import MeantModel, ModelConfig
from .tensor import Tensor, grad_check, no_grad
from .training import TrainConfig, evaluate, train

__all__ = ["MeantModel", "ModelConfig", "Tensor", "TrainConfig",
           "evaluate", "grad_check", "no_grad", "train"]

__version__ = "0.1.0"
