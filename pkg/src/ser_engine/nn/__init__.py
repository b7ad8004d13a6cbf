from .checkpoint import load_checkpoint, save_checkpoint
from .layers import cross_entropy, softmax
from .model import Model, ModelConfig, build_model
from .optim import AdamState, adam_step
from .training import TrainHistory, evaluate_model, predict, train

__all__ = [
    "AdamState", "Model", "ModelConfig", "TrainHistory", "adam_step", "build_model",
    "cross_entropy", "evaluate_model", "load_checkpoint", "predict", "save_checkpoint",
    "softmax", "train",
]
