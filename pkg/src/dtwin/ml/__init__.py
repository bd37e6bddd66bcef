from .metrics import Metrics
from .model import (
    KINDS,
    Hyperparams,
    TrainedModel,
    evaluate,
    load_model,
    model_from_bytes,
    model_to_bytes,
    predict,
    save_model,
    scores_and_labels,
    train,
)
from .tree import train_decision_tree

__all__ = [
    "KINDS",
    "Hyperparams",
    "Metrics",
    "TrainedModel",
    "evaluate",
    "load_model",
    "model_from_bytes",
    "model_to_bytes",
    "predict",
    "save_model",
    "scores_and_labels",
    "train",
    "train_decision_tree",
]
