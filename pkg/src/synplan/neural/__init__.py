from synplan.neural.knn import KnnIndex, brute_force_knn, knn_build, knn_query
from synplan.neural.mlp import MLP, Adam, softmax
from synplan.neural.model import (
    KINDS,
    TAGS,
    ModelDims,
    PolicyModel,
    init_model,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from synplan.neural.train import TrainConfig, TrainHistory, accuracy, train, train_network

__all__ = [
    "KINDS",
    "MLP",
    "TAGS",
    "Adam",
    "KnnIndex",
    "ModelDims",
    "PolicyModel",
    "TrainConfig",
    "TrainHistory",
    "accuracy",
    "brute_force_knn",
    "init_model",
    "knn_build",
    "knn_query",
    "load_checkpoint",
    "read_checkpoint_header",
    "save_checkpoint",
    "softmax",
    "train",
    "train_network",
]
