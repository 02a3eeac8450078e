"""Trainable decision functions and their normalised test statistics."""

from .cnn import CnnD3F, cnn_loss_and_grad, cnn_score, train_cnn
from .mixture import (LlrScorer, MixtureD3F, RnReport, d3f_statistic_iid,
                      d3f_statistic_mixture, rn_condition_check, train_mixture)
from .mlp import MlpD3F, TrainConfig, TrainingDiverged, cross_entropy, loss_and_grad, train_mlp
from .persist import load_weights, save_weights

__all__ = [
    "CnnD3F", "LlrScorer", "MixtureD3F", "MlpD3F", "RnReport", "TrainConfig",
    "TrainingDiverged", "cnn_loss_and_grad", "cnn_score", "cross_entropy",
    "d3f_statistic_iid", "d3f_statistic_mixture", "load_weights", "loss_and_grad",
    "rn_condition_check", "save_weights", "train_cnn", "train_mixture", "train_mlp",
]
