"""Predict a classifier's overall and per-category accuracy on unlabeled data
from confidence-group statistics of its softmax outputs."""

from .data import (AccuracyVector, ConfidenceMatrix, DataError, MetaSet, compute_accuracy,
                   load_confidence_csv, load_corpus, save_corpus)
from .representation import GroupConfig, SetRepresentation, extract_representation
from .regressor import ModelConfig, TrainConfig, load_model, predict, save_model, train

__version__ = "0.1.0"

__all__ = [
    "AccuracyVector", "ConfidenceMatrix", "DataError", "MetaSet", "compute_accuracy",
    "load_confidence_csv", "load_corpus", "save_corpus",
    "GroupConfig", "SetRepresentation", "extract_representation",
    "ModelConfig", "TrainConfig", "load_model", "predict", "save_model", "train",
]
