"""Score-threshold accuracy estimators that need no training.

Per-category estimates condition on the predicted (argmax) category, since
labels are unavailable at evaluation time. A category nobody is predicted as
gets an undefined (NaN) estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AccuracyVector, ConfidenceMatrix

METHODS = ("ps", "es", "ac")


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "ac"
    tau1: float = 0.8
    tau2: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "method", self.method.lower())
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline {self.method!r}; expected one of {METHODS}")
        if not (0.0 < self.tau1 < 1.0 and 0.0 < self.tau2 < 1.0):
            raise ValueError("thresholds must lie in (0, 1)")

    @property
    def label(self) -> str:
        if self.method == "ps":
            return f"PS(tau1={self.tau1:g})"
        if self.method == "es":
            return f"ES(tau2={self.tau2:g})"
        return "AC"


def _by_prediction(matrix: ConfidenceMatrix, score: np.ndarray) -> AccuracyVector:
    pred = matrix.predictions
    C = matrix.num_categories
    counts = np.bincount(pred, minlength=C)
    # fsum is correctly rounded, hence independent of instance order
    per = np.full(C, np.nan)
    for c in np.flatnonzero(counts):
        per[c] = math.fsum(score[pred == c]) / counts[c]
    return AccuracyVector(per, math.fsum(score) / matrix.num_instances)


def prediction_score(matrix: ConfidenceMatrix, tau1: float = 0.8) -> AccuracyVector:
    """Fraction of instances whose top confidence reaches ``tau1``."""
    top = matrix.values.max(axis=1)
    return _by_prediction(matrix, (top >= tau1).astype(float))


def normalized_entropy(matrix: ConfidenceMatrix) -> np.ndarray:
    z = matrix.values
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(z > 0, z * np.log(z), 0.0)
    return -plogp.sum(axis=1) / np.log(matrix.num_categories)


def entropy_score(matrix: ConfidenceMatrix, tau2: float = 0.2) -> AccuracyVector:
    """Fraction of instances whose entropy (natural log, divided by ln C) is at most ``tau2``."""
    return _by_prediction(matrix, (normalized_entropy(matrix) <= tau2).astype(float))


def average_confidence(matrix: ConfidenceMatrix) -> AccuracyVector:
    return _by_prediction(matrix, matrix.values.max(axis=1))


def run_baseline(matrix: ConfidenceMatrix, cfg: BaselineConfig) -> AccuracyVector:
    if cfg.method == "ps":
        return prediction_score(matrix, cfg.tau1)
    if cfg.method == "es":
        return entropy_score(matrix, cfg.tau2)
    return average_confidence(matrix)
