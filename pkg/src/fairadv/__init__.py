"""Adversarial removal of a sensitive attribute from a learned representation,
with experiments on how the adversary's data composition shapes fairness."""

from .data import AdvDataSpec, Dataset, prepare_adult
from .metrics import FairnessReport, aggregate, fairness_report
from .model import TrainConfig, TwoHeadModel, calibrate_threshold, classify, predict_prob, train

__all__ = [
    "AdvDataSpec",
    "Dataset",
    "FairnessReport",
    "TrainConfig",
    "TwoHeadModel",
    "aggregate",
    "calibrate_threshold",
    "classify",
    "fairness_report",
    "predict_prob",
    "prepare_adult",
    "train",
]
