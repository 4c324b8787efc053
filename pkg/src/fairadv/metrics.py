"""Accuracy and group fairness metrics from per-group confusion counts.

Group z=1 is Female. Positive class is y=1 (income >50K).
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, fields
from typing import Dict, List, Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """A rate whose denominator is zero."""


@dataclass(frozen=True)
class GroupConfusion:
    """Confusion counts indexed by group: ``tp[z]`` etc. for z in {0, 1}."""

    tp: tuple
    fp: tuple
    tn: tuple
    fn: tuple

    def n(self, z: int) -> int:
        return self.tp[z] + self.fp[z] + self.tn[z] + self.fn[z]

    @property
    def total(self) -> int:
        return self.n(0) + self.n(1)


def confusion(predictions, y, z) -> GroupConfusion:
    pred = np.asarray(predictions).astype(np.int64)
    y = np.asarray(y).astype(np.int64)
    z = np.asarray(z).astype(np.int64)
    if not (pred.shape == y.shape == z.shape):
        raise ValueError(f"length mismatch: {pred.shape}, {y.shape}, {z.shape}")
    # cell code: 4*z + 2*y + pred
    counts = np.bincount(4 * z + 2 * y + pred, minlength=8)
    tn = (int(counts[0]), int(counts[4]))
    fp = (int(counts[1]), int(counts[5]))
    fn = (int(counts[2]), int(counts[6]))
    tp = (int(counts[3]), int(counts[7]))
    return GroupConfusion(tp=tp, fp=fp, tn=tn, fn=fn)


def confusion_for(predictions, examples) -> GroupConfusion:
    """``confusion`` over a Dataset or a sequence of Example."""
    if hasattr(examples, "y") and hasattr(examples, "z"):
        return confusion(predictions, examples.y, examples.z)
    return confusion(predictions, [e.y for e in examples], [e.z for e in examples])


def prob_true(conf: GroupConfusion, z: int) -> float:
    """P(Yhat=1 | Z=z)."""
    n = conf.n(z)
    if n == 0:
        raise UndefinedMetricError(f"group z={z} is empty")
    return (conf.tp[z] + conf.fp[z]) / n


def prob_correct(conf: GroupConfusion, y: int, z: int) -> float:
    """P(Yhat=y | Y=y, Z=z)."""
    if y == 1:
        num, den = conf.tp[z], conf.tp[z] + conf.fn[z]
    else:
        num, den = conf.tn[z], conf.tn[z] + conf.fp[z]
    if den == 0:
        raise UndefinedMetricError(f"no examples with y={y} in group z={z}")
    return num / den


def gaps(conf: GroupConfusion):
    """Return ``(parity_gap, equality_gap_low, equality_gap_high)``."""
    parity = abs(prob_true(conf, 1) - prob_true(conf, 0))
    eq_low = abs(prob_correct(conf, 0, 1) - prob_correct(conf, 0, 0))
    eq_high = abs(prob_correct(conf, 1, 1) - prob_correct(conf, 1, 0))
    return parity, eq_low, eq_high


def accuracy(conf: GroupConfusion) -> float:
    if conf.total == 0:
        raise UndefinedMetricError("no examples")
    return (sum(conf.tp) + sum(conf.tn)) / conf.total


@dataclass(frozen=True)
class FairnessReport:
    accuracy: float
    prob_true_m: float
    prob_true_f: float
    prob_correct_low_m: float
    prob_correct_low_f: float
    prob_correct_high_m: float
    prob_correct_high_f: float
    parity_gap: float
    equality_gap_low: float
    equality_gap_high: float

    @classmethod
    def from_confusion(cls, conf: GroupConfusion) -> "FairnessReport":
        parity, eq_low, eq_high = gaps(conf)
        return cls(
            accuracy=accuracy(conf),
            prob_true_m=prob_true(conf, 0),
            prob_true_f=prob_true(conf, 1),
            prob_correct_low_m=prob_correct(conf, 0, 0),
            prob_correct_low_f=prob_correct(conf, 0, 1),
            prob_correct_high_m=prob_correct(conf, 1, 0),
            prob_correct_high_f=prob_correct(conf, 1, 1),
            parity_gap=parity,
            equality_gap_low=eq_low,
            equality_gap_high=eq_high,
        )

    def as_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_NAMES = tuple(f.name for f in fields(FairnessReport))


def fairness_report(predictions, y, z) -> FairnessReport:
    return FairnessReport.from_confusion(confusion(predictions, y, z))


@dataclass(frozen=True)
class AggregateReport:
    mean: Dict[str, float]
    std: Dict[str, float]
    runs: int


def aggregate(reports: Sequence[FairnessReport]) -> AggregateReport:
    """Per-metric mean and sample (n-1) standard deviation; std is 0 for one run."""
    reports: List[FairnessReport] = list(reports)
    if not reports:
        raise ValueError("cannot aggregate zero reports")
    mean, std = {}, {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports]
        # shifted by the first value so identical runs average to themselves exactly
        mean[name] = vals[0] + math.fsum(v - vals[0] for v in vals) / len(vals)
        std[name] = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return AggregateReport(mean=mean, std=std, runs=len(reports))
