"""Scoring of outlier detection and fit quality against known ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class SingleDetection(NamedTuple):
    """Detection outcome on one instance."""

    tp: int
    fp: int
    all_found: bool
    exact: bool
    declared: int


@dataclass(frozen=True)
class DetectionStats:
    """Averages over a batch of instances.

    ``fr`` is the fraction of instances where *every* true outlier was
    declared (extra declarations allowed); ``er`` the fraction where the
    declared set matched the truth exactly.
    """

    tp: float
    fp: float
    fr: float
    er: float
    avg_declared: float
    count: int


def score_detection(declared, truth):
    """Compare a declared outlier index set against the true one."""
    declared = set(int(i) for i in declared)
    truth = set(int(i) for i in truth)
    tp = len(declared & truth)
    fp = len(declared - truth)
    return SingleDetection(
        tp=tp,
        fp=fp,
        all_found=truth <= declared,
        exact=declared == truth,
        declared=len(declared),
    )


def aggregate(scores):
    """Average per-instance detections into a :class:`DetectionStats`."""
    scores = list(scores)
    if not scores:
        raise ValueError("no detection scores to aggregate")
    n = len(scores)
    return DetectionStats(
        tp=sum(s.tp for s in scores) / n,
        fp=sum(s.fp for s in scores) / n,
        fr=sum(1 for s in scores if s.all_found) / n,
        er=sum(1 for s in scores if s.exact) / n,
        avg_declared=sum(s.declared for s in scores) / n,
        count=n,
    )


def adjustment_error(model, x, dataset, inlier_indices):
    """Root of the summed squared deviations over the true inliers only.

    Measures how well a fitted ``x`` matches the uncorrupted part of the
    data, so different fits of the same instance can be compared fairly.
    """
    inliers = sorted(set(int(i) for i in inlier_indices))
    if not inliers:
        raise ValueError("need at least one inlier index")
    if inliers[0] < 0 or inliers[-1] >= len(dataset):
        raise ValueError("inlier index out of range")
    T = np.array([dataset[i].t for i in inliers], dtype=float)
    Y = np.array([dataset[i].y for i in inliers], dtype=float)
    dev = model.eval_many(np.asarray(x, dtype=float), T) - Y
    return float(np.sqrt(np.sum(dev * dev)))


def relative_errors(errors):
    """Each error divided by the smallest one (1.0 marks the best method)."""
    arr = np.asarray(list(errors), dtype=float)
    if arr.size == 0:
        raise ValueError("no errors given")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("errors must be finite and nonnegative")
    best = arr.min()
    if best <= 0:
        raise ValueError("smallest error is zero; ratios undefined")
    return arr / best
