"""Bag-level metrics: AUC-ROC, thresholded accuracy, threshold selection."""

import numpy as np

from .errors import InputError, MetricUndefinedError


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise InputError(f"{scores.size} scores but {labels.size} labels")
    pos, neg = scores[labels == 1], scores[labels == -1]
    if len(pos) + len(neg) != len(scores):
        raise InputError("labels must be +1 or -1")
    if len(pos) == 0 or len(neg) == 0:
        raise MetricUndefinedError("metric needs at least one positive and one negative")
    return pos, neg


def auc_roc(scores, labels):
    """Mann-Whitney estimate: P(pos > neg) with ties counted one half."""
    pos, neg = _split(scores, labels)
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    not_above = np.searchsorted(neg, pos, side="right")
    wins = below.sum() + 0.5 * (not_above - below).sum()
    return float(wins / (len(pos) * len(neg)))


def accuracy(scores, labels, threshold):
    """Fraction correct under ``score > threshold`` => positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise InputError(f"{scores.size} scores but {labels.size} labels")
    if scores.size == 0:
        raise InputError("accuracy of an empty set")
    pred = np.where(scores > threshold, 1, -1)
    return float(np.mean(pred == labels))


def select_threshold(scores, labels):
    """Training-accuracy-maximising cutoff.

    Candidates are midpoints between consecutive distinct scores plus the
    two infinite sentinels.  Ties prefer the candidate closest to the median
    score, then the smaller one.
    """
    _split(scores, labels)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    distinct = np.unique(scores)
    candidates = np.concatenate(([-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]))
    median = float(np.median(scores))
    best = None
    for t in candidates:
        key = (-accuracy(scores, labels, t), abs(t - median), t)
        if best is None or key < best:
            best = key
    return float(best[2])


def finite_threshold(threshold, scores):
    """Replace an infinite sentinel by a finite cutoff with identical predictions."""
    if np.isfinite(threshold):
        return float(threshold)
    scores = np.asarray(scores, dtype=np.float64)
    if threshold > 0:
        return float(scores.max())
    return float(scores.min() - 1.0)
