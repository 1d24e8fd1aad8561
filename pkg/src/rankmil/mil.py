"""Bag-level pairwise ranking for multiple-instance learning.

A bag scores as its best instance.  Training draws one positive and one
negative bag per step and applies the hinge

    loss = max(0, 1 - (y_pos - y_neg) * (s_pos - s_neg)) = max(0, 1 - 2 (s_pos - s_neg))

backpropagating only through each bag's highest-scoring ("witness")
instance.  Since the loss sees score differences only, bag predictions
use a cutoff fitted on the training scores.

Default hyperparameters
-----------------------
==================  ==========================================
learning_rate       1e-3
momentum            0.9
weight_decay        0
pairs_per_epoch     max(#positive bags, #negative bags)
epochs              200 (linear, mlp), 30 (cnn)
==================  ==========================================
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .bag import Bag, require_both_classes, split_by_label  # noqa: F401  (re-export)
from .data import FeatureStats, apply_normalizer, fit_normalizer, normalize_instances
from .errors import DivergenceError, InputError
from .models import ModelSpec, backward, forward, init_params, predict, params_from_dict, params_to_dict

DEFAULT_EPOCHS = {"linear": 200, "mlp": 200, "cnn": 30}


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and loop settings; ``None`` means "use the default for this data"."""

    epochs: int | None = None
    pairs_per_epoch: int | None = None
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs is not None and self.epochs < 0:
            raise InputError("epochs must be nonnegative")
        if self.pairs_per_epoch is not None and self.pairs_per_epoch < 1:
            raise InputError("pairs_per_epoch must be positive")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InputError("weight_decay must be nonnegative")
        if self.seed < 0:
            raise InputError("seed must be nonnegative")

    def resolve(self, spec, n_pos, n_neg):
        return replace(
            self,
            epochs=DEFAULT_EPOCHS[spec.variant] if self.epochs is None else self.epochs,
            pairs_per_epoch=max(n_pos, n_neg) if self.pairs_per_epoch is None else self.pairs_per_epoch,
        )

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "pairs_per_epoch": self.pairs_per_epoch,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
        }


@dataclass
class TrainedModel:
    spec: ModelSpec
    theta: np.ndarray
    threshold: float
    feature_stats: FeatureStats | None = None

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise InputError("model threshold must be finite")

    def to_dict(self):
        doc = params_to_dict(self.spec, self.theta)
        doc["threshold"] = float(self.threshold)
        doc["feature_stats"] = None if self.feature_stats is None else self.feature_stats.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc):
        spec, theta = params_from_dict(doc)
        stats = doc.get("feature_stats")
        return cls(spec, theta, float(doc["threshold"]),
                   None if stats is None else FeatureStats.from_dict(stats))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def instance_scores(spec, theta, bag):
    if len(bag) == 0:
        raise InputError(f"bag {bag.id!r} is empty")
    return predict(spec, theta, bag.instances)


def bag_score(spec, theta, bag):
    """Return ``(max instance score, index of first maximiser)``."""
    scores = instance_scores(spec, theta, bag)
    w = int(np.argmax(scores))
    return float(scores[w]), w


def pair_loss(s_pos, s_neg):
    margin = 1.0 - 2.0 * (s_pos - s_neg)
    # written out so NaN propagates (max(0.0, nan) would return 0.0)
    return margin if not margin <= 0.0 else 0.0


def pair_loss_grad(s_pos, s_neg):
    """Subgradient ``(dL/ds_pos, dL/ds_neg)``; zero on the kink."""
    if 1.0 - 2.0 * (s_pos - s_neg) > 0.0:
        return -2.0, 2.0
    return 0.0, 0.0


def bag_scores(spec, theta, bags):
    return np.array([bag_score(spec, theta, b)[0] for b in bags])


def empirical_risk(spec, theta, bags):
    """Sum of the pair loss over every (positive, negative) bag pair."""
    pos, neg = require_both_classes(bags)
    sp = bag_scores(spec, theta, pos)
    sn = bag_scores(spec, theta, neg)
    return float(np.maximum(0.0, 1.0 - 2.0 * (sp[:, None] - sn[None, :])).sum())


def pair_gradient(spec, theta, pos_bag, neg_bag):
    """Loss of one bag pair and its gradient w.r.t. ``theta``.

    Returns ``(loss, grad, (s_pos, witness_pos), (s_neg, witness_neg))``;
    ``grad`` is all zeros when the hinge is inactive.
    """
    s_pos, w_pos = bag_score(spec, theta, pos_bag)
    s_neg, w_neg = bag_score(spec, theta, neg_bag)
    loss = pair_loss(s_pos, s_neg)
    g_pos, g_neg = pair_loss_grad(s_pos, s_neg)
    if g_pos == 0.0 and g_neg == 0.0:
        return loss, np.zeros_like(theta), (s_pos, w_pos), (s_neg, w_neg)
    X = np.stack([pos_bag.instances[w_pos], neg_bag.instances[w_neg]])
    _, cache = forward(spec, theta, X)
    grad = backward(spec, theta, cache, np.array([g_pos, g_neg]))
    return loss, grad, (s_pos, w_pos), (s_neg, w_neg)


def train(bags, spec, cfg=None, normalize=False):
    """Fit ``spec`` on ``bags`` by stochastic pairwise ranking.

    With ``normalize=True`` a z-score normaliser is fitted on the training
    instances and stored on the returned model, which then accepts raw
    inputs.
    """
    cfg = cfg or TrainConfig()
    bags = list(bags)
    pos, neg = require_both_classes(bags)
    cfg = cfg.resolve(spec, len(pos), len(neg))
    stats = None
    if normalize:
        stats = fit_normalizer(bags)
        bags = apply_normalizer(stats, bags)
        pos, neg = split_by_label(bags)

    theta = init_params(spec, cfg.seed)
    velocity = np.zeros_like(theta)
    sampler = np.random.default_rng([cfg.seed, 1])
    n_iter = cfg.epochs * cfg.pairs_per_epoch
    with np.errstate(over="ignore", invalid="ignore"):
        _sgd_loop(spec, theta, velocity, pos, neg, cfg, sampler, n_iter)
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(f"non-finite parameters after iteration {n_iter - 1}", iteration=n_iter - 1)

    scores = bag_scores(spec, theta, bags)
    labels = np.array([b.label for b in bags])
    threshold = metrics.finite_threshold(metrics.select_threshold(scores, labels), scores)
    return TrainedModel(spec, theta, threshold, stats)


def _sgd_loop(spec, theta, velocity, pos, neg, cfg, sampler, n_iter):
    """One sampled (positive, negative) pair per step; updates in place."""
    for it in range(n_iter):
        p = pos[sampler.integers(len(pos))]
        n = neg[sampler.integers(len(neg))]
        loss, grad, (s_pos, _), (s_neg, _) = pair_gradient(spec, theta, p, n)
        if not (math.isfinite(loss) and math.isfinite(s_pos) and math.isfinite(s_neg)):
            raise DivergenceError(f"non-finite loss at iteration {it}", iteration=it)
        if cfg.weight_decay:
            grad = grad + cfg.weight_decay * theta
        velocity *= cfg.momentum
        velocity -= cfg.learning_rate * grad
        theta += velocity


def score_instances(model, bag):
    """Per-instance scores of ``bag`` under ``model`` (raw inputs)."""
    X = bag.instances
    if model.feature_stats is not None:
        X = normalize_instances(model.feature_stats, X)
    return predict(model.spec, model.theta, X)


def score_bags(model, bags):
    """``(scores, witnesses)`` arrays for ``bags`` under ``model``."""
    scores, witnesses = [], []
    for bag in bags:
        s = score_instances(model, bag)
        w = int(np.argmax(s))
        scores.append(float(s[w]))
        witnesses.append(w)
    return np.array(scores), np.array(witnesses, dtype=np.int64)


def predict_bags(model, bags):
    scores, _ = score_bags(model, bags)
    return np.where(scores > model.threshold, 1, -1)
