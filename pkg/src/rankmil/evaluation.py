"""Stratified k-fold cross-validation repeated over several seeded runs."""

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import metrics
from .bag import split_by_label
from .errors import InputError, MilError
from .mil import TrainConfig, score_bags, train


@dataclass(frozen=True)
class FoldResult:
    run: int
    fold: int
    seed: int
    accuracy: float
    auc: float


@dataclass
class CvReport:
    folds: list = field(default_factory=list)
    k: int = 10
    runs: int = 5

    def _per_run(self, key):
        return np.array([
            np.mean([getattr(f, key) for f in self.folds if f.run == r])
            for r in sorted({f.run for f in self.folds})
        ])

    @property
    def run_accuracy(self):
        return self._per_run("accuracy")

    @property
    def run_auc(self):
        return self._per_run("auc")

    @property
    def accuracy_mean(self):
        return float(self.run_accuracy.mean())

    @property
    def accuracy_std(self):
        """Population std of the per-run mean accuracies."""
        return float(self.run_accuracy.std())

    @property
    def auc_mean(self):
        return float(self.run_auc.mean())

    @property
    def auc_std(self):
        return float(self.run_auc.std())

    @property
    def accuracy_fold_std(self):
        return float(np.std([f.accuracy for f in self.folds]))

    @property
    def auc_fold_std(self):
        return float(np.std([f.auc for f in self.folds]))

    def summary(self):
        return {
            "runs": self.runs,
            "folds": self.k,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "accuracy_fold_std": self.accuracy_fold_std,
            "auc_fold_std": self.auc_fold_std,
        }

    def to_csv(self):
        """Per-fold rows, then ``#``-prefixed ``key,value`` summary lines."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["run", "fold", "accuracy", "auc"])
        for f in self.folds:
            writer.writerow([f.run, f.fold, repr(f.accuracy), repr(f.auc)])
        for key, value in self.summary().items():
            buf.write(f"# {key},{value!r}\n")
        return buf.getvalue()

    def to_dict(self):
        return {"summary": self.summary(), "folds": [asdict(f) for f in self.folds]}

    def write(self, csv_path, json_path=None):
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        if json_path is not None:
            with open(json_path, "w", encoding="utf-8") as fh:
                json.dump(self.to_dict(), fh, indent=1)
                fh.write("\n")


def stratified_kfold(bags, k, seed):
    """Partition bag ids into ``k`` folds with near-equal class counts.

    Each class is shuffled separately and dealt round-robin; negatives
    continue from the fold where positives stopped so fold sizes stay even.
    """
    if k < 2:
        raise InputError("k must be at least 2")
    pos, neg = split_by_label(bags)
    if len(pos) < k or len(neg) < k:
        raise InputError(f"{k}-fold split needs >= {k} bags per class, have {len(pos)} positive, {len(neg)} negative")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for group in (pos, neg):
        for i, j in enumerate(rng.permutation(len(group))):
            folds[(offset + i) % k].append(group[j].id)
        offset = (offset + len(group)) % k
    return folds


def _run_fold(bags, held_out, spec, cfg, normalize):
    test = [b for b in bags if b.id in held_out]
    training = [b for b in bags if b.id not in held_out]
    model = train(training, spec, cfg, normalize=normalize)
    scores, _ = score_bags(model, test)
    labels = np.array([b.label for b in test])
    return metrics.accuracy(scores, labels, model.threshold), metrics.auc_roc(scores, labels)


def _with_context(exc, run, fold):
    message = f"run {run}, fold {fold}: {exc}"
    try:
        new = type(exc)(message)
    except TypeError:
        new = MilError(message)
        new.code = exc.code
    new.__dict__.update(exc.__dict__)
    return new


def run_cv(bags, spec, cfg=None, runs=5, k=10, normalize=True, jobs=1):
    """Repeated stratified k-fold CV.

    Run ``r`` folds with seed ``cfg.seed + r``; fold ``f`` of that run
    trains with seed ``1000 * (cfg.seed + r) + f``.  A normaliser is fitted
    on each training split only.  Results are ordered by (run, fold)
    whatever ``jobs`` is.
    """
    cfg = cfg or TrainConfig()
    bags = list(getattr(bags, "bags", bags))
    tasks = []
    for r in range(runs):
        run_seed = cfg.seed + r
        for f, ids in enumerate(stratified_kfold(bags, k, run_seed)):
            tasks.append((r, f, run_seed, set(ids), replace(cfg, seed=1000 * run_seed + f)))

    def fold_args(task):
        return bags, task[3], spec, task[4], normalize

    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_fold, *fold_args(t)) for t in tasks]
            for t, fut in zip(tasks, futures):
                try:
                    results.append(fut.result())
                except MilError as exc:
                    raise _with_context(exc, t[0], t[1]) from exc
    else:
        for t in tasks:
            try:
                results.append(_run_fold(*fold_args(t)))
            except MilError as exc:
                raise _with_context(exc, t[0], t[1]) from exc

    folds = [FoldResult(t[0], t[1], t[2], acc, auc) for t, (acc, auc) in zip(tasks, results)]
    return CvReport(folds, k=k, runs=runs)
