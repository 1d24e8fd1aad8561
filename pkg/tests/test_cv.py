import csv
import json

import numpy as np
import pytest

from helpers import make_bags
from rankmil.data import gen_synthetic
from rankmil.errors import DivergenceError, InputError
from rankmil.evaluation import CvReport, FoldResult, run_cv, stratified_kfold
from rankmil.mil import TrainConfig
from rankmil.models import ModelSpec

FAST = TrainConfig(epochs=20)


class TestStratifiedKfold:
    def test_balanced_folds(self):
        bags = make_bags(np.arange(100.0), np.arange(100.0))
        labels = {b.id: b.label for b in bags}
        for ids in stratified_kfold(bags, 10, seed=0):
            assert sum(labels[i] == 1 for i in ids) == 10
            assert sum(labels[i] == -1 for i in ids) == 10

    @pytest.mark.parametrize("n_pos, n_neg, k", [(47, 45, 10), (39, 63, 10), (5, 7, 3), (2, 2, 2)])
    def test_partition(self, n_pos, n_neg, k):
        bags = make_bags(np.zeros(n_pos), np.zeros(n_neg))
        folds = stratified_kfold(bags, k, seed=3)
        flat = [i for ids in folds for i in ids]
        assert sorted(flat) == sorted(b.id for b in bags)
        sizes = [len(ids) for ids in folds]
        assert max(sizes) - min(sizes) <= 1
        for cls in ("p", "n"):
            counts = [sum(i.startswith(cls) for i in ids) for ids in folds]
            assert max(counts) - min(counts) <= 1

    def test_deterministic(self):
        bags = make_bags(np.zeros(20), np.zeros(30))
        assert stratified_kfold(bags, 5, 7) == stratified_kfold(bags, 5, 7)
        assert stratified_kfold(bags, 5, 7) != stratified_kfold(bags, 5, 8)

    def test_too_few_bags(self):
        with pytest.raises(InputError, match="per class"):
            stratified_kfold(make_bags(np.zeros(3), np.zeros(20)), 4, 0)

    def test_k_below_two(self):
        with pytest.raises(InputError):
            stratified_kfold(make_bags(np.zeros(3), np.zeros(3)), 1, 0)


class TestRunCv:
    def test_separable_perfect(self):
        ds = gen_synthetic(20, 20, 1, 20.0, 1.0, seed=0)
        report = run_cv(ds, ModelSpec.single_linear(1), FAST, runs=2, k=4)
        assert report.accuracy_mean == 1.0 and report.auc_mean == 1.0
        assert report.accuracy_std == 0.0

    def test_structure(self):
        ds = gen_synthetic(10, 12, 3, 2.0, 0.5, seed=1)
        report = run_cv(ds, ModelSpec.single_linear(3), FAST, runs=3, k=5)
        assert len(report.folds) == 15
        assert [(f.run, f.fold) for f in report.folds] == [(r, f) for r in range(3) for f in range(5)]
        assert [f.seed for f in report.folds[::5]] == [0, 1, 2]

    def test_single_run_std_zero(self):
        ds = gen_synthetic(10, 10, 2, 1.0, 0.5, seed=2)
        report = run_cv(ds, ModelSpec.single_linear(2), FAST, runs=1, k=2)
        assert report.accuracy_std == 0.0 and report.auc_std == 0.0

    def test_deterministic(self):
        ds = gen_synthetic(10, 10, 3, 1.0, 0.5, seed=4)
        a = run_cv(ds, ModelSpec.one_hidden_tanh(3), FAST, runs=2, k=2)
        b = run_cv(ds, ModelSpec.one_hidden_tanh(3), FAST, runs=2, k=2)
        assert a.to_csv() == b.to_csv()

    def test_parallel_matches_serial(self):
        ds = gen_synthetic(8, 8, 2, 1.0, 0.5, seed=5)
        spec = ModelSpec.single_linear(2)
        serial = run_cv(ds, spec, FAST, runs=2, k=2)
        parallel = run_cv(ds, spec, FAST, runs=2, k=2, jobs=2)
        assert serial.to_csv() == parallel.to_csv()

    def test_error_names_fold(self):
        ds = gen_synthetic(4, 4, 2, 1.0, 0.5, seed=0)
        for b in ds.bags:
            b.instances *= 1e300
        cfg = TrainConfig(epochs=5, learning_rate=1.0)
        with pytest.raises(DivergenceError, match=r"run 0, fold \d: non-finite") as info:
            run_cv(ds, ModelSpec.single_linear(2), cfg, runs=1, k=2, normalize=False)
        assert info.value.iteration is not None


class TestReport:
    def report(self):
        folds = [
            FoldResult(0, 0, 0, 1.0, 1.0),
            FoldResult(0, 1, 0, 0.5, 0.75),
            FoldResult(1, 0, 1, 0.75, 0.5),
            FoldResult(1, 1, 1, 0.75, 0.25),
        ]
        return CvReport(folds, k=2, runs=2)

    def test_aggregates(self):
        r = self.report()
        assert r.accuracy_mean == 0.75
        assert r.accuracy_std == 0.0
        assert r.auc_mean == pytest.approx(0.625)
        assert r.auc_std == pytest.approx(0.25)
        assert r.accuracy_fold_std == pytest.approx(np.std([1.0, 0.5, 0.75, 0.75]))

    def test_files(self, tmp_path):
        r = self.report()
        r.write(tmp_path / "cv.csv", tmp_path / "cv.json")
        lines = (tmp_path / "cv.csv").read_text().splitlines()
        rows = list(csv.DictReader([l for l in lines if not l.startswith("#")]))
        assert len(rows) == 4
        summary = dict(l[2:].split(",") for l in lines if l.startswith("#"))
        assert float(summary["accuracy_mean"]) == np.mean([float(x["accuracy"]) for x in rows])
        doc = json.loads((tmp_path / "cv.json").read_text())
        assert doc["summary"]["auc_mean"] == r.auc_mean
        assert len(doc["folds"]) == 4
