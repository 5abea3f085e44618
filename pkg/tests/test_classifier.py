import json

import numpy as np
import pytest

from pirtower.classifier import (CvError, GridPoint, TrainedPipeline, default_grid, fit_point, kfold_cv,
                                 render_class_table, render_feature_table, stratified_folds, train_pipeline)
from pirtower.features import FeatureTable

SMALL_GRID = [GridPoint("linear", 1.0), GridPoint("rbf", 1.0, 0.5), GridPoint("rbf", 10.0, 0.1)]


def _separable(seed, n=30, dim=4):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(size=(n, dim)) - 4, rng.normal(size=(n, dim)) + 4])
    return x, np.array(["clutter"] * n + ["intruder"] * n)


def _table(seed=0, n=(20, 20, 30)):
    """Synthetic corpus: c60 separates clutter, e8 separates human from animal."""
    rng = np.random.default_rng(seed)
    labels = ["human"] * n[0] + ["animal"] * n[1] + ["clutter"] * n[2]
    y = np.array(labels)
    c60 = rng.normal(size=(len(y), 60))
    c60[:, :10] += np.where(y == "clutter", -3.0, 3.0)[:, None]
    e8 = rng.normal(size=(len(y), 8))
    e8[:, 0] += np.where(y == "human", 5.0, -5.0)
    return FeatureTable(np.arange(len(y)), labels, e8, rng.uniform(size=len(y)), c60, {"config_hash": "h"})


def test_default_grid_contents():
    g = default_grid()
    assert len(g) == 14 + 14 * 11
    assert g[0] == GridPoint("linear", 0.125) and g[-1] == GridPoint("rbf", 1024.0, 8.0)
    assert GridPoint.from_dict(g[20].to_dict()) == g[20]


def test_stratified_folds_balanced():
    strata = np.array(["a"] * 23 + ["b"] * 17 + ["c"] * 9)
    folds = stratified_folds(strata, 5, seed=3)
    sizes = np.bincount(folds, minlength=5)
    assert sizes.max() - sizes.min() <= 1
    for c in "abc":
        s = np.bincount(folds[strata == c], minlength=5)
        assert s.max() - s.min() <= 1
    assert np.array_equal(folds, stratified_folds(strata, 5, seed=3))
    assert not np.array_equal(folds, stratified_folds(strata, 5, seed=4))


def test_separable_data_scores_100():
    x, y = _separable(0)
    r = kfold_cv(x, y, 5, SMALL_GRID, seed=1, positive="intruder")
    assert all(v == 100.0 for v in r.minimum.values())
    assert all(v == 100.0 for v in r.average.values())
    assert r.rows == ["clutter", "intruder", "Total"]


def test_null_experiment_near_chance():
    rng = np.random.default_rng(0)
    accs = []
    for seed in range(20):
        x = rng.normal(size=(120, 5))
        y = np.array(["a", "b"] * 60)
        rng.shuffle(y)
        accs.append(kfold_cv(x, y, 5, seed=seed).overall_avg)
    assert abs(np.mean(accs) - 50.0) <= 10.0


def test_report_cells_consistent():
    x, y = _separable(1, n=23)
    x[:5] += 8  # a few clutter examples on the wrong side
    r = kfold_cv(x, y, 5, SMALL_GRID, seed=2)
    for row in r.rows:
        assert 0 <= r.minimum[row] <= r.average[row] <= 100
    assert sum(r.fold_sizes) == len(y) and max(r.fold_sizes) - min(r.fold_sizes) <= 1
    assert sum(sum(map(sum, c)) for c in r.confusion) == len(y)
    assert len(r.grid_scores) == len(SMALL_GRID)
    assert r.chosen == SMALL_GRID[int(np.argmax(r.grid_scores))].to_dict()
    assert "same folds" in json.loads(r.to_json())["selection"]


def test_cv_count_errors():
    x, y = _separable(2, n=3)
    with pytest.raises(CvError, match="fewer examples than folds"):
        kfold_cv(x, y, 5)
    with pytest.raises(CvError):
        kfold_cv(x, np.array(["a"] * len(x)), 2)
    with pytest.raises(CvError):
        kfold_cv(x, y, 1)


def test_cv_deterministic_and_jobs_independent():
    x, y = _separable(3, n=20)
    x += np.random.default_rng(0).normal(scale=3.0, size=x.shape)
    a = kfold_cv(x, y, 5, SMALL_GRID, seed=7).to_json()
    b = kfold_cv(x, y, 5, SMALL_GRID, seed=7, jobs=3).to_json()
    assert a == b


def test_fold_predictions_scale_invariant():
    x, y = _separable(4, n=20)
    x += np.random.default_rng(1).normal(scale=3.0, size=x.shape)
    a = kfold_cv(x, y, 5, SMALL_GRID, seed=0)
    x2 = x.copy()
    x2[:, 2] *= 10.0
    b = kfold_cv(x2, y, 5, SMALL_GRID, seed=0)
    assert a.confusion == b.confusion and a.grid_scores == b.grid_scores


def test_pipeline_structure():
    table = _table()
    model, report = train_pipeline(table, SMALL_GRID, seed=0, k=5)
    assert report.rows == ["Clutter", "Intruder", "Human", "Animal", "Overall"]
    assert report.average["Overall"] == 100.0
    assert set(report.stages) == {"stage1", "stage2"}
    # a clutter event reaches stage 2 only through a stage-1 intruder decision
    pred = model.predict(table.c60, table.e8)
    s1, _ = model.stage1.predict(table.c60)
    assert np.all((pred != "clutter") == (s1 == "intruder"))
    assert model.stage1.n_features == 60 and model.stage2.n_features == 8
    clone = TrainedPipeline.from_dict(json.loads(json.dumps(model.to_dict())))
    assert np.array_equal(clone.predict(table.c60, table.e8), pred)


def test_pipeline_composition_counts_misrouted_events():
    table = _table(1)
    table.c60[:3, :10] -= 6.0  # three humans look like clutter to stage 1
    _, report = train_pipeline(table, SMALL_GRID, seed=0, k=5)
    conf = np.sum(report.confusion, axis=0)  # true x predicted over folds, classes clutter/human/animal
    assert conf[1, 0] >= 3
    assert report.average["Human"] < 100.0
    assert report.average["Overall"] == pytest.approx(100.0 * np.trace(conf) / conf.sum(), abs=2.0)


def test_pipeline_deterministic():
    a = train_pipeline(_table(2), SMALL_GRID, seed=4, k=5)[1].to_json()
    b = train_pipeline(_table(2), SMALL_GRID, seed=4, k=5)[1].to_json()
    assert a == b


def test_pipeline_rejects_unknown_labels_and_small_classes():
    t = _table()
    t.labels[0] = "robot"
    with pytest.raises(CvError, match="robot"):
        train_pipeline(t, SMALL_GRID)
    with pytest.raises(CvError):
        train_pipeline(_table(n=(3, 20, 20)), SMALL_GRID)


def test_fit_point_allows_single_example():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [1.1, 0.9]])
    m = fit_point(x, ["a", "b", "b"], GridPoint("linear", 10.0))
    assert m.predict([[0.0, 0.1]])[0][0] == "a"


def test_text_tables():
    x, y = _separable(5)
    strata = np.where(y == "intruder", "human", "clutter")
    reports = [kfold_cv(x, y, 5, SMALL_GRID, positive="intruder", strata=strata, feature_set=f)
               for f in ("e8", "e8+rho", "c60")]
    text = render_feature_table(reports)
    assert text.count("100.0") == 18
    assert "Clutter" in text and "Intruder" in text
    _, rep = train_pipeline(_table(), SMALL_GRID)
    t2 = render_class_table(rep)
    for row in rep.rows:
        assert row in t2
