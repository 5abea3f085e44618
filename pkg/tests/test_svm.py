import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.svm import SVC

from pirtower.svm import SvmError, SvmModel, Standardizer, kernel_matrix, save_model, train_svm


def _blobs(seed, n=40, sep=4.0, dim=2):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(size=(n, dim)) - sep / 2, rng.normal(size=(n, dim)) + sep / 2])
    return x, np.array(["neg"] * n + ["pos"] * n)


def test_separable_blobs_linear():
    x, y = _blobs(0, sep=8.0)
    m = train_svm(x, y, "linear", C=1.0)
    assert np.array_equal(m.predict(x)[0], y)
    assert m.classes == ("neg", "pos")
    assert ((m.dual_coef != 0).sum() >= 2) and np.all(np.abs(m.dual_coef) <= m.C + 1e-12)


def test_xor_rbf():
    x = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    y = np.array(["a", "a", "b", "b"])
    m = train_svm(x, y, "rbf", C=10.0, gamma=1.0)
    assert np.array_equal(m.predict(x)[0], y)


def test_duplicated_points_same_decision_function():
    x, y = _blobs(1, n=15, sep=7.0)
    probe = np.stack(np.meshgrid(np.linspace(-5, 5, 9), np.linspace(-5, 5, 9)), -1).reshape(-1, 2)
    for kernel in ("linear", "rbf"):
        a = train_svm(x, y, kernel, C=1e4, gamma=0.5, tol=1e-10)
        b = train_svm(np.vstack([x, x]), np.concatenate([y, y]), kernel, C=1e4, gamma=0.5, tol=1e-10)
        assert np.allclose(a.decision_function(probe), b.decision_function(probe), atol=1e-6)


def test_free_support_vectors_on_margin():
    x, y = _blobs(2, sep=2.5)
    m = train_svm(x, y, "rbf", C=2.0, gamma=0.5, tol=1e-6)
    free = (np.abs(m.dual_coef) > 1e-8) & (np.abs(m.dual_coef) < m.C - 1e-8)
    assert free.any()
    k = kernel_matrix(m.support_vectors[free], m.support_vectors, "rbf", 0.5)
    margins = k @ m.dual_coef + m.bias
    assert np.allclose(np.abs(margins), 1.0, atol=1e-5)


def test_symmetric_blobs_midpoint():
    rng = np.random.default_rng(3)
    half = rng.normal(size=(30, 2)) + [3.0, 1.0]
    x = np.vstack([half, -half])
    y = np.array(["p"] * 30 + ["n"] * 30)
    m = train_svm(x, y, "linear", C=1.0, tol=1e-6)
    assert abs(m.decision_function([[0.0, 0.0]])[0]) < 1e-2


def test_matches_reference_implementation():
    x, y = _blobs(4, n=50, sep=1.5, dim=3)
    st_ = Standardizer.fit(x)
    z = st_.transform(x)
    yy = np.where(y == "pos", 1, -1)
    for kernel, gamma in (("linear", 1.0), ("rbf", 0.3)):
        m = train_svm(x, y, kernel, C=3.0, gamma=gamma, tol=1e-8)
        ref = SVC(C=3.0, kernel=kernel, gamma=gamma, tol=1e-8, shrinking=False).fit(z, yy)
        probe = np.random.default_rng(5).normal(size=(40, 3))
        assert np.allclose(m.decision_function(probe), ref.decision_function(st_.transform(probe)), atol=1e-5)


def test_dimension_mismatch():
    x, y = _blobs(6, dim=3)
    m = train_svm(x, y, "linear")
    with pytest.raises(SvmError, match="3 features"):
        m.predict(np.zeros((2, 8)))


def test_training_errors():
    x, y = _blobs(7)
    bad = x.copy()
    bad[5, 1] = np.nan
    with pytest.raises(SvmError, match="event 105"):
        train_svm(bad, y, ids=np.arange(100, 100 + len(x)))
    with pytest.raises(SvmError):
        train_svm(x, np.array(["a"] * len(x)))
    with pytest.raises(SvmError):
        train_svm(x[:3], np.array(["a", "a", "b"]))
    with pytest.raises(SvmError):
        train_svm(x, y, C=0.0)
    with pytest.raises(SvmError):
        train_svm(x, y, kernel="poly")


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6), scale=st.floats(0.01, 100.0))
def test_standardization_absorbs_scale(seed, scale):
    x, y = _blobs(seed % 1000, n=20, sep=2.0)
    a = train_svm(x, y, "rbf", C=1.0, gamma=0.5, tol=1e-10)
    b = train_svm(x * [scale, 1.0], y, "rbf", C=1.0, gamma=0.5, tol=1e-10)
    probe = np.random.default_rng(seed).normal(size=(20, 2))
    assert np.allclose(a.decision_function(probe), b.decision_function(probe * [scale, 1.0]), atol=1e-6)


def test_model_round_trip(tmp_path):
    x, y = _blobs(8)
    m = train_svm(x, y, "rbf", C=2.0, gamma=0.25)
    path = tmp_path / "m.json"
    save_model(m, path)
    m2 = SvmModel.from_dict(json.loads(path.read_text()))
    assert np.array_equal(m.decision_function(x), m2.decision_function(x))
