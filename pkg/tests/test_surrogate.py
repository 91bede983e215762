"""Gradient-boosted energy regressor and its kernels."""

import numpy as np
import pytest

from retrosmc._kernels import (
    N_BINS,
    USE_NUMBA,
    build_tree,
    build_tree_numpy,
    forest_predict,
    forest_predict_numpy,
)
from retrosmc.chem import fingerprint, parse_smiles
from retrosmc.surrogate import (
    GbmModel,
    fit_gbm,
    predict_energy,
    predict_energy_batch,
    query_matrix,
)


def _toy_data(n=400, f=30, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(n, f))
    w = rng.normal(size=f) * (rng.random(f) < 0.3)
    y = np.clip(0.5 + 0.04 * (X @ w), 0.0, 1.0)
    return X, y


def test_constant_targets_give_base_only():
    X, _ = _toy_data()
    m = fit_gbm(X, np.full(len(X), 0.37), n_trees=20)
    assert m.base == pytest.approx(0.37)
    assert np.allclose(m.predict(X[:7]), 0.37)


def test_single_round_hand_case():
    # two feature-separable groups with targets 0 and 1: base 0.5, one split,
    # leaf residuals -0.5 / +0.5, predictions 0.5 -/+ 0.5*nu
    nu = 0.1
    X = np.array([[0], [0], [0], [5], [5], [5]])
    y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    m = fit_gbm(X, y, n_trees=1, max_depth=1, nu=nu)
    pred = m.predict(X)
    assert pred[:3] == pytest.approx(0.5 - 0.5 * nu)
    assert pred[3:] == pytest.approx(0.5 + 0.5 * nu)


def test_training_mse_non_increasing():
    X, y = _toy_data()
    m = fit_gbm(X, y, n_trees=50, max_depth=3)
    mse = np.array(m.mse_path)
    assert len(mse) == 50
    assert np.all(np.diff(mse) <= 1e-15)


def test_training_rows_within_recorded_bound():
    X, y = _toy_data(n=200)
    m = fit_gbm(X, y, n_trees=80, max_depth=4)
    pred = m.predict(X)
    assert np.max(np.abs(pred - np.clip(y, 0, 1))) <= m.max_train_abs_residual + 1e-12


def test_degenerate_features_base_only():
    X = np.full((10, 4), 3)
    y = np.linspace(0, 1, 10)
    m = fit_gbm(X, y, n_trees=10)
    assert m.n_trees == 0
    assert np.allclose(m.predict(X), np.clip(np.mean(y), 0, 1))


def test_prediction_clipped():
    m = GbmModel(
        base=-0.2, nu=0.1, max_depth=1,
        columns=np.array([0], dtype=np.int64),
        feat=np.empty(0, np.int32), thr=np.empty(0, np.int32),
        left=np.empty(0, np.int32), right=np.empty(0, np.int32),
        val=np.empty(0, np.float64), roots=np.empty(0, np.int64),
        energy_cap=1.0,
    )
    assert m.predict(np.array([[3]])) == pytest.approx(0.0)
    m2 = GbmModel(
        base=1.7, nu=0.1, max_depth=1,
        columns=np.array([0], dtype=np.int64),
        feat=np.empty(0, np.int32), thr=np.empty(0, np.int32),
        left=np.empty(0, np.int32), right=np.empty(0, np.int32),
        val=np.empty(0, np.float64), roots=np.empty(0, np.int64),
        energy_cap=1.0,
    )
    assert m2.predict(np.array([[3]])) == pytest.approx(1.0)


def test_fit_deterministic():
    X, y = _toy_data(seed=4)
    a = fit_gbm(X, y, n_trees=25, max_depth=4, seed=0)
    b = fit_gbm(X, y, n_trees=25, max_depth=4, seed=99)
    for field in ("feat", "thr", "left", "right", "val", "roots"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_serialization_roundtrip(tmp_path):
    X, y = _toy_data(seed=7)
    m = fit_gbm(X, y, n_trees=15, max_depth=3)
    path = tmp_path / "model.json"
    m.save(path)
    loaded = GbmModel.load(path)
    q = _toy_data(n=50, seed=9)[0]
    assert np.array_equal(m.predict(q), loaded.predict(q))


def test_numba_and_numpy_paths_agree():
    X, y = _toy_data(n=300, f=20, seed=3)
    # dyadic targets make every partial sum exact, so the scalar and the
    # vectorized path must agree bit for bit
    y = np.round(y * 64.0) / 64.0
    xb = np.ascontiguousarray(np.clip(X, 0, N_BINS - 1), dtype=np.uint8)
    res = y - np.round(y.mean() * 64.0) / 64.0
    out_a = np.empty(len(y))
    out_b = np.empty(len(y))
    ta = build_tree(xb, res, np.arange(len(y), dtype=np.int64), 4, 1, out_a)
    tb = build_tree_numpy(
        xb, res, np.arange(len(y), dtype=np.int64), 4, 1, out_b
    )
    for got, want in zip(ta[:5], tb[:5]):
        assert np.array_equal(got, want)
    assert ta[5] == tb[5]
    assert np.array_equal(out_a, out_b)
    feat, thr, left, right, val, count = ta
    roots = np.array([0], dtype=np.int64)
    xq = X.astype(np.int64)
    pa = forest_predict(xq, feat, thr, left, right, val, roots, 0.5, 0.1)
    pb = forest_predict_numpy(xq, feat, thr, left, right, val, roots, 0.5, 0.1)
    assert np.allclose(pa, pb, atol=1e-12)


def test_fingerprint_query_helpers():
    fps = [
        fingerprint(parse_smiles("CCO")),
        fingerprint(parse_smiles("CBr")),
    ]
    X = np.stack([fp.dense_counts() for fp in fps])
    m = fit_gbm(
        np.vstack([X, X + 0]), np.array([0.1, 0.9, 0.1, 0.9]),
        n_trees=5, max_depth=2,
    )
    batch = predict_energy_batch(m, fps)
    assert batch.shape == (2,)
    assert predict_energy(m, fps[0]) == pytest.approx(batch[0])
    qm = query_matrix(m, fps)
    dense = X[:, m.columns]
    assert np.array_equal(qm, dense)


def test_fit_rejects_tiny_data():
    with pytest.raises(ValueError):
        fit_gbm(np.array([[1]]), np.array([0.5]))
