"""Route scoring, the reaction-class model, and clustering."""

import math

import numpy as np
import pytest

from retrosmc.analysis import (
    ClassModel,
    _bic,
    representatives,
    score_route,
    score_route_known_class,
    train_class_model,
    xmeans,
)


def _balanced_corpus(per_class=12):
    """Ten trivially separable classes over distinct marker molecules."""
    markers = [
        ("CBr", "CCO"), ("CCl", "CCO"), ("CI", "CCO"), ("CBr", "CCN"),
        ("CCl", "CCN"), ("CI", "CCN"), ("CCS", "CBr"), ("CC=O", "CCN"),
        ("C=CC", "CCS"), ("CCO", "CO"),
    ]
    products = [
        "CCOC", "CCOCC", "CCOCCC", "CCNC", "CCNCC", "CCNCCC",
        "CCSC", "CC(=O)N", "CCCS", "CC=O",
    ]
    corpus = []
    for cls in range(10):
        for i in range(per_class):
            pad = "C" * (i % 3)
            corpus.append((pad + products[cls], markers[cls], cls))
    return corpus


def test_class_model_learns_separable_classes():
    corpus = _balanced_corpus()
    cm = train_class_model(corpus, l1_strength=1e-3)
    correct = sum(
        int(np.argmax(cm.probabilities(p, r)) == c) for p, r, c in corpus
    )
    assert correct / len(corpus) >= 0.95
    probs = cm.probabilities("CCOC", ("CBr", "CCO"))
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_class_model_softmax_rows_sum_to_one():
    cm = train_class_model(_balanced_corpus(6), l1_strength=1e-2)
    for p, r, _ in _balanced_corpus(2):
        assert cm.probabilities(p, r).sum() == pytest.approx(1.0, abs=1e-12)


def test_class_model_huge_l1_gives_uniform():
    cm = train_class_model(_balanced_corpus(), l1_strength=1e6)
    assert np.all(cm.weights == 0.0)
    probs = cm.probabilities("CCOC", ("CBr", "CCO"))
    assert np.allclose(probs, 0.1, atol=1e-6)


def test_class_model_duplication_invariance():
    corpus = _balanced_corpus(8)
    a = train_class_model(corpus, l1_strength=1e-3)
    b = train_class_model(corpus + corpus, l1_strength=1e-3)
    assert np.allclose(a.weights, b.weights, atol=1e-9)
    assert np.allclose(a.bias, b.bias, atol=1e-9)


def test_class_model_rejects_single_class():
    with pytest.raises(ValueError):
        train_class_model([("CCO", ("CC",), 3)] * 5)


def test_class_model_sparsity_reported():
    cm = train_class_model(_balanced_corpus(), l1_strength=1e-2)
    assert 0.0 < cm.sparsity <= 1.0


def _uniform_cm():
    return ClassModel(np.zeros((10, 2 * 2048)), np.zeros(10), 2048, 2, 0.0)


def test_score_route_arithmetic():
    corpus = _balanced_corpus()
    cm = train_class_model(corpus, l1_strength=1e-3)
    sc = score_route(("CBr", "CCO"), (0.8,), "CCOC", cm)
    assert sc.gamma == pytest.approx(sc.alpha * sc.best_class_prob)
    assert sc.alpha == pytest.approx(0.8)
    assert sc.best_class == 0


def test_score_route_invalid_is_zero():
    sc = score_route(("CBr", "CCO"), (0.8,), None, _uniform_cm())
    assert sc.gamma == 0.0
    assert sc.best_class == -1


def test_score_route_uniform_model():
    sc = score_route(("CBr", "CCO"), (0.8,), "CCOC", _uniform_cm())
    assert sc.gamma == pytest.approx(0.1 * 0.8)


def test_score_route_multi_step_alpha_product():
    sc = score_route(("CCOC", "CBr"), (0.5, 0.25), "CCOCC", _uniform_cm())
    assert sc.alpha == pytest.approx(0.125)
    assert sc.gamma == pytest.approx(0.0125)


def test_score_route_known_class():
    cm = train_class_model(_balanced_corpus(), l1_strength=1e-3)
    best = score_route(("CBr", "CCO"), (0.5,), "CCOC", cm)
    known = score_route_known_class(
        ("CBr", "CCO"), (0.5,), "CCOC", cm, best.best_class
    )
    assert known.gamma == pytest.approx(best.gamma)
    other = score_route_known_class(("CBr", "CCO"), (0.5,), "CCOC", cm, 7)
    assert other.gamma <= best.gamma
    assert other.gamma == pytest.approx(0.5 * other.best_class_prob)
    with pytest.raises(ValueError):
        score_route_known_class(("CBr",), (0.5,), "CCOC", cm, 42)


def test_gamma_ordering_invariant_to_common_alpha_scaling():
    cm = train_class_model(_balanced_corpus(), l1_strength=1e-3)
    routes = [
        (("CBr", "CCO"), (0.9,), "CCOC"),
        (("CCl", "CCO"), (0.5,), "CCOCC"),
        (("CI", "CCO"), (0.7,), "CCOCCC"),
    ]
    base = [score_route(r, a, p, cm).gamma for r, a, p in routes]
    scaled = [
        score_route(r, tuple(0.3 * x for x in a), p, cm).gamma
        for r, a, p in routes
    ]
    assert np.argsort(base).tolist() == np.argsort(scaled).tolist()


# -- x-means --------------------------------------------------------------------


def test_xmeans_identical_points_single_cluster():
    labels = xmeans(np.zeros((40, 5)), k_max=8, seed=0)
    assert set(labels.tolist()) == {0}


def test_xmeans_two_blobs():
    rng = np.random.default_rng(0)
    spread = 0.5
    a = rng.normal(0.0, spread, (100, 4))
    b = rng.normal(10.0, spread, (100, 4))  # centers 10x the spread apart
    X = np.vstack([a, b])
    labels = xmeans(X, k_max=10, seed=1)
    assert len(set(labels.tolist())) == 2
    # the split's BIC must beat the parent's, checked with the same formula
    parent = _bic(X, np.zeros(len(X), dtype=np.int64), X.mean(0, keepdims=True))
    halves = np.array([0] * 100 + [1] * 100)
    centers = np.vstack([a.mean(0), b.mean(0)])
    assert _bic(X, halves, centers) > parent
    # cluster assignment separates the blobs
    assert len(set(labels[:100].tolist())) == 1
    assert len(set(labels[100:].tolist())) == 1


def test_xmeans_respects_k_max():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(c * 8, 0.3, (30, 3)) for c in range(5)])
    assert len(set(xmeans(X, k_max=1, seed=0).tolist())) == 1
    assert len(set(xmeans(X, k_max=3, seed=0).tolist())) <= 3


def test_xmeans_partitions_input():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(57, 4))
    labels = xmeans(X, k_max=6, seed=2)
    assert labels.shape == (57,)
    assert set(labels.tolist()) == set(range(len(set(labels.tolist()))))


def test_xmeans_deterministic():
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(0, 1, (40, 3)), rng.normal(6, 1, (40, 3))])
    a = xmeans(X, k_max=8, seed=9)
    b = xmeans(X, k_max=8, seed=9)
    assert np.array_equal(a, b)


# -- representatives -------------------------------------------------------------


def test_representatives_singletons():
    reps = representatives({"a": 0, "b": 1}, {"a": 0.1, "b": 0.2})
    assert reps == {0: "a", 1: "b"}


def test_representatives_max_gamma_wins():
    reps = representatives({"a": 0, "b": 0}, {"a": 0.3, "b": 0.7})
    assert reps == {0: "b"}


def test_representatives_tie_breaks_by_key():
    reps = representatives({"b": 0, "a": 0}, {"a": 0.5, "b": 0.5})
    assert reps == {0: "a"}


def test_representatives_bijection_over_many_clusters():
    rng = np.random.default_rng(8)
    n_clusters = 12
    X = np.vstack(
        [rng.normal(8 * c, 0.2, (10, 3)) for c in range(n_clusters)]
    )
    labels = xmeans(X, k_max=20, seed=0)
    keys = [f"k{i:03d}" for i in range(len(X))]
    assignments = {k: int(c) for k, c in zip(keys, labels)}
    scores = {k: float(rng.random()) for k in keys}
    reps = representatives(assignments, scores)
    # exactly one representative per cluster, all distinct, each attaining
    # its cluster's maximum
    assert sorted(reps) == sorted(set(labels.tolist()))
    assert len(set(reps.values())) == len(reps)
    for cid, key in reps.items():
        members = [k for k, c in assignments.items() if c == cid]
        assert scores[key] == max(scores[k] for k in members)


def test_representatives_requires_scores():
    with pytest.raises(KeyError):
        representatives({"a": 0}, {})
