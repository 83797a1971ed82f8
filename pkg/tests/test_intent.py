import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ipi_detect.intent import (
    BACKBONES,
    IntentClassifier,
    IntentDistribution,
    cross_entropy,
    cross_entropy_grad,
    hierarchy_agreement,
    softmax,
    topk,
    topk_accuracy,
)
from ipi_detect.taxonomy import SUBACTIONS, class_names, subaction_to_index


def toy_set(C=5, per_class=2, T=10, d=15, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(C), per_class)
    X = 0.05 * rng.random((len(y), T, d))
    X[np.arange(len(y)), :, y] += 1.0  # class c lights up feature c
    return X.astype(np.float32), y


@pytest.fixture(scope="module")
def overfit():
    X, y = toy_set()
    return X, y, IntentClassifier(granularity="category", max_epochs=50, learning_rate=1e-2).fit(X, y)


# -- cross-entropy -------------------------------------------------------------

def test_one_hot_cross_entropy_is_neg_log_p():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(6, 9))
    y = rng.integers(0, 9, 6)
    p = softmax(z)
    assert abs(cross_entropy(z, y) - np.mean(-np.log(p[np.arange(6), y]))) < 1e-9


def test_cross_entropy_matches_torch():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(16, 28))
    y = rng.integers(0, 28, 16)
    ref = torch.nn.functional.cross_entropy(torch.as_tensor(z), torch.as_tensor(y)).item()
    assert abs(cross_entropy(z, y) - ref) < 1e-9


def test_cross_entropy_gradient_check():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(20):
        N, C = rng.integers(1, 5), rng.integers(2, 10)
        z = rng.normal(size=(N, C))
        b = rng.dirichlet(np.ones(C), size=N)
        g = cross_entropy_grad(z, b)
        num = np.zeros_like(z)
        for i in range(N):
            for j in range(C):
                zp, zm = z.copy(), z.copy()
                zp[i, j] += h
                zm[i, j] -= h
                num[i, j] = (cross_entropy(zp, b) - cross_entropy(zm, b)) / (2 * h)
        assert np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-8)) < 1e-4


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


# -- training ------------------------------------------------------------------

def test_overfit_toy(overfit):
    X, y, model = overfit
    assert np.mean(model.predict(X) == y) == 1.0


def test_initial_loss_near_log_c():
    rng = np.random.default_rng(3)
    y = np.repeat(np.arange(9), 20)
    X = rng.random((len(y), 10, 15)).astype(np.float32)
    model = IntentClassifier(max_epochs=1).fit(X, y)
    assert abs(model.history_["initial"] - math.log(9)) < 0.2 * math.log(9)


def test_invalid_labels():
    X, _ = toy_set()
    with pytest.raises(ValueError):
        IntentClassifier(granularity="category", max_epochs=1).fit(X, np.full(len(X), 5))
    with pytest.raises(ValueError):
        IntentClassifier(max_epochs=1).fit(X, np.full(len(X), -1))


def test_prediction_contract(overfit):
    X, _, model = overfit
    P = model.predict_proba(X)
    assert P.shape == (len(X), 5)
    assert np.allclose(P.sum(axis=1), 1, atol=1e-6)
    assert np.array_equal(P, model.predict_proba(X))
    twin = model.predict_proba(np.stack([X[0], X[0]]))
    assert np.array_equal(twin[0], twin[1])
    dist = model.predict_distribution(X[0])
    assert dist.granularity == "category" and class_names("category")[dist.nio_index] == "NIO"


def test_shape_mismatch(overfit):
    with pytest.raises(ValueError):
        overfit[2].predict_proba(np.zeros((1, 10, 14), np.float32))


@pytest.mark.parametrize("backbone", BACKBONES)
def test_backbones(backbone):
    X, y = toy_set(C=9, per_class=3, T=40)
    model = IntentClassifier(backbone=backbone, max_epochs=1).fit(X, y)
    assert model.predict_proba(X).shape == (len(X), 9)
    assert model.hidden(X).shape == (len(X), 128)
    assert 10_000 < model.n_parameters() < 1_000_000


def test_default_topology_size():
    model = IntentClassifier()
    model._build(40, 15)
    # LSTM(64) + Conv(64, k=3) -> pool -> dense 128 -> dense 9
    lstm = 4 * 64 * (15 + 64 + 2)
    conv = 64 * 15 * 3 + 64
    dense = (64 + 64 * 19) * 128 + 128 + 128 * 9 + 9
    assert model.n_parameters() == lstm + conv + dense


def test_unknown_backbone():
    X, y = toy_set()
    with pytest.raises(ValueError):
        IntentClassifier(backbone="gru", granularity="category", max_epochs=1).fit(X, y)


# -- top-k ---------------------------------------------------------------------

def test_topk_examples():
    assert [c for c, _ in topk([0.5, 0.3, 0.2], 2)] == [0, 1]
    assert [c for c, _ in topk([0.4, 0.4, 0.2], 1)] == [0]
    with pytest.raises(ValueError):
        topk([0.5, 0.5], 3)
    with pytest.raises(ValueError):
        topk([0.5, 0.5], 0)


@settings(max_examples=200)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=12))
def test_topk_full_ranking_vs_sort(weights):
    p = np.asarray(weights, float) + 1e-3
    p /= p.sum()
    ranked = [c for c, _ in topk(p, len(p))]
    assert ranked == sorted(range(len(p)), key=lambda c: (-p[c], c))


def test_topk_accuracy_monotone():
    rng = np.random.default_rng(4)
    P = rng.dirichlet(np.ones(9), 300)
    y = rng.integers(0, 9, 300)
    acc = [topk_accuracy(P, y, k) for k in range(1, 10)]
    assert all(a <= b for a, b in zip(acc, acc[1:])) and acc[-1] == 1.0


def test_distribution_validation():
    with pytest.raises(ValueError):
        IntentDistribution(np.array([0.5, 0.6]), "category", 0)
    with pytest.raises(ValueError):
        IntentDistribution(np.array([0.5, 0.5]), "category", 2)
    d = IntentDistribution(softmax(np.arange(9.0)), "action", 8)
    assert d.named_topk(1)[0][0] == class_names("action")[8]


def test_hierarchy_agreement():
    fine = np.eye(28)[subaction_to_index(list(SUBACTIONS), "subaction")]
    coarse = np.eye(5)[subaction_to_index(list(SUBACTIONS), "category")]
    assert hierarchy_agreement(fine, coarse) == 1.0
    assert hierarchy_agreement(fine, np.roll(coarse, 1, axis=1)) == 0.0
