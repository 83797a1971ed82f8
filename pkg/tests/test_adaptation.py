import numpy as np
import pytest

from ipi_detect import _nn
from ipi_detect.adaptation import (
    AdaptationConfig,
    adapt,
    mean_cosine_similarity,
    select_calibration_windows,
    similarity_counts,
)
from ipi_detect.identity import MultiHeadLSTMAutoencoder


@pytest.fixture(scope="module")
def owner():
    return np.random.default_rng(0).random((100, 10, 4)).astype(np.float32)


@pytest.fixture(scope="module")
def pool():
    return (np.random.default_rng(1).random((60, 10, 4)) + 0.3).astype(np.float32)


@pytest.fixture(scope="module")
def ae(owner):
    return MultiHeadLSTMAutoencoder(n_heads=2, head_units=4, decoder_units=8, max_epochs=2).fit(owner)


def test_time_scheme_earliest(owner):
    starts = np.random.default_rng(2).permutation(100).astype(float)
    idx = select_calibration_windows(owner, AdaptationConfig(scheme="time"), start_times=starts)
    assert sorted(starts[idx]) == list(range(20))


def test_random_scheme_deterministic(owner):
    a = select_calibration_windows(owner, AdaptationConfig(seed=5))
    b = select_calibration_windows(owner, AdaptationConfig(seed=5))
    c = select_calibration_windows(owner, AdaptationConfig(seed=6))
    assert np.array_equal(a, b) and len(a) == 20 and len(set(a)) == 20
    assert not np.array_equal(a, c)


def test_similarity_counts():
    assert similarity_counts(20) == (6, 10, 4)
    for n in range(1, 60):
        assert sum(similarity_counts(n)) == n


def test_similarity_scheme_bands(owner, pool):
    idx = select_calibration_windows(owner, AdaptationConfig(scheme="similarity"), pool)
    assert len(idx) == 20
    # brute-force ranking of owner windows by mean cosine similarity to the pool
    def cos(a, b):
        a, b = a.ravel().astype(float), b.ravel().astype(float)
        return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))

    sim = np.array([np.mean([cos(o, p) for p in pool]) for o in owner])
    assert np.allclose(sim, mean_cosine_similarity(owner, pool))
    rank = {int(w): r for r, w in enumerate(np.argsort(-sim, kind="stable"))}
    ranks = sorted(rank[int(i)] for i in idx)
    assert ranks[:6] == list(range(6))  # hard: most similar
    assert ranks[-4:] == list(range(96, 100))  # easy: least similar
    assert ranks[6:16] == list(range(45, 55))  # mid band around the median


def test_fewer_windows_than_shots(owner):
    for scheme in ("random", "time"):
        idx = select_calibration_windows(owner[:7], AdaptationConfig(scheme=scheme))
        assert idx.tolist() == list(range(7))


def test_similarity_needs_pool(owner):
    with pytest.raises(ValueError):
        select_calibration_windows(owner, AdaptationConfig(scheme="similarity"))


@pytest.mark.parametrize("kw", [{"n_shots": 0}, {"scheme": "magic"}, {"mix": (0.5, 0.5, 0.5)}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        AdaptationConfig(**kw)


def test_adapt_keeps_ae_frozen(ae, owner, pool):
    before = _nn.weights_hash(ae.module_)
    head = adapt(ae, owner, pool, AdaptationConfig(), pool_users=["u10", "u11", "u12"])
    assert _nn.weights_hash(ae.module_) == before
    assert head.n_train_ == (20, 20)
    assert head.provenance_["pool_users"] == ["u10", "u11", "u12"]
    assert head.provenance_["scheme"] == "random" and len(head.provenance_["owner_indices"]) == 20


def test_adapt_deterministic(ae, owner, pool):
    probe = ae.transform(owner[:10])
    a = adapt(ae, owner, pool, AdaptationConfig(seed=3)).decision_function(probe)
    b = adapt(ae, owner, pool, AdaptationConfig(seed=3)).decision_function(probe)
    assert np.array_equal(a, b)


def test_adapt_empty_pools(ae, owner):
    with pytest.raises(ValueError):
        adapt(ae, owner, np.zeros((0, 10, 4), np.float32))
    with pytest.raises(ValueError):
        adapt(ae, np.zeros((0, 10, 4), np.float32), owner)
