"""Few-shot owner adaptation of the identity head on a frozen autoencoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _nn
from .identity import IdentityHead, MultiHeadLSTMAutoencoder, fit_identity_head

SCHEMES = ("random", "time", "similarity")


@dataclass
class AdaptationConfig:
    n_shots: int = 20
    scheme: str = "random"
    # hard / mid / easy fractions for the similarity scheme
    mix: tuple = (0.3, 0.5, 0.2)
    n_pool_users: int = 3
    seed: int = 0
    # cap on negative-pool windows used to rank owner windows by similarity
    max_similarity_pool: int = 512

    def __post_init__(self):
        if self.n_shots < 1:
            raise ValueError("n_shots must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        self.mix = tuple(float(m) for m in self.mix)
        if len(self.mix) != 3 or any(m < 0 for m in self.mix) or abs(sum(self.mix) - 1.0) > 1e-9:
            raise ValueError("mix must be three non-negative fractions summing to 1")

    def to_dict(self) -> dict:
        return asdict(self)


def similarity_counts(n: int, mix=(0.3, 0.5, 0.2)) -> tuple[int, int, int]:
    """Rounded hard/mid/easy counts; the middle band absorbs rounding so the total is ``n``."""
    hard = int(round(mix[0] * n))
    easy = int(round(mix[2] * n))
    easy = min(easy, n - hard)
    return hard, n - hard - easy, easy


def mean_cosine_similarity(A, B) -> np.ndarray:
    """For each row of ``A`` the mean cosine similarity to the rows of ``B`` (flattened windows)."""
    A = np.asarray(A, dtype=np.float64).reshape(len(A), -1)
    B = np.asarray(B, dtype=np.float64).reshape(len(B), -1)
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nb = np.linalg.norm(B, axis=1, keepdims=True)
    A = A / np.where(na > 0, na, 1.0)
    B = B / np.where(nb > 0, nb, 1.0)
    return (A @ B.T).mean(axis=1)


def select_calibration_windows(owner_windows, config: AdaptationConfig, negative_pool=None, start_times=None) -> np.ndarray:
    """Indices of the owner calibration windows used as shots.

    ``start_times`` orders windows for the time scheme (input order when
    omitted). The similarity scheme needs ``negative_pool``.
    """
    n_avail = len(owner_windows)
    n = min(config.n_shots, n_avail)
    if n_avail == 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    if config.scheme == "random":
        return np.sort(rng.choice(n_avail, n, replace=False))
    if config.scheme == "time":
        order = np.argsort(start_times, kind="stable") if start_times is not None else np.arange(n_avail)
        return np.sort(order[:n])
    if negative_pool is None or len(negative_pool) == 0:
        raise ValueError("similarity scheme needs a negative pool")
    pool = np.asarray(negative_pool)
    if len(pool) > config.max_similarity_pool:
        pool = pool[rng.choice(len(pool), config.max_similarity_pool, replace=False)]
    sim = mean_cosine_similarity(owner_windows, pool)
    ranked = np.argsort(-sim, kind="stable")  # most similar (hard) first
    hard, mid, easy = similarity_counts(n, config.mix)
    centre = n_avail // 2
    lo = int(np.clip(centre - mid // 2, hard, max(n_avail - easy - mid, hard)))
    chosen = np.concatenate([ranked[:hard], ranked[lo : lo + mid], ranked[n_avail - easy :] if easy else []])
    return np.sort(chosen.astype(np.int64))


def adapt(
    ae: MultiHeadLSTMAutoencoder,
    owner_calibration,
    negative_pool,
    config: AdaptationConfig | None = None,
    owner_start_times=None,
    pool_users=(),
) -> IdentityHead:
    """Fit the identity head from the owner's calibration windows; the AE stays frozen.

    Owner shots are chosen by ``config.scheme``; the same number of negative
    windows is drawn uniformly from ``negative_pool`` so training is 1:1.
    """
    config = config or AdaptationConfig()
    owner = np.asarray(owner_calibration, dtype=np.float32)
    pool = np.asarray(negative_pool, dtype=np.float32)
    if len(owner) == 0 or len(pool) == 0:
        raise ValueError("owner calibration windows and negative pool must both be non-empty")
    before = _nn.weights_hash(ae.module_)
    idx = select_calibration_windows(owner, config, pool, owner_start_times)
    rng = np.random.default_rng([config.seed, 1])
    neg_idx = np.sort(rng.choice(len(pool), min(len(idx), len(pool)), replace=False))
    head = fit_identity_head(ae.transform(owner[idx]), ae.transform(pool[neg_idx]))
    if _nn.weights_hash(ae.module_) != before:
        raise RuntimeError("autoencoder weights changed during adaptation")
    head.provenance_ = {
        "seed": config.seed,
        "scheme": config.scheme,
        "n_shots": config.n_shots,
        "pool_users": list(pool_users),
        "owner_indices": idx.tolist(),
    }
    return head
