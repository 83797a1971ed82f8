"""Temporal smoothing of both branches, the context-aware risk score and its threshold."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.cluster import KMeans


def default_grid() -> np.ndarray:
    return np.round(np.arange(201) * 0.01, 2)


@dataclass
class FusionParams:
    k: int = 1
    eps: float = 1e-6
    threshold: float | None = None
    grid_start: float = 0.0
    grid_stop: float = 2.0
    grid_step: float = 0.01

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")

    @property
    def grid(self) -> np.ndarray:
        n = int(round((self.grid_stop - self.grid_start) / self.grid_step)) + 1
        return np.round(self.grid_start + np.arange(n) * self.grid_step, 10)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TcmParams:
    w_stat: int = 10
    w_vote: int = 10
    n_clusters: int = 2
    w_avg: int = 5
    seed: int = 0
    anchor_sign: bool = False

    def __post_init__(self):
        if min(self.w_stat, self.w_vote, self.w_avg) < 1:
            raise ValueError("TCM windows must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FusionDecision:
    u_hat: int
    score: float
    y_hat: int
    topk: list = field(default_factory=list)
    window: int | None = None


# ---------------------------------------------------------------------------
# temporal consistency

def rolling_stats(x: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean and (population) std; the first ``w-1`` points use the available prefix."""
    x = np.asarray(x, dtype=np.float64)
    c1 = np.concatenate([[0.0], np.cumsum(x)])
    c2 = np.concatenate([[0.0], np.cumsum(x * x)])
    hi = np.arange(1, len(x) + 1)
    lo = np.maximum(hi - w, 0)
    cnt = hi - lo
    mean = (c1[hi] - c1[lo]) / cnt
    var = np.maximum((c2[hi] - c2[lo]) / cnt - mean**2, 0.0)
    return mean, np.sqrt(var)


def majority_vote(labels: np.ndarray, w: int) -> np.ndarray:
    """Centred majority over ``w`` consecutive labels (truncated at the edges); ties give 1."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if w <= 1 or n == 0:
        return labels.copy()
    before = w // 2
    after = w - before - 1
    c = np.concatenate([[0], np.cumsum(labels)])
    i = np.arange(n)
    lo = np.maximum(i - before, 0)
    hi = np.minimum(i + after + 1, n)
    ones = c[hi] - c[lo]
    return (2 * ones >= hi - lo).astype(np.int64)


def cluster_labels(scores: np.ndarray, params: TcmParams) -> np.ndarray:
    """Per-window owner (0) / non-owner (1) assignment before voting.

    Rolling mean/std features are split into two clusters; the cluster whose
    member scores have the lower mean is the owner. With ``anchor_sign`` the
    split is only kept when the two cluster means straddle the head's decision
    boundary (0); otherwise every window takes the sign label of its cluster
    mean, so a single-population stream is not split.
    """
    s = np.asarray(scores, dtype=np.float64)
    mean, std = rolling_stats(s, params.w_stat)
    feats = np.column_stack([mean, std])
    n_distinct = len(np.unique(feats.round(12), axis=0))
    if n_distinct < params.n_clusters:
        return np.full(len(s), int(s.mean() > 0), dtype=np.int64)
    km = KMeans(n_clusters=params.n_clusters, n_init=10, random_state=params.seed).fit(feats)
    assign = km.labels_
    cmeans = np.array([s[assign == c].mean() for c in range(params.n_clusters)])
    order = np.argsort(cmeans, kind="stable")
    rank_label = np.zeros(params.n_clusters, dtype=np.int64)
    rank_label[order[1:]] = 1
    if params.anchor_sign and (np.all(cmeans > 0) or np.all(cmeans <= 0)):
        rank_label = (cmeans > 0).astype(np.int64)
    return rank_label[assign]


def tcm_identity(scores, params: TcmParams | None = None) -> np.ndarray:
    """Smooth a time-ordered identity score stream into owner/non-owner labels."""
    params = params or TcmParams()
    s = np.asarray(scores, dtype=np.float64)
    if len(s) == 0:
        raise ValueError("need at least one score")
    return majority_vote(cluster_labels(s, params), params.w_vote)


def tcm_intent(dists, params: TcmParams | None = None) -> np.ndarray:
    """Trailing average of the last ``w_avg`` distributions, renormalised."""
    params = params or TcmParams()
    P = np.asarray(dists, dtype=np.float64)
    if P.ndim != 2 or len(P) == 0:
        raise ValueError("need a non-empty (N, C) array of distributions")
    c = np.vstack([np.zeros(P.shape[1]), np.cumsum(P, axis=0)])
    hi = np.arange(1, len(P) + 1)
    lo = np.maximum(hi - params.w_avg, 0)
    avg = (c[hi] - c[lo]) / (hi - lo)[:, None]
    return avg / avg.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# fusion score, threshold, decision

def fusion_score(dist, nio_index: int, k: int = 1, eps: float = 1e-6):
    """NIO confidence ratio times the NIO margin over the strongest suspicious classes.

    ``dist`` is one distribution or an ``(N, C)`` stack. The margin subtracts
    the mean of the ``k-1`` largest non-NIO probabilities (the single largest
    when ``k == 1``).
    """
    P = np.asarray(dist, dtype=np.float64)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    C = P.shape[1]
    if not 1 <= k <= C:
        raise ValueError(f"k must be in [1, {C}]")
    nio = P[:, nio_index]
    others = np.delete(P, nio_index, axis=1)
    ratio = nio / (others.sum(axis=1) + eps)
    m = max(k - 1, 1)
    top = -np.sort(-others, axis=1)[:, :m]
    S = ratio * (nio - top.mean(axis=1))
    return float(S[0]) if single else S


def _f1_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def calibrate_threshold(scores, labels, grid=None) -> float:
    """Grid value maximising F1 of ``y_hat = [S <= T]``; ties go to the smallest T."""
    S = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if len(S) != len(y):
        raise ValueError("scores and labels differ in length")
    if len(np.unique(y)) < 2:
        raise ValueError("validation set must contain both classes")
    grid = default_grid() if grid is None else np.sort(np.asarray(grid, dtype=np.float64))
    pred = S[None, :] <= grid[:, None]
    pos = (y == 1)[None, :]
    tp = (pred & pos).sum(1)
    fp = (pred & ~pos).sum(1)
    fn = (~pred & pos).sum(1)
    f1 = _f1_counts(tp, fp, fn)
    return float(grid[int(np.argmax(f1))])


def decide(u_hat, score, threshold: float):
    """Owner windows are always safe; otherwise flag when the score does not exceed T."""
    u = np.asarray(u_hat)
    S = np.asarray(score, dtype=np.float64)
    y = np.where(u == 0, 0, np.where(S > threshold, 0, 1))
    return int(y) if y.ndim == 0 else y.astype(np.int64)
