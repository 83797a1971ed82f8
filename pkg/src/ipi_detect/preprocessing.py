from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .traces import N_FEATURES, ONE_HOT_INDICES


@dataclass(frozen=True)
class NormalizationParams:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.mins > self.maxs):
            raise ValueError("min must not exceed max")

    def to_pairs(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.mins, self.maxs)]

    @classmethod
    def from_pairs(cls, pairs) -> "NormalizationParams":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_pairs()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NormalizationParams":
        return cls.from_pairs(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_normalizer(vectors, one_hot=None) -> NormalizationParams:
    """Per-feature min/max; one-hot dimensions are pinned to (0, 1).

    ``one_hot`` defaults to the canonical one-hot block when vectors have the
    full feature width.
    """
    X = np.asarray(vectors, dtype=float)
    if X.size == 0:
        raise ValueError("cannot fit a normalizer on empty input")
    X = X.reshape(-1, X.shape[-1])
    mins, maxs = X.min(axis=0), X.max(axis=0)
    if one_hot is None and X.shape[-1] == N_FEATURES:
        one_hot = ONE_HOT_INDICES
    if one_hot is not None:
        mins[one_hot], maxs[one_hot] = 0.0, 1.0
    return NormalizationParams(mins, maxs)


def apply_normalizer(params: NormalizationParams, vector) -> np.ndarray:
    """Scale to [0, 1] with clamping; constant features map to 0."""
    v = np.asarray(vector, dtype=float)
    width = params.maxs - params.mins
    safe = np.where(width > 0, width, 1.0)
    out = np.clip((v - params.mins) / safe, 0.0, 1.0)
    return np.where(width > 0, out, 0.0)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_normalizer` / :func:`apply_normalizer`.

    Accepts ``(n, d)`` rows or ``(N, T, d)`` window stacks.
    """

    def __init__(self, one_hot=None):
        self.one_hot = one_hot

    def fit(self, X, y=None):
        self.params_ = fit_normalizer(X, self.one_hot)
        self.n_features_in_ = self.params_.mins.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = np.asarray(X)
        if X.shape[-1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[-1]}")
        return apply_normalizer(self.params_, X).astype(np.float32)

    @classmethod
    def from_params(cls, params: NormalizationParams) -> "MinMaxNormalizer":
        est = cls()
        est.params_ = params
        est.n_features_in_ = params.mins.shape[0]
        return est
