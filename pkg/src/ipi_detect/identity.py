"""Owner identification: multi-head LSTM autoencoder + RBF-SVM on difference vectors."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.svm import SVC
from sklearn.utils.validation import check_is_fitted
from torch import nn

from . import _nn


class _MultiHeadLSTMAE(nn.Module):
    def __init__(self, n_features: int, T: int, n_heads: int, head_units: int, decoder_units: int):
        super().__init__()
        self.T = T
        self.heads = nn.ModuleList(
            nn.LSTM(n_features, head_units, batch_first=True) for _ in range(n_heads)
        )
        self.decoder = nn.LSTM(n_heads * head_units, decoder_units, batch_first=True)
        self.output = nn.Linear(decoder_units, n_features)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        # every head sees the same sequence; final hidden states are concatenated
        return torch.cat([head(x)[1][0][-1] for head in self.heads], dim=1)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        seq = z.unsqueeze(1).expand(-1, self.T, -1)
        return self.output(self.decoder(seq)[0])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


class MultiHeadLSTMAutoencoder(TransformerMixin, BaseEstimator):
    """Sequence autoencoder with ``n_heads`` parallel LSTM encoders.

    ``transform`` returns difference vectors (temporal mean of signed
    reconstruction residuals), the feature space of the identity head.
    Input windows are ``(N, T, d)`` and already normalised.
    """

    def __init__(
        self,
        n_heads: int = 8,
        head_units: int = 8,
        decoder_units: int = 32,
        max_epochs: int = 100,
        batch_size: int = 512,
        learning_rate: float = 1e-3,
        patience: int = 5,
        min_delta: float = 1e-4,
        validation_fraction: float = 0.1,
        random_state: int = 0,
    ):
        self.n_heads = n_heads
        self.head_units = head_units
        self.decoder_units = decoder_units
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.min_delta = min_delta
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _build(self, T: int, d: int) -> None:
        _nn.seed_everything(self.random_state)
        self.module_ = _MultiHeadLSTMAE(d, T, self.n_heads, self.head_units, self.decoder_units)
        self.input_shape_ = (T, d)

    def fit(self, X, y=None):
        X = _check_windows(X)
        if len(X) == 0:
            raise ValueError("cannot train an autoencoder on zero windows")
        self._build(X.shape[1], X.shape[2])
        self.history_ = _nn.train_loop(
            self.module_,
            nn.functional.mse_loss,
            X,
            X,
            epochs=self.max_epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            seed=self.random_state,
            patience=self.patience,
            min_delta=self.min_delta,
            validation_fraction=self.validation_fraction,
        )
        return self

    @property
    def latent_dim(self) -> int:
        return self.n_heads * self.head_units

    def _check_input(self, X) -> np.ndarray:
        check_is_fitted(self, "module_")
        X = _check_windows(X)
        if X.shape[1:] != self.input_shape_:
            raise ValueError(f"window shape {X.shape[1:]} does not match model input {self.input_shape_}")
        return X

    def reconstruct(self, X):
        """Return ``(reconstruction, mse)``; accepts one window or a stack."""
        single = np.ndim(X) == 2
        X = self._check_input(X[None] if single else X)
        rec = _nn.predict_batches(self.module_, X).reshape(X.shape)
        mse = ((X.astype(np.float64) - rec) ** 2).mean(axis=(1, 2))
        return (rec[0], float(mse[0])) if single else (rec, mse)

    def transform(self, X):
        X = self._check_input(X)
        rec, _ = self.reconstruct(X)
        return difference_vector(X, rec)

    def encode(self, X) -> np.ndarray:
        X = self._check_input(X)
        return _nn.predict_batches(self.module_, X, fn=self.module_.encode)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.module_.parameters())


def _check_windows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 3:
        raise ValueError(f"expected (N, T, d) windows, got shape {X.shape}")
    return X


def difference_vector(window, reconstruction) -> np.ndarray:
    """Temporal mean of the signed residual ``x - x_hat``.

    Works on a single ``(T, d)`` window or a ``(N, T, d)`` stack.
    """
    x = np.asarray(window, dtype=np.float64)
    xh = np.asarray(reconstruction, dtype=np.float64)
    if x.shape != xh.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xh.shape}")
    return (x - xh).mean(axis=-2)


class IdentityHead(ClassifierMixin, BaseEstimator):
    """RBF-SVM separating the owner (0) from everyone else (1).

    Inputs are standardised with statistics of the training set before the
    kernel is applied. The decision score is evaluated from the stored scaler
    and support vectors so a loaded head does not depend on a pickled sklearn
    object; score > 0 means non-owner.
    """

    def __init__(self, C: float = 1.0, gamma="scale"):
        self.C = C
        self.gamma = gamma

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y).astype(int)
        if set(np.unique(y)) != {0, 1}:
            raise ValueError("identity head needs both owner (0) and non-owner (1) samples")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        svc = SVC(kernel="rbf", C=self.C, gamma=self.gamma).fit((X - self.mean_) / self.scale_, y)
        self.support_vectors_ = svc.support_vectors_.copy()
        self.dual_coef_ = svc.dual_coef_.ravel().copy()
        self.intercept_ = float(svc.intercept_[0])
        self.gamma_ = float(svc._gamma)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "support_vectors_")
        X = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean_) / self.scale_
        sq = (
            (X**2).sum(1)[:, None]
            + (self.support_vectors_**2).sum(1)[None, :]
            - 2.0 * X @ self.support_vectors_.T
        )
        K = np.exp(-self.gamma_ * np.maximum(sq, 0.0))
        return K @ self.dual_coef_ + self.intercept_

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)

    @classmethod
    def from_params(cls, mean, scale, support_vectors, dual_coef, intercept, gamma, C=1.0) -> "IdentityHead":
        head = cls(C=C)
        head.mean_ = np.asarray(mean, dtype=np.float64)
        head.scale_ = np.asarray(scale, dtype=np.float64)
        head.support_vectors_ = np.asarray(support_vectors, dtype=np.float64)
        head.dual_coef_ = np.asarray(dual_coef, dtype=np.float64).ravel()
        head.intercept_ = float(intercept)
        head.gamma_ = float(gamma)
        head.classes_ = np.array([0, 1])
        return head


def balance_one_to_one(owner, other, rng: np.random.Generator | None = None):
    """Truncate the larger set so both have equal size (random subset when ``rng`` is given)."""
    owner, other = np.asarray(owner), np.asarray(other)
    n = min(len(owner), len(other))

    def cut(a):
        if len(a) == n:
            return a
        return a[np.sort(rng.choice(len(a), n, replace=False))] if rng is not None else a[:n]

    return cut(owner), cut(other)


def fit_identity_head(owner_dvs, other_dvs, rng=None, **head_kw) -> IdentityHead:
    owner_dvs = np.asarray(owner_dvs, dtype=np.float64)
    other_dvs = np.asarray(other_dvs, dtype=np.float64)
    if len(owner_dvs) == 0 or len(other_dvs) == 0:
        raise ValueError("both owner and non-owner difference vectors are required")
    owner_dvs, other_dvs = balance_one_to_one(owner_dvs, other_dvs, rng)
    X = np.concatenate([owner_dvs, other_dvs])
    y = np.r_[np.zeros(len(owner_dvs), int), np.ones(len(other_dvs), int)]
    head = IdentityHead(**head_kw).fit(X, y)
    head.n_train_ = (len(owner_dvs), len(other_dvs))
    return head


def predict_identity(head: IdentityHead, dv) -> tuple:
    """``(u_hat, score)`` for one difference vector, or arrays for a stack."""
    single = np.ndim(dv) == 1
    score = head.decision_function(np.atleast_2d(dv))
    label = (score > 0).astype(int)
    return (int(label[0]), float(score[0])) if single else (label, score)
