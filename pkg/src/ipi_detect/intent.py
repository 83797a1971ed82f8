"""Intent branch: LSTM-CNN classifier over INT+APP windows, plus comparator backbones."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from . import _nn
from .taxonomy import action_category, class_names, nio_index, taxonomy_lookup

BACKBONES = ("lstm_cnn", "lstm", "cnn", "transformer")


# ---------------------------------------------------------------------------
# cross-entropy over a soft label distribution, in numpy (reference for tests)

def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, targets) -> float:
    """Mean over samples of ``-sum_c b_c log p_c``; ``targets`` are class ids or distributions."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    b = _as_distribution(targets, z.shape[1])
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(b * logp).sum(axis=1).mean())


def cross_entropy_grad(logits, targets) -> np.ndarray:
    """Analytic gradient of :func:`cross_entropy` with respect to the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    b = _as_distribution(targets, z.shape[1])
    return (softmax(z) * b.sum(axis=1, keepdims=True) - b) / len(z)


def _as_distribution(targets, C: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 1 and np.issubdtype(t.dtype, np.integer):
        if t.min(initial=0) < 0 or t.max(initial=0) >= C:
            raise ValueError("class index out of range")
        return np.eye(C)[t]
    return np.atleast_2d(t.astype(np.float64))


# ---------------------------------------------------------------------------
# backbones

class _Head(nn.Module):
    """Two dropout + dense blocks; the first block's activation is the hidden vector."""

    def __init__(self, in_features: int, dense_units: int, n_classes: int, dropout: float):
        super().__init__()
        self.hidden = nn.Sequential(nn.Dropout(dropout), nn.Linear(in_features, dense_units), nn.ReLU())
        self.out = nn.Sequential(nn.Dropout(dropout), nn.Linear(dense_units, n_classes))

    def forward(self, h):
        return self.out(self.hidden(h))


class _LstmPath(nn.Module):
    def __init__(self, d: int, units: int):
        super().__init__()
        self.lstm = nn.LSTM(d, units, batch_first=True)
        self.size = units

    def forward(self, x):
        return self.lstm(x)[1][0][-1]


class _ConvPath(nn.Module):
    def __init__(self, d: int, T: int, filters: int, kernel: int):
        super().__init__()
        self.conv = nn.Conv1d(d, filters, kernel)
        self.pool = nn.MaxPool1d(2)
        self.size = filters * ((T - kernel + 1) // 2)

    def forward(self, x):
        # activation before pooling
        return self.pool(torch.relu(self.conv(x.transpose(1, 2)))).flatten(1)


class _TransformerPath(nn.Module):
    def __init__(self, d: int, T: int, model_dim: int = 64, n_heads: int = 4, n_layers: int = 2):
        super().__init__()
        self.proj = nn.Linear(d, model_dim)
        self.pos = nn.Parameter(torch.zeros(1, T, model_dim))
        layer = nn.TransformerEncoderLayer(
            model_dim, n_heads, dim_feedforward=2 * model_dim, dropout=0.1, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)
        self.size = model_dim

    def forward(self, x):
        return self.encoder(self.proj(x) + self.pos).mean(dim=1)


class _IntentNet(nn.Module):
    def __init__(self, backbone, T, d, n_classes, lstm_units, conv_filters, kernel_size, dense_units, dropout):
        super().__init__()
        paths = []
        if backbone in ("lstm_cnn", "lstm"):
            paths.append(_LstmPath(d, lstm_units))
        if backbone in ("lstm_cnn", "cnn"):
            paths.append(_ConvPath(d, T, conv_filters, kernel_size))
        if backbone == "transformer":
            paths.append(_TransformerPath(d, T))
        self.paths = nn.ModuleList(paths)
        self.head = _Head(sum(p.size for p in paths), dense_units, n_classes, dropout)

    def features(self, x):
        return torch.cat([p(x) for p in self.paths], dim=1)

    def hidden(self, x):
        return self.head.hidden(self.features(x))

    def forward(self, x):
        return self.head(self.features(x))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntentDistribution:
    probs: np.ndarray
    granularity: str
    nio_index: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("probs must be a non-negative vector summing to 1")
        if not 0 <= self.nio_index < len(p):
            raise ValueError("nio_index out of range")

    def topk(self, k: int) -> list[tuple[int, float]]:
        return topk(self.probs, k)

    def named_topk(self, k: int) -> list[tuple[str, float]]:
        names = class_names(self.granularity)
        return [(names[c], p) for c, p in self.topk(k)]


def topk(probs, k: int) -> list[tuple[int, float]]:
    """``k`` most probable classes, descending; ties go to the lower class index."""
    p = np.asarray(probs, dtype=np.float64)
    if not 1 <= k <= len(p):
        raise ValueError(f"k must be in [1, {len(p)}]")
    order = np.argsort(-p, kind="stable")[:k]
    return [(int(c), float(p[c])) for c in order]


def topk_hits(probs, labels, k: int) -> np.ndarray:
    """Per-row indicator that the label is among the ``k`` most probable classes."""
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    order = np.argsort(-P, axis=1, kind="stable")[:, :k]
    return (order == y[:, None]).any(axis=1)


def topk_accuracy(probs, labels, k: int) -> float:
    return float(topk_hits(probs, labels, k).mean()) if len(labels) else float("nan")


def hierarchy_agreement(fine_probs, coarse_probs, fine: str = "subaction", coarse: str = "category") -> float:
    """Share of windows whose fine-grained top-1, mapped up the taxonomy, equals the
    coarse model's top-1. Diagnostic only."""
    fine_names, coarse_names = class_names(fine), class_names(coarse)
    up = np.array([coarse_names.index(_parent(n, fine, coarse)) for n in fine_names])
    a = up[np.argmax(np.asarray(fine_probs), axis=1)]
    b = np.argmax(np.asarray(coarse_probs), axis=1)
    return float(np.mean(a == b)) if len(a) else float("nan")


def _parent(name: str, fine: str, coarse: str) -> str:
    if fine == coarse:
        return name
    if fine == "action":
        return action_category(name)
    action, category = taxonomy_lookup(name)
    return action if coarse == "action" else category


class IntentClassifier(ClassifierMixin, BaseEstimator):
    """Window-level intent classifier.

    ``granularity`` is one of ``category`` / ``action`` / ``subaction``, or
    ``binary`` for a two-class model (used by the monolithic baseline).
    Targets are integer class indices.
    """

    def __init__(
        self,
        backbone: str = "lstm_cnn",
        granularity: str = "action",
        max_epochs: int = 50,
        batch_size: int = 512,
        learning_rate: float = 1e-3,
        lstm_units: int = 64,
        conv_filters: int = 64,
        kernel_size: int = 3,
        dense_units: int = 128,
        dropout: float = 0.3,
        random_state: int = 0,
    ):
        self.backbone = backbone
        self.granularity = granularity
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lstm_units = lstm_units
        self.conv_filters = conv_filters
        self.kernel_size = kernel_size
        self.dense_units = dense_units
        self.dropout = dropout
        self.random_state = random_state

    @property
    def n_classes(self) -> int:
        return 2 if self.granularity == "binary" else len(class_names(self.granularity))

    @property
    def nio_index(self) -> int | None:
        return None if self.granularity == "binary" else nio_index(self.granularity)

    def _build(self, T: int, d: int) -> None:
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; choose from {BACKBONES}")
        _nn.seed_everything(self.random_state)
        self.module_ = _IntentNet(
            self.backbone, T, d, self.n_classes, self.lstm_units, self.conv_filters,
            self.kernel_size, self.dense_units, self.dropout,
        )
        self.input_shape_ = (T, d)

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y)
        if X.ndim != 3:
            raise ValueError(f"expected (N, T, d) windows, got {X.shape}")
        if len(X) != len(y) or len(X) == 0:
            raise ValueError("X and y must be non-empty and of equal length")
        C = self.n_classes
        if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= C:
            raise ValueError(f"labels must be integer class indices in [0, {C})")
        self._build(X.shape[1], X.shape[2])
        self.classes_ = np.arange(C)
        self.history_ = _nn.train_loop(
            self.module_,
            nn.functional.cross_entropy,
            X,
            y.astype(np.int64),
            epochs=self.max_epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            seed=self.random_state,
            y_dtype=torch.long,
        )
        return self

    def _check(self, X) -> np.ndarray:
        check_is_fitted(self, "module_")
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != self.input_shape_:
            raise ValueError(f"window shape {X.shape[1:]} does not match model input {self.input_shape_}")
        return X

    def decision_function(self, X) -> np.ndarray:
        return _nn.predict_batches(self.module_, self._check(X))

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def hidden(self, X) -> np.ndarray:
        """Penultimate dense activations (``dense_units`` wide)."""
        return _nn.predict_batches(self.module_, self._check(X), fn=self.module_.hidden)

    def predict_distribution(self, window) -> IntentDistribution:
        if self.granularity == "binary":
            raise ValueError("binary models carry no intent taxonomy")
        p = self.predict_proba(window)[0]
        return IntentDistribution(p, self.granularity, self.nio_index)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.module_.parameters())
