"""End-to-end baselines and black-box fusion comparators on a prepared fold."""

from __future__ import annotations

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from ..intent import IntentClassifier
from .metrics import MetricsReport, compute_metrics
from .pipeline import FoldContext, FoldResult, _is_nio

BASELINES = ("monolithic", "ae_anomaly", "auth_only", "har_only", "blackbox_mlp", "blackbox_svm", "blackbox_rf")
BLACKBOX = {
    "blackbox_mlp": lambda seed: MLPClassifier(hidden_layer_sizes=(64, 32), max_iter=300, random_state=seed),
    "blackbox_svm": lambda seed: SVC(kernel="rbf", C=1.0, gamma="scale"),
    "blackbox_rf": lambda seed: RandomForestClassifier(n_estimators=100, random_state=seed),
}


def finetune_training_set(ctx: FoldContext):
    """Supervised fine-tune data for the baselines that learn the IPI label directly:
    the victim's calibration snippet (all safe) plus the fine-tune users' training
    windows (IPI when the window's intent is not NIO)."""
    d = ctx.data
    y = np.r_[
        np.zeros(len(d.snippet), np.int64),
        (~_is_nio(d.finetune_train.subactions)).astype(np.int64),
    ]
    return ("snippet", "finetune_train"), y


def blackbox_features(ctx: FoldContext, role: str) -> np.ndarray:
    """AE latent (64) concatenated with the intent penultimate layer (128)."""
    ws = getattr(ctx.data, role)
    z = ctx.models.ae.encode(ctx.models.identity_view(ws))
    h = ctx.models.intent.hidden(ctx.models.intent_view(ws))
    return np.concatenate([z, h], axis=1)


def _monolithic(ctx: FoldContext, seed: int) -> np.ndarray:
    roles, y = finetune_training_set(ctx)
    X = np.concatenate([ctx.models.full_view(getattr(ctx.data, r)) for r in roles])
    cfg = ctx.cfg
    model = IntentClassifier(
        backbone=cfg.intent_backbone,
        granularity="binary",
        max_epochs=cfg.intent_epochs,
        batch_size=cfg.batch_size,
        random_state=seed,
    ).fit(X, y)
    return model.predict(ctx.models.full_view(ctx.data.test))


def _blackbox(name: str, ctx: FoldContext, seed: int) -> np.ndarray:
    roles, y = finetune_training_set(ctx)
    X = np.concatenate([ctx._get(("bb", r), lambda r=r: blackbox_features(ctx, r)) for r in roles])
    clf = make_pipeline(StandardScaler(), BLACKBOX[name](seed)).fit(X, y)
    Xt = ctx._get(("bb", "test"), lambda: blackbox_features(ctx, "test"))
    return clf.predict(Xt)


def run_baseline(name: str, ctx: FoldContext, result: FoldResult | None = None, seed: int = 0) -> MetricsReport:
    """Metrics of baseline ``name`` on the fold's test stream.

    ``auth_only``, ``har_only`` and ``ae_anomaly`` reuse the pipeline run
    (``result``, evaluated here when omitted) so they see identical inputs.
    """
    if name not in BASELINES:
        raise ValueError(f"unknown baseline {name!r}; choose from {BASELINES}")
    if name in ("auth_only", "har_only", "ae_anomaly"):
        result = result or ctx.evaluate(seed=seed)
        return result.baselines[name]
    if ctx.models.intent is None:
        raise ValueError(f"{name} needs a fold pretrained with the intent branch")
    pred = _monolithic(ctx, seed) if name == "monolithic" else _blackbox(name, ctx, seed)
    return compute_metrics(pred, ctx.data.y_ipi)
