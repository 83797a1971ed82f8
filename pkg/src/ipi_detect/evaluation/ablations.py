"""Ablation sweeps: modalities, held-out apps, sampling rate x window, head count, identity head."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.ensemble import GradientBoostingClassifier, RandomForestClassifier
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from ..adaptation import select_calibration_windows
from ..fusion import tcm_identity
from ..intent import IntentClassifier, topk_accuracy
from ..preprocessing import MinMaxNormalizer
from ..taxonomy import GRANULARITIES, subaction_to_index
from ..traces import APPS, modality_indices
from .metrics import compute_metrics
from .pipeline import FoldContext, PipelineConfig, WindowCache, build_context, prepare_fold

log = logging.getLogger(__name__)

ABLATIONS = ("modality", "app_held_out", "rate_window", "head_count", "id_classifier_head")
IDENTITY_MODALITIES = ("IMU", "SYS", "INT", "APP", "IMU+APP", "IMU+SYS+APP", "ALL", "IMU+SYS")
INTENT_MODALITIES = ("INT", "APP", "IMU", "SYS", "ALL", "INT+APP")
RATES = (1, 2, 5, 10, 20)
SPANS = (1, 2, 5, 10, 20)
HEAD_COUNTS = (1, 2, 4, 8, 12, 16)
ID_HEADS = ("svm", "rf", "boosted_trees", "dense", "lstm")
PAIR_ROWS = {"genuine": "Partner", "synthetic": "Stranger"}


@dataclass
class AblationTable:
    kind: str
    columns: list
    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "columns": self.columns, "rows": self.rows, "notes": self.notes}

    def to_text(self) -> str:
        def fmt(v):
            if isinstance(v, dict) and "mean" in v:
                return "nan" if v["mean"] is None else f"{v['mean']:.3f}+-{v['std']:.3f}"
            if isinstance(v, float):
                return f"{v:.3f}"
            return str(v)

        head = ["row"] + [str(c) for c in self.columns]
        body = [[str(r["row"])] + [fmt(r.get(c)) for c in self.columns] for r in self.rows]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        lines = [" | ".join(x.ljust(w) for x, w in zip(head, widths))]
        lines.append("-+-".join("-" * w for w in widths))
        lines += [" | ".join(x.ljust(w) for x, w in zip(r, widths)) for r in body]
        return "\n".join(lines)


def _ms(values) -> dict:
    v = np.asarray([x for x in values if x is not None and not np.isnan(x)], dtype=float)
    return {"mean": float(v.mean()) if len(v) else None, "std": float(v.std()) if len(v) else None}


def _pair_rows(per_fold: dict, columns) -> list:
    """``per_fold[col]`` is a list of (pair_type, value); rows Partner / Stranger / Overall."""
    rows = []
    for key, label in list(PAIR_ROWS.items()) + [(None, "Overall")]:
        row = {"row": label}
        for c in columns:
            row[c] = _ms([v for t, v in per_fold[c] if key is None or t == key])
        rows.append(row)
    return rows


def _identity_f1(ctx: FoldContext, seeds) -> float:
    return float(np.mean([ctx.evaluate(seed=s).identity.f1 for s in seeds]))


def _train_intent(data, cfg: PipelineConfig, modalities: str, granularity: str, keep=None):
    norm = MinMaxNormalizer().fit(data.pretrain.X.reshape(-1, data.pretrain.X.shape[-1]))
    idx = modality_indices(modalities)
    ws = data.pretrain if keep is None else data.pretrain.subset(keep)
    model = IntentClassifier(
        backbone=cfg.intent_backbone,
        granularity=granularity,
        max_epochs=cfg.intent_epochs,
        batch_size=cfg.batch_size,
        random_state=cfg.seed,
    ).fit(norm.transform(ws.X)[..., idx], subaction_to_index(ws.subactions, granularity))
    return model, norm, idx


def _intent_accuracy(model, norm, idx, ws, granularity) -> float:
    if len(ws) == 0:
        return float("nan")
    P = model.predict_proba(norm.transform(ws.X)[..., idx])
    return topk_accuracy(P, subaction_to_index(ws.subactions, granularity), 1)


# ---------------------------------------------------------------------------

def modality_ablation(cache, folds, cfg, seeds=(0,)) -> list[AblationTable]:
    per = {m: [] for m in IDENTITY_MODALITIES}
    for m in IDENTITY_MODALITIES:
        c = replace(cfg, identity_modalities=m)
        for f in folds:
            per[m].append((f.pair_type, _identity_f1(build_context(cache, f, c, with_intent=False), seeds)))
    identity = AblationTable("modality_identity", list(IDENTITY_MODALITIES), _pair_rows(per, IDENTITY_MODALITIES))

    acc = {(g, m): [] for g in GRANULARITIES for m in INTENT_MODALITIES}
    for f in folds:
        data = prepare_fold(cache, f, cfg)
        for g in GRANULARITIES:
            for m in INTENT_MODALITIES:
                model, norm, idx = _train_intent(data, cfg, m, g)
                acc[(g, m)].append(_intent_accuracy(model, norm, idx, data.test, g))
    rows = [{"row": g, **{m: _ms(acc[(g, m)]) for m in INTENT_MODALITIES}} for g in GRANULARITIES]
    intent = AblationTable("modality_intent", list(INTENT_MODALITIES), rows)
    return [identity, intent]


def app_held_out_ablation(cache, folds, cfg, granularity: str | None = None) -> list[AblationTable]:
    g = granularity or cfg.granularity
    apps = [a for a in APPS if a != "OTHER"]
    res = {a: ([], []) for a in apps}
    for f in folds:
        data = prepare_fold(cache, f, cfg)
        full, norm, idx = _train_intent(data, cfg, cfg.intent_modalities, g)
        for a in apps:
            ai = APPS.index(a)
            test = data.test.subset(data.test.apps == ai)
            held, hnorm, hidx = _train_intent(data, cfg, cfg.intent_modalities, g, keep=data.pretrain.apps != ai)
            res[a][0].append(_intent_accuracy(full, norm, idx, test, g))
            res[a][1].append(_intent_accuracy(held, hnorm, hidx, test, g))
    rows = []
    for a in apps:
        base, held = _ms(res[a][0]), _ms(res[a][1])
        drop = None if base["mean"] is None or held["mean"] is None else base["mean"] - held["mean"]
        rows.append({"row": a, "all_apps": base, "held_out": held, "drop": drop})
    drops = [r["drop"] for r in rows if r["drop"] is not None]
    table = AblationTable("app_held_out", ["all_apps", "held_out", "drop"], rows)
    table.notes["mean_top1_drop"] = float(np.mean(drops)) if drops else None
    return [table]


def rate_window_ablation(corpus, folds, cfg, seeds=(0,), rates=RATES, spans=SPANS) -> list[AblationTable]:
    rows = []
    for r in rates:
        row = {"row": f"{r} Hz"}
        for s in spans:
            c = replace(cfg, rate=float(r), span=float(s))
            cache = WindowCache(corpus, c.rate, c.span)
            vals = []
            for f in folds:
                try:
                    vals.append(_identity_f1(build_context(cache, f, c, with_intent=False), seeds))
                except ValueError as exc:  # e.g. no window fits in the calibration snippet
                    log.warning("rate %s / span %s skipped on fold %d: %s", r, s, f.fold_id, exc)
            row[f"{s} s"] = _ms(vals)
        rows.append(row)
    return [AblationTable("rate_window", [f"{s} s" for s in spans], rows)]


def head_count_ablation(cache, folds, cfg, seeds=(0,), heads=HEAD_COUNTS) -> list[AblationTable]:
    per = {}
    for h in heads:
        c = replace(cfg, n_heads=h)
        per[f"{h}H"] = [(f.pair_type, _identity_f1(build_context(cache, f, c, with_intent=False), seeds)) for f in folds]
    cols = [f"{h}H" for h in heads]
    return [AblationTable("head_count", cols, _pair_rows(per, cols))]


def _head_scores(ctx: FoldContext, kind: str, seed: int) -> np.ndarray:
    cfg = ctx.cfg
    if kind == "svm":
        return ctx.adapt(replace(cfg.adaptation, seed=seed)).decision_function(ctx.dv("test"))
    d = ctx.data
    owner = ctx.models.identity_view(d.snippet)
    pool = ctx.models.identity_view(d.finetune_train)
    a_cfg = replace(cfg.adaptation, seed=seed)
    idx = select_calibration_windows(owner, a_cfg, pool, d.snippet.start_times)
    neg = np.sort(np.random.default_rng([seed, 1]).choice(len(pool), min(len(idx), len(pool)), replace=False))
    y = np.r_[np.zeros(len(idx), np.int64), np.ones(len(neg), np.int64)]
    if kind == "lstm":
        def resid(X):
            return (X - ctx.models.ae.reconstruct(X)[0]).astype(np.float32)

        Xtr = np.concatenate([resid(owner[idx]), resid(pool[neg])])
        clf = IntentClassifier(backbone="lstm", granularity="binary", max_epochs=cfg.intent_epochs, random_state=seed)
        clf.fit(Xtr, y)
        return clf.predict_proba(resid(ctx.models.identity_view(d.test)))[:, 1] - 0.5
    dv_own, dv_pool = ctx.dv("snippet"), ctx.dv("finetune_train")
    Xtr = np.concatenate([dv_own[idx], dv_pool[neg]])
    est = {
        "rf": lambda: RandomForestClassifier(n_estimators=100, random_state=seed),
        "boosted_trees": lambda: GradientBoostingClassifier(random_state=seed),
        "dense": lambda: MLPClassifier(hidden_layer_sizes=(64, 32), max_iter=500, random_state=seed),
    }[kind]()
    clf = make_pipeline(StandardScaler(), est).fit(Xtr, y)
    return clf.predict_proba(ctx.dv("test"))[:, 1] - 0.5


def id_classifier_head_ablation(cache, folds, cfg, seeds=(0,), heads=ID_HEADS) -> list[AblationTable]:
    per = {h: [] for h in heads}
    for f in folds:
        ctx = build_context(cache, f, cfg, with_intent=False)
        for h in heads:
            f1 = np.mean([
                compute_metrics(tcm_identity(_head_scores(ctx, h, s), cfg.tcm), ctx.data.is_abuser).f1 for s in seeds
            ])
            per[h].append((f.pair_type, float(f1)))
    return [AblationTable("id_classifier_head", list(heads), _pair_rows(per, list(heads)))]


def run_ablation(kind: str, corpus, folds, cfg: PipelineConfig | None = None, seeds=(0,)) -> list[AblationTable]:
    cfg = cfg or PipelineConfig()
    if kind not in ABLATIONS:
        raise ValueError(f"unknown ablation {kind!r}; choose from {ABLATIONS}")
    cache = WindowCache(corpus, cfg.rate, cfg.span)
    if kind == "modality":
        return modality_ablation(cache, folds, cfg, seeds)
    if kind == "app_held_out":
        return app_held_out_ablation(cache, folds, cfg)
    if kind == "rate_window":
        return rate_window_ablation(corpus, folds, cfg, seeds)
    if kind == "head_count":
        return head_count_ablation(cache, folds, cfg, seeds)
    return id_classifier_head_ablation(cache, folds, cfg, seeds)
