"""Multi-fold evaluation, results files and summary tables."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .baselines import run_baseline
from .metrics import METRIC_NAMES, summarize
from .pipeline import PipelineConfig, WindowCache, build_context

log = logging.getLogger(__name__)

TABLE_METRICS = ("f1", "precision", "recall", "fpr", "fnr", "accuracy")


def evaluate_folds(corpus, folds, cfg: PipelineConfig, seeds=(0,), ks=(1,), extra_baselines=(), out_dir=None, config_hash=None) -> dict:
    """Run every fold for each (seed, k); write ``fold_XX.json`` files when ``out_dir`` is set."""
    cache = WindowCache(corpus, cfg.rate, cfg.span)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    runs = []
    for fold in folds:
        ctx = build_context(cache, fold, cfg)
        fold_runs = []
        for seed in seeds:
            for k in ks:
                res = ctx.evaluate(seed=seed, k=k)
                summary = res.summary()
                for name in extra_baselines:
                    summary["baselines"][name] = run_baseline(name, ctx, res, seed).to_dict()
                fold_runs.append(summary)
                log.info("fold %d seed %d k %d: F1 %.3f FPR %.3f", fold.fold_id, seed, k, res.metrics.f1, res.metrics.fpr)
        if out:
            doc = {"fold": fold.to_dict(), "config_hash": config_hash, "runs": fold_runs}
            (out / f"fold_{fold.fold_id:02d}.json").write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
        runs.extend(fold_runs)
    results = {"config_hash": config_hash, "config": cfg.to_dict(), "runs": runs, "summary": aggregate(runs)}
    if out:
        (out / "results.json").write_text(json.dumps(results, indent=1, sort_keys=True), encoding="utf-8")
        (out / "summary.txt").write_text(summary_tables(results), encoding="utf-8")
    return results


def _fold_means(runs, getter) -> list[dict]:
    """Average runs of the same fold (over seeds) before aggregating across folds."""
    by_fold: dict = {}
    for r in runs:
        by_fold.setdefault(r["fold"], []).append(getter(r))
    out = []
    for reps in by_fold.values():
        row = {}
        for m in METRIC_NAMES:
            v = [x[m] for x in reps if x[m] is not None]
            row[m] = float(np.mean(v)) if v else float("nan")
        out.append(row)
    return out


def aggregate(runs) -> dict:
    """Fold-mean metrics for the pipeline, identity branch and each baseline, per k."""
    agg: dict = {}
    for k in sorted({r["k"] for r in runs}):
        rk = [r for r in runs if r["k"] == k]
        block = {
            "pipeline": summarize(_fold_means(rk, lambda r: r["metrics"])),
            "identity": summarize(_fold_means(rk, lambda r: r["identity"])),
        }
        for name in rk[0].get("baselines", {}):
            block[name] = summarize(_fold_means(rk, lambda r, n=name: r["baselines"][n]))
        agg[f"k={k}"] = block
    return agg


def summary_tables(results: dict) -> str:
    """End-to-end comparison per k, then the top-k table (F1 / FPR by k)."""
    lines = []
    for kkey, block in results["summary"].items():
        lines.append(f"End-to-end comparison ({kkey}), fold mean +- std")
        lines.append("method".ljust(14) + "".join(m.rjust(16) for m in TABLE_METRICS))
        for method, stats in block.items():
            cells = []
            for m in TABLE_METRICS:
                s = stats[m]
                cells.append(("nan" if s["mean"] is None else f"{s['mean']:.3f}+-{s['std']:.3f}").rjust(16))
            lines.append(method.ljust(14) + "".join(cells))
        lines.append("")
    lines.append("Top-k inclusion")
    lines.append("k".ljust(6) + "F1".rjust(10) + "FPR".rjust(10))
    for kkey, block in results["summary"].items():
        p = block["pipeline"]
        f1 = "nan" if p["f1"]["mean"] is None else f"{p['f1']['mean']:.3f}"
        fpr = "nan" if p["fpr"]["mean"] is None else f"{p['fpr']['mean']:.3f}"
        lines.append(kkey[2:].ljust(6) + f1.rjust(10) + fpr.rjust(10))
    return "\n".join(lines) + "\n"
