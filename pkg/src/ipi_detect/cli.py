"""Command-line interface.

Exit status: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts
from .adaptation import adapt as adapt_head
from .config import config_hash, format_config, flatten, pipeline_config, read_config
from .evaluation.ablations import ABLATIONS, run_ablation
from .evaluation.baselines import BASELINES
from .evaluation.folds import make_folds
from .evaluation.pipeline import PipelineConfig, WindowCache, _chronological_split, _is_nio
from .evaluation.runner import evaluate_folds, summary_tables
from .fusion import calibrate_threshold, fusion_score, tcm_intent
from .identity import MultiHeadLSTMAutoencoder
from .intent import IntentClassifier
from .preprocessing import MinMaxNormalizer
from .report import read_report, run_detection
from .synthetic import DEFAULT_PAIRS, Corpus, CorpusConfig, generate_corpus
from .taxonomy import subaction_to_index
from .traces import modality_indices

log = logging.getLogger("ipi_detect")


def _csv(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in _csv(s)]


def _load_cfg(args) -> PipelineConfig:
    flat = read_config(args.config) if getattr(args, "config", None) else {}
    cfg, _ = pipeline_config(flat)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, adaptation=replace(cfg.adaptation, seed=args.seed))
    return cfg


def _load_corpus(path) -> Corpus:
    if not Path(path).is_dir():
        raise FileNotFoundError(f"corpus directory not found: {path}")
    return Corpus.load(path)


# ---------------------------------------------------------------------------
# commands

def cmd_generate_data(args) -> int:
    n = args.users
    pairs = [list(p) for p in DEFAULT_PAIRS if int(p[1][1:]) < n]
    cfg = CorpusConfig(
        n_users=n, pairs=pairs, seed=args.seed, separability=args.separability,
        noise=args.noise, rate=args.rate, minutes=args.minutes,
    )
    out = generate_corpus(cfg).save(args.out)
    print(f"wrote corpus with {n} users to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    corpus = _load_corpus(args.corpus)
    exclude = set(_csv(args.exclude)) if args.exclude else set()
    users = _csv(args.users) if args.users else [u for u in corpus.users if u not in exclude]
    cache = WindowCache(corpus, cfg.rate, cfg.span)
    ws = cache.users(users, cfg.pretrain_stride)
    rng = np.random.default_rng(cfg.seed)
    if len(ws) > cfg.max_pretrain_windows:
        ws = ws.subset(np.sort(rng.choice(len(ws), cfg.max_pretrain_windows, replace=False)))
    norm = MinMaxNormalizer().fit(ws.X.reshape(-1, ws.X.shape[-1]))
    Xn = norm.transform(ws.X)
    id_idx, int_idx = modality_indices(cfg.identity_modalities), modality_indices(cfg.intent_modalities)
    ae = MultiHeadLSTMAutoencoder(
        n_heads=cfg.n_heads, head_units=cfg.head_units, max_epochs=cfg.ae_epochs,
        batch_size=cfg.batch_size, random_state=cfg.seed,
    ).fit(Xn[..., id_idx])
    intent = IntentClassifier(
        backbone=cfg.intent_backbone, granularity=cfg.granularity, max_epochs=cfg.intent_epochs,
        batch_size=cfg.batch_size, random_state=cfg.seed,
    ).fit(Xn[..., int_idx], subaction_to_index(ws.subactions, cfg.granularity))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.save_normalizer(norm.params_, out)
    artifacts.save_autoencoder(ae, out / artifacts.AE_FILE, modalities=cfg.identity_modalities, rate=cfg.rate)
    artifacts.save_intent(intent, out / artifacts.INTENT_FILE, modalities=cfg.intent_modalities)
    (out / "run.cfg").write_text(format_config(flatten(cfg)), encoding="utf-8")
    (out / "pretrain.json").write_text(json.dumps({"users": users, "n_windows": len(ws)}, indent=1), encoding="utf-8")
    print(f"pretrained on {len(users)} users ({len(ws)} windows); models in {out}")
    return 0


def _owner_and_pool(args, cfg, corpus):
    cache = WindowCache(corpus, cfg.rate, cfg.span)
    vic = cache.user(args.victim, cfg.stride)
    snippet = vic.subset(vic.start_times + cfg.span <= args.calibration_seconds + 1e-9)
    pool_users = _csv(args.pool)
    pool = cache.users(pool_users, cfg.stride)
    train, val = _chronological_split(pool, cfg.val_fraction)
    if len(snippet) == 0:
        raise ValueError(f"victim {args.victim} has no calibration windows")
    return snippet, pool.subset(train), pool.subset(val), pool_users


def _models_for(model_dir):
    root = artifacts.require(model_dir, artifacts.NORMALIZER_FILE, artifacts.AE_FILE)
    norm = MinMaxNormalizer.from_params(artifacts.load_normalizer(root))
    ae = artifacts.load_autoencoder(root / artifacts.AE_FILE)
    return root, norm, ae


def cmd_adapt(args) -> int:
    cfg = _load_cfg(args)
    root, norm, ae = _models_for(args.models)
    corpus = _load_corpus(args.corpus)
    snippet, pool_train, _, pool_users = _owner_and_pool(args, cfg, corpus)
    id_idx = modality_indices(ae.meta_["modalities"])
    a_cfg = replace(cfg.adaptation, n_shots=args.n_shots or cfg.adaptation.n_shots,
                    scheme=args.scheme or cfg.adaptation.scheme)
    head = adapt_head(
        ae, norm.transform(snippet.X)[..., id_idx], norm.transform(pool_train.X)[..., id_idx], a_cfg,
        owner_start_times=snippet.start_times, pool_users=pool_users,
    )
    head.provenance_["victim"] = args.victim
    artifacts.save_identity_head(head, root / artifacts.HEAD_FILE)
    print(f"adapted identity head for {args.victim} ({len(head.provenance_['owner_indices'])} shots)")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    root, norm, ae = _models_for(args.models)
    artifacts.require(root, artifacts.INTENT_FILE, artifacts.HEAD_FILE)
    intent = artifacts.load_intent(root / artifacts.INTENT_FILE)
    head = artifacts.load_identity_head(root / artifacts.HEAD_FILE)
    corpus = _load_corpus(args.corpus)
    snippet, _, pool_val, _ = _owner_and_pool(args, cfg, corpus)
    keep = np.ones(len(snippet), bool)
    keep[head.provenance_.get("owner_indices", [])] = False
    k = args.k or cfg.fusion.k
    id_idx = modality_indices(ae.meta_["modalities"])
    int_idx = modality_indices(intent.meta_["modalities"])
    S_parts, u_parts, y_parts = [], [], []
    for ws, nonowner in ((pool_val, True), (snippet.subset(keep), False)):
        for u in np.unique(ws.user_ids):
            part = ws.subset(ws.user_ids == u)
            Xn = norm.transform(part.X)
            u_parts.append(head.decision_function(ae.transform(Xn[..., id_idx])) > 0)
            P = tcm_intent(intent.predict_proba(Xn[..., int_idx]), cfg.tcm)
            S_parts.append(fusion_score(P, intent.nio_index, k, cfg.fusion.eps))
            y_parts.append(nonowner & ~_is_nio(part.subactions))
    S, u_val, y = np.concatenate(S_parts), np.concatenate(u_parts), np.concatenate(y_parts)
    T = calibrate_threshold(np.where(u_val, S, np.inf), y.astype(int), cfg.fusion.grid)
    artifacts.save_calibration(root, T, k, {"victim": args.victim, "n_validation": int(len(y))})
    print(f"calibrated threshold T={T:.2f} (k={k}) on {len(y)} validation windows")
    return 0


def cmd_detect(args) -> int:
    cfg = _load_cfg(args)
    # without --fusion-k the k stored at calibration time is used
    fusion = replace(cfg.fusion, k=args.fusion_k) if args.fusion_k else None
    report = run_detection(
        args.trace, args.models, args.out, fusion=fusion, tcm=cfg.tcm, report_k=args.k,
        stride=cfg.stride, config_hash=config_hash(cfg),
    )
    print(f"{len(report.entries)} entries, {report.n_flagged} flagged; report written to {args.out}")
    return 0


def _select_folds(corpus, args):
    folds = make_folds(corpus.manifest, n_genuine=args.genuine, n_synthetic=args.synthetic, seed=args.seed or 0)
    spec = args.folds
    if spec == "all":
        return folds
    wanted = set(_ints(spec))
    bad = wanted - {f.fold_id for f in folds}
    if bad:
        raise ValueError(f"unknown fold ids {sorted(bad)}")
    return [f for f in folds if f.fold_id in wanted]


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    corpus = _load_corpus(args.corpus)
    folds = _select_folds(corpus, args)
    seeds = _ints(args.seeds) if args.seeds else [cfg.adaptation.seed]
    extra = [b for b in _csv(args.baselines) if b not in ("auth_only", "har_only", "ae_anomaly")] if args.baselines else []
    unknown = set(extra) - set(BASELINES)
    if unknown:
        raise ValueError(f"unknown baselines {sorted(unknown)}")
    res = evaluate_folds(corpus, folds, cfg, seeds=seeds, ks=_ints(args.k), extra_baselines=extra,
                         out_dir=args.out, config_hash=config_hash(cfg))
    print(summary_tables(res), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    corpus = _load_corpus(args.corpus)
    folds = _select_folds(corpus, args)
    tables = run_ablation(args.kind, corpus, folds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ablation_{args.kind}.json").write_text(
        json.dumps([t.to_dict() for t in tables], indent=1, sort_keys=True), encoding="utf-8"
    )
    text = "\n\n".join(f"[{t.kind}]\n{t.to_text()}" for t in tables) + "\n"
    (out / f"ablation_{args.kind}.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_report_summary(args) -> int:
    if args.report:
        header, entries = read_report(args.report)
        flagged = [e for e in entries if e["risk_flag"]]
        print(f"format_version {header['format_version']}, threshold {header['threshold']}, k {header['k']}")
        print(f"{len(entries)} entries, {sum(e['verdict'] == 'non-owner' for e in entries)} non-owner, {len(flagged)} flagged")
        for e in flagged[: args.max_lines]:
            intents = ", ".join(f"{n} {p:.2f}" for n, p in e["topk"])
            print(f"  {e['start']:.1f}-{e['end']:.1f}s  {e['app']}  S={e['score']:.3f}  [{intents}]")
        return 0
    path = Path(args.results)
    path = path / "results.json" if path.is_dir() else path
    if not path.exists():
        raise FileNotFoundError(f"results file not found: {path}")
    print(summary_tables(json.loads(path.read_text(encoding="utf-8"))), end="")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random choice (default: config seed)")
    common.add_argument("--config", help="flat key = value config file (e.g. fusion.k = 3)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="ipi-detect", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", parents=[common], help="write a synthetic multi-user corpus")
    g.add_argument("--users", type=int, default=27, help="number of users (default 27)")
    g.add_argument("--minutes", type=float, default=41.5, help="trace minutes per user (default 41.5)")
    g.add_argument("--separability", type=float, default=2.0, help="inter-user signature spread (default 2.0)")
    g.add_argument("--noise", type=float, default=1.0, help="sensor noise scale (default 1.0)")
    g.add_argument("--rate", type=float, default=20.0, help="sampling rate in Hz (default 20)")
    g.add_argument("--out", required=True, help="output corpus directory")
    g.set_defaults(func=cmd_generate_data, seed=0)

    t = sub.add_parser("pretrain", parents=[common], help="fit normalizer, autoencoder and intent model")
    t.add_argument("--corpus", required=True, help="corpus directory")
    t.add_argument("--out", required=True, help="model directory to write")
    t.add_argument("--users", help="comma-separated pretraining users (default: all not excluded)")
    t.add_argument("--exclude", help="comma-separated users to leave out")
    t.set_defaults(func=cmd_pretrain)

    for name, func, helptext in (
        ("adapt", cmd_adapt, "fit the identity head on the victim's calibration snippet"),
        ("calibrate", cmd_calibrate, "grid-search the fusion threshold on a validation slice"),
    ):
        a = sub.add_parser(name, parents=[common], help=helptext)
        a.add_argument("--corpus", required=True, help="corpus directory")
        a.add_argument("--models", required=True, help="model directory (read and updated)")
        a.add_argument("--victim", required=True, help="device owner user id")
        a.add_argument("--pool", required=True, help="comma-separated negative-pool users")
        a.add_argument("--calibration-seconds", type=float, default=300.0, help="owner snippet length (default 300)")
        if name == "adapt":
            a.add_argument("--n-shots", type=int, help="owner windows used (default 20)")
            a.add_argument("--scheme", choices=("random", "time", "similarity"), help="shot selection scheme")
        else:
            a.add_argument("--k", type=int, help="top-k set size in the fusion score (default 1)")
        a.set_defaults(func=func)

    d = sub.add_parser("detect", parents=[common], help="batch detection over trace files into a forensic report")
    d.add_argument("--trace", required=True, nargs="+", help="trace file(s), JSON Lines")
    d.add_argument("--models", required=True, help="model directory with adapted head and calibration")
    d.add_argument("--out", required=True, help="report path")
    d.add_argument("--k", type=int, default=3, help="intents listed per non-owner entry (default 3)")
    d.add_argument("--fusion-k", type=int, help="top-k set size in the fusion score (default: config)")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", parents=[common], help="leave-two-out evaluation over folds")
    e.add_argument("--corpus", required=True, help="corpus directory")
    e.add_argument("--folds", default="all", help="'all' or comma-separated fold ids")
    e.add_argument("--genuine", type=int, default=6, help="number of designated-partner folds (default 6)")
    e.add_argument("--synthetic", type=int, default=6, help="number of random-pair folds (default 6)")
    e.add_argument("--out", default="results", help="results directory (default ./results)")
    e.add_argument("--seeds", help="comma-separated adaptation seeds (default: --seed)")
    e.add_argument("--k", default="1", help="comma-separated top-k values (default 1)")
    e.add_argument("--baselines", help=f"extra baselines from {','.join(BASELINES)}")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("ablate", parents=[common], help="run an ablation sweep")
    b.add_argument("--corpus", required=True, help="corpus directory")
    b.add_argument("--kind", required=True, choices=ABLATIONS, help="which sweep")
    b.add_argument("--folds", default="all", help="'all' or comma-separated fold ids")
    b.add_argument("--genuine", type=int, default=6, help="number of designated-partner folds (default 6)")
    b.add_argument("--synthetic", type=int, default=6, help="number of random-pair folds (default 6)")
    b.add_argument("--out", default="results", help="output directory (default ./results)")
    b.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report-summary", parents=[common], help="print summary tables or a forensic report digest")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--results", help="results directory or results.json from evaluate")
    src.add_argument("--report", help="forensic report file from detect")
    r.add_argument("--max-lines", type=int, default=20, help="flagged entries to list (default 20)")
    r.set_defaults(func=cmd_report_summary)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
