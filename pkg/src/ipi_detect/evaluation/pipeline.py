"""Per-fold end-to-end run: pretrain, adapt, calibrate, detect, score."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..adaptation import AdaptationConfig, adapt
from ..fusion import FusionDecision, FusionParams, TcmParams, calibrate_threshold, decide, fusion_score, tcm_identity, tcm_intent
from ..identity import MultiHeadLSTMAutoencoder
from ..intent import IntentClassifier, topk
from ..preprocessing import MinMaxNormalizer
from ..taxonomy import NIO, class_names, subaction_to_index
from ..traces import WindowSet, make_windows, modality_indices, resample
from .folds import FoldSpec
from .metrics import MetricsReport, compute_metrics

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    rate: float = 20.0
    span: float = 2.0
    stride: float = 1.0
    # pretraining windows are thinned (coarser stride, then a random cap) to fit a desk budget
    pretrain_stride: float = 2.0
    max_pretrain_windows: int = 4096
    granularity: str = "action"
    identity_modalities: str = "IMU+SYS"
    intent_modalities: str = "INT+APP"
    n_heads: int = 8
    head_units: int = 8
    ae_epochs: int = 100
    intent_backbone: str = "lstm_cnn"
    intent_epochs: int = 50
    batch_size: int = 512
    val_fraction: float = 0.2
    interleave_block: int = 3
    ae_anomaly_percentile: float = 95.0
    seed: int = 0
    fusion: FusionParams = field(default_factory=FusionParams)
    tcm: TcmParams = field(default_factory=TcmParams)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        blocks = {
            "fusion": FusionParams(**d.pop("fusion", {})),
            "tcm": TcmParams(**d.pop("tcm", {})),
            "adaptation": AdaptationConfig(**d.pop("adaptation", {})),
        }
        return cls(**d, **blocks)


class WindowCache:
    """Raw (unnormalised) windows per user, computed once per stride."""

    def __init__(self, corpus, rate: float = 20.0, span: float = 2.0):
        self.corpus = corpus
        self.rate = rate
        self.span = span
        self._cache: dict = {}

    def user(self, uid: str, stride: float) -> WindowSet:
        key = (uid, stride)
        if key not in self._cache:
            sets = []
            for tr in self.corpus.traces_for([uid]):
                if abs(tr.sample_period - 1.0 / self.rate) > 1e-9:
                    tr = resample(tr, self.rate)
                sets.append(make_windows(tr, self.span, stride, self.rate))
            self._cache[key] = WindowSet.concat(sets)
        return self._cache[key]

    def users(self, uids, stride: float) -> WindowSet:
        return WindowSet.concat([self.user(u, stride) for u in uids])


def _is_nio(subactions) -> np.ndarray:
    return np.asarray(subactions, dtype=object) == NIO


def _chronological_split(ws: WindowSet, val_fraction: float):
    """Per user: earliest (1 - val_fraction) of windows for training, the rest for validation."""
    train = np.zeros(len(ws), bool)
    for u in np.unique(ws.user_ids):
        idx = np.flatnonzero(ws.user_ids == u)
        idx = idx[np.argsort(ws.start_times[idx], kind="stable")]
        cut = int(round(len(idx) * (1 - val_fraction)))
        train[idx[:cut]] = True
    return train, ~train


def _interleave(victim: WindowSet, abuser: WindowSet, block: int, rng) -> np.ndarray:
    """Window order of a shared-device stream: session blocks alternate at random between users."""
    def blocks(ws):
        sess = list(dict.fromkeys(ws.session_ids[np.argsort(ws.start_times, kind="stable")]))
        return [sess[i : i + block] for i in range(0, len(sess), block)]

    vb, ab = blocks(victim), blocks(abuser)
    order, i, j = [], 0, 0
    offset = len(victim)
    while i < len(vb) or j < len(ab):
        take_v = j >= len(ab) or (i < len(vb) and rng.random() < len(vb) / (len(vb) + len(ab)))
        ws, blk, base = (victim, vb[i], 0) if take_v else (abuser, ab[j], offset)
        for s in blk:
            idx = np.flatnonzero(ws.session_ids == s)
            order.extend(base + idx[np.argsort(ws.start_times[idx], kind="stable")])
        if take_v:
            i += 1
        else:
            j += 1
    return np.asarray(order, dtype=np.int64)


@dataclass
class FoldData:
    fold: FoldSpec
    pretrain: WindowSet
    finetune_train: WindowSet
    finetune_val: WindowSet
    snippet: WindowSet
    test: WindowSet
    is_abuser: np.ndarray
    y_ipi: np.ndarray

    def role_ids(self) -> dict[str, set]:
        return {
            "pretrain": set(self.pretrain.ids),
            "finetune_train": set(self.finetune_train.ids),
            "finetune_val": set(self.finetune_val.ids),
            "snippet": set(self.snippet.ids),
            "test": set(self.test.ids),
        }


def prepare_fold(cache: WindowCache, fold: FoldSpec, cfg: PipelineConfig) -> FoldData:
    rng = np.random.default_rng([cfg.seed, fold.fold_id])
    pre = cache.users(fold.pretrain, cfg.pretrain_stride)
    if len(pre) > cfg.max_pretrain_windows:
        pre = pre.subset(np.sort(rng.choice(len(pre), cfg.max_pretrain_windows, replace=False)))
    ft = cache.users(fold.finetune, cfg.stride)
    tr_mask, val_mask = _chronological_split(ft, cfg.val_fraction)
    vic = cache.user(fold.victim, cfg.stride)
    snippet = vic.subset(vic.start_times + cfg.span <= fold.calibration_s + 1e-9)
    vic_test = vic.subset(vic.start_times >= fold.calibration_s)
    ab = cache.user(fold.abuser, cfg.stride)
    order = _interleave(vic_test, ab, cfg.interleave_block, rng)
    test = WindowSet.concat([vic_test, ab]).subset(order)
    is_abuser = (test.user_ids == fold.abuser).astype(np.int64)
    y = (is_abuser.astype(bool) & ~_is_nio(test.subactions)).astype(np.int64)
    return FoldData(fold, pre, ft.subset(tr_mask), ft.subset(val_mask), snippet, test, is_abuser, y)


@dataclass
class FoldModels:
    normalizer: MinMaxNormalizer
    ae: MultiHeadLSTMAutoencoder
    intent: IntentClassifier | None
    ae_threshold: float
    id_idx: np.ndarray
    int_idx: np.ndarray

    def identity_view(self, ws: WindowSet) -> np.ndarray:
        return self.normalizer.transform(ws.X)[..., self.id_idx]

    def intent_view(self, ws: WindowSet) -> np.ndarray:
        return self.normalizer.transform(ws.X)[..., self.int_idx]

    def full_view(self, ws: WindowSet) -> np.ndarray:
        return self.normalizer.transform(ws.X)


def pretrain_fold(data: FoldData, cfg: PipelineConfig, with_intent: bool = True) -> FoldModels:
    """Fit the normaliser, autoencoder and intent model on the pretraining users only."""
    norm = MinMaxNormalizer().fit(data.pretrain.X.reshape(-1, data.pretrain.X.shape[-1]))
    id_idx = modality_indices(cfg.identity_modalities)
    int_idx = modality_indices(cfg.intent_modalities)
    Xn = norm.transform(data.pretrain.X)
    ae = MultiHeadLSTMAutoencoder(
        n_heads=cfg.n_heads,
        head_units=cfg.head_units,
        max_epochs=cfg.ae_epochs,
        batch_size=cfg.batch_size,
        random_state=cfg.seed,
    ).fit(Xn[..., id_idx])
    _, err = ae.reconstruct(Xn[..., id_idx])
    intent = None
    if with_intent:
        y = subaction_to_index(data.pretrain.subactions, cfg.granularity)
        intent = IntentClassifier(
            backbone=cfg.intent_backbone,
            granularity=cfg.granularity,
            max_epochs=cfg.intent_epochs,
            batch_size=cfg.batch_size,
            random_state=cfg.seed,
        ).fit(Xn[..., int_idx], y)
    thr = float(np.percentile(err, cfg.ae_anomaly_percentile))
    return FoldModels(norm, ae, intent, thr, id_idx, int_idx)


class FoldContext:
    """A prepared fold with its pretrained models and cached inference outputs.

    Seed-dependent steps (adaptation, calibration) are recomputed per call of
    :meth:`evaluate`; seed-independent forward passes are cached.
    """

    def __init__(self, data: FoldData, models: FoldModels, cfg: PipelineConfig):
        self.data = data
        self.models = models
        self.cfg = cfg
        self._memo: dict = {}

    def _get(self, key, fn):
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    # -- cached forward passes ---------------------------------------------
    def dv(self, role: str) -> np.ndarray:
        return self._get(("dv", role), lambda: self.models.ae.transform(self.models.identity_view(getattr(self.data, role))))

    def recon_error(self, role: str) -> np.ndarray:
        return self._get(("mse", role), lambda: self.models.ae.reconstruct(self.models.identity_view(getattr(self.data, role)))[1])

    def probs(self, role: str) -> np.ndarray:
        return self._get(("p", role), lambda: self.models.intent.predict_proba(self.models.intent_view(getattr(self.data, role))))

    def smoothed_probs(self, role: str, tcm: TcmParams) -> np.ndarray:
        """TCM-smoothed intent distributions, smoothing each user's stream separately
        except on the test stream, which is one shared-device sequence."""
        def run():
            ws, P = getattr(self.data, role), self.probs(role)
            if role == "test":
                return tcm_intent(P, tcm)
            out = np.empty_like(P)
            for u in np.unique(ws.user_ids):
                idx = np.flatnonzero(ws.user_ids == u)
                out[idx] = tcm_intent(P[idx], tcm)
            return out

        return self._get(("ps", role, tcm.w_avg), run)

    # -- seed-dependent steps ----------------------------------------------
    def adapt(self, adaptation: AdaptationConfig):
        d = self.data
        return adapt(
            self.models.ae,
            self.models.identity_view(d.snippet),
            self.models.identity_view(d.finetune_train),
            adaptation,
            owner_start_times=d.snippet.start_times,
            pool_users=d.fold.finetune,
        )

    def evaluate(self, seed: int | None = None, k: int | None = None, scheme: str | None = None,
                 n_shots: int | None = None, tcm: TcmParams | None = None) -> "FoldResult":
        cfg = self.cfg
        seed = cfg.adaptation.seed if seed is None else seed
        adapt_cfg = replace(
            cfg.adaptation,
            seed=seed,
            scheme=scheme or cfg.adaptation.scheme,
            n_shots=n_shots or cfg.adaptation.n_shots,
        )
        fparams = replace(cfg.fusion, k=k or cfg.fusion.k)
        tcm = tcm or cfg.tcm
        head = self.adapt(adapt_cfg)
        d = self.data

        # identity on the test stream
        score_test = head.decision_function(self.dv("test"))
        u_raw = (score_test > 0).astype(np.int64)
        u_hat = tcm_identity(score_test, tcm)
        identity = compute_metrics(u_hat, d.is_abuser)
        identity_raw = compute_metrics(u_raw, d.is_abuser)
        result = FoldResult(
            fold=d.fold, seed=seed, k=fparams.k, scheme=adapt_cfg.scheme, n_shots=adapt_cfg.n_shots,
            identity=identity, identity_raw=identity_raw, u_hat=u_hat, identity_score=score_test,
            y_true=d.y_ipi, is_abuser=d.is_abuser,
        )
        if self.models.intent is None:
            return result

        # threshold calibration on the validation slice
        nio = self.models.intent.nio_index
        val = WindowSet.concat([d.finetune_val, d.snippet.subset(_unselected(len(d.snippet), head))])
        val_dv = np.concatenate([self.dv("finetune_val"), self.dv("snippet")[_unselected(len(d.snippet), head)]])
        val_u = head.decision_function(val_dv) > 0
        val_P = np.concatenate([
            self.smoothed_probs("finetune_val", tcm),
            self.smoothed_probs("snippet", tcm)[_unselected(len(d.snippet), head)],
        ])
        val_S = fusion_score(val_P, nio, fparams.k, fparams.eps)
        val_nonowner = val.user_ids != d.fold.victim
        val_y = (val_nonowner & ~_is_nio(val.subactions)).astype(np.int64)
        T = calibrate_threshold(np.where(val_u, val_S, np.inf), val_y, fparams.grid)

        P = self.smoothed_probs("test", tcm)
        S = fusion_score(P, nio, fparams.k, fparams.eps)
        y_hat = decide(u_hat, S, T)
        result.threshold = T
        result.scores = S
        result.probs = P
        result.y_hat = y_hat
        result.metrics = compute_metrics(y_hat, d.y_ipi)
        result.baselines = {
            "auth_only": compute_metrics(u_hat, d.y_ipi),
            "har_only": compute_metrics(P.argmax(axis=1) != nio, d.y_ipi),
            "ae_anomaly": compute_metrics(self.recon_error("test") > self.models.ae_threshold, d.y_ipi),
        }
        result.head = head
        return result


def _unselected(n: int, head) -> np.ndarray:
    keep = np.ones(n, bool)
    keep[head.provenance_["owner_indices"]] = False
    return keep


@dataclass
class FoldResult:
    fold: FoldSpec
    seed: int
    k: int
    scheme: str
    n_shots: int
    identity: MetricsReport
    identity_raw: MetricsReport
    u_hat: np.ndarray
    identity_score: np.ndarray
    y_true: np.ndarray
    is_abuser: np.ndarray
    threshold: float | None = None
    scores: np.ndarray | None = None
    probs: np.ndarray | None = None
    y_hat: np.ndarray | None = None
    metrics: MetricsReport | None = None
    baselines: dict = field(default_factory=dict)
    head: object = None

    def decision_log(self, granularity: str = "action", k: int = 3) -> list[FusionDecision]:
        names = class_names(granularity)
        return [
            FusionDecision(
                u_hat=int(self.u_hat[i]),
                score=float(self.scores[i]),
                y_hat=int(self.y_hat[i]),
                topk=[(names[c], p) for c, p in topk(self.probs[i], k)],
                window=i,
            )
            for i in range(len(self.y_hat))
        ]

    def summary(self) -> dict:
        out = {
            "fold": self.fold.fold_id,
            "victim": self.fold.victim,
            "abuser": self.fold.abuser,
            "pair_type": self.fold.pair_type,
            "seed": self.seed,
            "k": self.k,
            "scheme": self.scheme,
            "n_shots": self.n_shots,
            "threshold": self.threshold,
            "identity": self.identity.to_dict(),
            "identity_raw": self.identity_raw.to_dict(),
        }
        if self.metrics is not None:
            out["metrics"] = self.metrics.to_dict()
            out["baselines"] = {k: v.to_dict() for k, v in self.baselines.items()}
        return out


def build_context(cache: WindowCache, fold: FoldSpec, cfg: PipelineConfig, with_intent: bool = True) -> FoldContext:
    data = prepare_fold(cache, fold, cfg)
    models = pretrain_fold(data, cfg, with_intent=with_intent)
    return FoldContext(data, models, cfg)


def run_pipeline(corpus, fold: FoldSpec, cfg: PipelineConfig | None = None, cache: WindowCache | None = None) -> FoldResult:
    """Pretrain on the fold's 22 users, adapt to the victim, calibrate T, detect on the test pair."""
    cfg = cfg or PipelineConfig()
    cache = cache or WindowCache(corpus, cfg.rate, cfg.span)
    return build_context(cache, fold, cfg).evaluate()
