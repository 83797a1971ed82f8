"""Offline batch detection over logged traces and the privacy-filtered forensic report.

Report file: JSON Lines. The first line is the header
``{"format_version", "model_hashes", "threshold", "k", ...}``; every following
line is one entry. Owner entries carry only timestamps, verdict and risk flag;
app name, top-k intents and the fusion score exist only on non-owner entries.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts
from .fusion import FusionParams, TcmParams, decide, fusion_score, tcm_identity, tcm_intent
from .intent import topk
from .preprocessing import MinMaxNormalizer
from .taxonomy import class_names
from .traces import APPS, Trace, WindowSet, make_windows, modality_indices, read_trace, resample

FORMAT_VERSION = 1
RISK_MESSAGE = "IPI risk detected"
PRIVACY_NOTE = (
    "Owner windows carry no app or intent fields. Encryption at rest and remote "
    "self-destruction are platform concerns outside this file format."
)


@dataclass(frozen=True)
class OwnerEntry:
    start: float
    end: float
    verdict: str = "owner"
    risk_flag: bool = False


@dataclass(frozen=True)
class NonOwnerEntry:
    start: float
    end: float
    app: str
    topk: tuple
    score: float
    risk_flag: bool
    verdict: str = "non-owner"
    message: str | None = None


OWNER_FIELDS = frozenset(f for f in OwnerEntry.__dataclass_fields__)
NON_OWNER_FIELDS = frozenset(f for f in NonOwnerEntry.__dataclass_fields__)


@dataclass
class ForensicReport:
    header: dict
    entries: list = field(default_factory=list)

    def to_lines(self) -> list[str]:
        lines = [json.dumps(self.header, sort_keys=True, separators=(",", ":"))]
        for e in self.entries:
            d = asdict(e)
            if isinstance(e, NonOwnerEntry):
                d["topk"] = [[n, p] for n, p in e.topk]
            lines.append(json.dumps(d, sort_keys=True, separators=(",", ":")))
        return lines

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        return path

    @property
    def n_flagged(self) -> int:
        return sum(e.risk_flag for e in self.entries)


def read_report(path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"empty report: {path}")
    return json.loads(lines[0]), [json.loads(line) for line in lines[1:] if line.strip()]


def _r(x: float) -> float:
    return round(float(x), 6)


def build_entries(start_times, span, u_hat, y_hat, scores, probs, apps, granularity: str, k: int) -> list:
    """One entry per window, in start-time order; owner windows drop app and intent data."""
    names = class_names(granularity)
    order = np.argsort(np.asarray(start_times), kind="stable")
    entries = []
    for i in order:
        start, end = _r(start_times[i]), _r(start_times[i] + span)
        if int(u_hat[i]) == 0:
            entries.append(OwnerEntry(start, end))
            continue
        flag = bool(y_hat[i])
        entries.append(
            NonOwnerEntry(
                start=start,
                end=end,
                app=APPS[int(apps[i])],
                topk=tuple((names[c], _r(p)) for c, p in topk(probs[i], k)),
                score=_r(min(scores[i], 1e12)),
                risk_flag=flag,
                message=RISK_MESSAGE if flag else None,
            )
        )
    return entries


@dataclass
class DetectionModels:
    normalizer: MinMaxNormalizer
    ae: object
    intent: object
    head: object
    threshold: float
    k: int
    hashes: dict

    @classmethod
    def load(cls, model_dir) -> "DetectionModels":
        root = artifacts.require(
            model_dir,
            artifacts.NORMALIZER_FILE,
            artifacts.AE_FILE,
            artifacts.INTENT_FILE,
            artifacts.HEAD_FILE,
            artifacts.CALIBRATION_FILE,
        )
        calib = artifacts.load_calibration(root)
        return cls(
            normalizer=MinMaxNormalizer.from_params(artifacts.load_normalizer(root)),
            ae=artifacts.load_autoencoder(root / artifacts.AE_FILE),
            intent=artifacts.load_intent(root / artifacts.INTENT_FILE),
            head=artifacts.load_identity_head(root / artifacts.HEAD_FILE),
            threshold=float(calib["threshold"]),
            k=int(calib.get("k", 1)),
            hashes=artifacts.model_hashes(root),
        )


def detect_windows(models: DetectionModels, ws: WindowSet, fusion: FusionParams, tcm: TcmParams) -> dict:
    """Branch inference, TCM, fusion and decisions for a time-ordered window stack."""
    Xn = models.normalizer.transform(ws.X)
    id_idx = modality_indices(models.ae.meta_.get("modalities", "IMU+SYS"))
    int_idx = modality_indices(models.intent.meta_.get("modalities", "INT+APP"))
    score = models.head.decision_function(models.ae.transform(Xn[..., id_idx]))
    u_hat = tcm_identity(score, tcm)
    P = tcm_intent(models.intent.predict_proba(Xn[..., int_idx]), tcm)
    S = fusion_score(P, models.intent.nio_index, fusion.k, fusion.eps)
    y_hat = decide(u_hat, S, models.threshold)
    return {"identity_score": score, "u_hat": u_hat, "probs": P, "S": S, "y_hat": y_hat}


def run_detection(
    traces,
    model_dir,
    out_path=None,
    fusion: FusionParams | None = None,
    tcm: TcmParams | None = None,
    report_k: int = 3,
    stride: float = 1.0,
    config_hash: str | None = None,
) -> ForensicReport:
    """Batch detection over logged traces (paths or :class:`Trace` objects).

    Missing artifacts raise ``FileNotFoundError`` naming the path before any
    trace is read.
    """
    models = DetectionModels.load(model_dir)
    fusion = fusion or FusionParams(k=models.k)
    tcm = tcm or TcmParams()
    loaded = [t if isinstance(t, Trace) else read_trace(t) for t in traces]
    if not loaded:
        raise ValueError("no traces given")
    loaded.sort(key=lambda tr: (float(tr.t[0]) if len(tr) else 0.0, tr.session_id))
    rate = float(models.ae.meta_.get("rate", 20.0))
    span = models.ae.meta_["input_shape"][0] / rate
    sets = []
    for tr in loaded:
        if len(tr) and abs(tr.sample_period - 1.0 / rate) > 1e-9:
            tr = resample(tr, rate)
        sets.append(make_windows(tr, span, stride, rate))
    ws = WindowSet.concat(sets)
    if len(ws) == 0:
        raise ValueError("traces are shorter than one window")
    out = detect_windows(models, ws, fusion, tcm)
    header = {
        "format_version": FORMAT_VERSION,
        "model_hashes": models.hashes,
        "threshold": models.threshold,
        "k": report_k,
        "fusion_k": fusion.k,
        "granularity": models.intent.granularity,
        "config_hash": config_hash,
        "n_windows": len(ws),
        "privacy": PRIVACY_NOTE,
    }
    entries = build_entries(
        ws.start_times, span, out["u_hat"], out["y_hat"], out["S"], out["probs"], ws.apps,
        models.intent.granularity, report_k,
    )
    report = ForensicReport(header, entries)
    if out_path is not None:
        report.write(out_path)
    return report
