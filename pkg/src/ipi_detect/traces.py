"""Multimodal sample schema, feature encoding, resampling and windowing.

A session is held column-wise in :class:`Trace` (one array per modality) so
that corpus-scale work stays vectorised; :class:`MultimodalSample` is the
per-reading record used by the trace file format and for single-sample
encoding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .taxonomy import TaxonomyLabel, taxonomy_lookup

IMU_CHANNELS: tuple[str, ...] = (
    "accel_x", "accel_y", "accel_z",
    "gyro_x", "gyro_y", "gyro_z",
    "linacc_x", "linacc_y", "linacc_z",
    "mag_x", "mag_y", "mag_z",
    "rot_w", "rot_x", "rot_y", "rot_z",
    "proximity", "pressure", "light",
)
SYS_CHANNELS: tuple[str, ...] = (
    "up_bw_bps", "down_bw_bps", "current_ma", "voltage_mv",
    "temperature_dc", "mem_used_mb", "app_count",
)
EVENT_TYPES: tuple[str, ...] = (
    "CLICK", "LONG_CLICK", "SCROLL", "TEXT_CHANGED", "FOCUS", "WINDOW_CHANGE", "NONE",
)
APPS: tuple[str, ...] = ("Amazon", "Gmail", "Instagram", "Slack", "Spotify", "YouTube", "OTHER")

N_IMU = len(IMU_CHANNELS)
N_SYS = len(SYS_CHANNELS)
N_EVENT = len(EVENT_TYPES)
N_APP = len(APPS)

# canonical feature layout
IMU_SLICE = slice(0, N_IMU)
SYS_SLICE = slice(N_IMU, N_IMU + N_SYS)
RATE_INDEX = N_IMU + N_SYS
EVENT_SLICE = slice(RATE_INDEX + 1, RATE_INDEX + 1 + N_EVENT)
APP_SLICE = slice(EVENT_SLICE.stop, EVENT_SLICE.stop + N_APP)
N_FEATURES = APP_SLICE.stop

FEATURE_NAMES: tuple[str, ...] = (
    IMU_CHANNELS
    + SYS_CHANNELS
    + ("int_rate",)
    + tuple(f"event={e}" for e in EVENT_TYPES)
    + tuple(f"app={a}" for a in APPS)
)

MODALITY_INDICES: dict[str, np.ndarray] = {
    "IMU": np.arange(IMU_SLICE.start, IMU_SLICE.stop),
    "SYS": np.arange(SYS_SLICE.start, SYS_SLICE.stop),
    "INT": np.arange(RATE_INDEX, EVENT_SLICE.stop),
    "APP": np.arange(APP_SLICE.start, APP_SLICE.stop),
}
ONE_HOT_INDICES = np.arange(EVENT_SLICE.start, APP_SLICE.stop)


def modality_indices(spec: str | Sequence[str]) -> np.ndarray:
    """Feature indices for a modality combination such as ``"IMU+SYS"`` or ``"ALL"``."""
    if isinstance(spec, str):
        names = list(MODALITY_INDICES) if spec == "ALL" else spec.split("+")
    else:
        names = list(spec)
    try:
        return np.concatenate([MODALITY_INDICES[n] for n in names])
    except KeyError as exc:
        raise ValueError(f"unknown modality {exc.args[0]!r}") from None


IDENTITY_MASK = modality_indices("IMU+SYS")
INTENT_MASK = modality_indices("INT+APP")


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class MultimodalSample:
    timestamp: float
    imu: tuple[float, ...]
    sys: tuple[float, ...]
    int_rate: float
    int_event: str = "NONE"
    app: str = "OTHER"

    def __post_init__(self):
        if len(self.imu) != N_IMU or len(self.sys) != N_SYS:
            raise EncodingError(f"expected {N_IMU} imu and {N_SYS} sys channels")
        if self.int_event not in EVENT_TYPES:
            raise EncodingError(f"unknown interaction event {self.int_event!r}")
        if self.app not in APPS:
            raise EncodingError(f"unknown app {self.app!r}")


def encode_sample(sample: MultimodalSample) -> np.ndarray:
    vec = np.zeros(N_FEATURES)
    vec[IMU_SLICE] = sample.imu
    vec[SYS_SLICE] = sample.sys
    vec[RATE_INDEX] = sample.int_rate
    if not np.all(np.isfinite(vec)):
        raise EncodingError("non-finite channel value")
    vec[EVENT_SLICE.start + EVENT_TYPES.index(sample.int_event)] = 1.0
    vec[APP_SLICE.start + APPS.index(sample.app)] = 1.0
    return vec


def decode_vector(vec: np.ndarray, timestamp: float = 0.0) -> MultimodalSample:
    vec = np.asarray(vec, dtype=float)
    return MultimodalSample(
        timestamp=timestamp,
        imu=tuple(vec[IMU_SLICE].tolist()),
        sys=tuple(vec[SYS_SLICE].tolist()),
        int_rate=float(vec[RATE_INDEX]),
        int_event=EVENT_TYPES[int(np.argmax(vec[EVENT_SLICE]))],
        app=APPS[int(np.argmax(vec[APP_SLICE]))],
    )


@dataclass
class Trace:
    """One recorded session, stored column-wise."""

    t: np.ndarray
    imu: np.ndarray
    sys: np.ndarray
    int_rate: np.ndarray
    int_event: np.ndarray  # indices into EVENT_TYPES
    app: np.ndarray  # indices into APPS
    user_id: str = ""
    session_id: str = ""
    subaction: str = "NIO"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = len(self.t)
        self.imu = np.asarray(self.imu, dtype=float).reshape(n, N_IMU)
        self.sys = np.asarray(self.sys, dtype=float).reshape(n, N_SYS)
        self.int_rate = np.asarray(self.int_rate, dtype=float).reshape(n)
        self.int_event = np.asarray(self.int_event, dtype=np.int64).reshape(n)
        self.app = np.asarray(self.app, dtype=np.int64).reshape(n)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def label(self) -> TaxonomyLabel:
        return TaxonomyLabel.from_subaction(self.subaction)

    @property
    def sample_period(self) -> float:
        if len(self.t) < 2:
            return 0.0
        return float(np.median(np.diff(self.t)))

    @property
    def duration(self) -> float:
        """Covered time span; each reading is held for one sample period."""
        if len(self.t) == 0:
            return 0.0
        return float(self.t[-1] - self.t[0]) + self.sample_period

    def validate(self) -> None:
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise EncodingError("timestamps must be strictly increasing")
        for name in ("imu", "sys", "int_rate"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise EncodingError(f"non-finite {name} channel")
        if self.int_event.size and (self.int_event.min() < 0 or self.int_event.max() >= N_EVENT):
            raise EncodingError("interaction event index out of range")
        if self.app.size and (self.app.min() < 0 or self.app.max() >= N_APP):
            raise EncodingError("app index out of range")
        taxonomy_lookup(self.subaction)

    def features(self) -> np.ndarray:
        """Encode every reading; shape ``(n, N_FEATURES)``."""
        self.validate()
        n = len(self)
        out = np.zeros((n, N_FEATURES))
        out[:, IMU_SLICE] = self.imu
        out[:, SYS_SLICE] = self.sys
        out[:, RATE_INDEX] = self.int_rate
        rows = np.arange(n)
        out[rows, EVENT_SLICE.start + self.int_event] = 1.0
        out[rows, APP_SLICE.start + self.app] = 1.0
        return out

    def samples(self) -> Iterator[MultimodalSample]:
        for i in range(len(self)):
            yield MultimodalSample(
                timestamp=float(self.t[i]),
                imu=tuple(self.imu[i].tolist()),
                sys=tuple(self.sys[i].tolist()),
                int_rate=float(self.int_rate[i]),
                int_event=EVENT_TYPES[self.int_event[i]],
                app=APPS[self.app[i]],
            )

    @classmethod
    def from_samples(cls, samples: Sequence[MultimodalSample], **kw) -> "Trace":
        samples = list(samples)
        return cls(
            t=[s.timestamp for s in samples],
            imu=np.array([s.imu for s in samples], dtype=float).reshape(len(samples), N_IMU),
            sys=np.array([s.sys for s in samples], dtype=float).reshape(len(samples), N_SYS),
            int_rate=[s.int_rate for s in samples],
            int_event=[EVENT_TYPES.index(s.int_event) for s in samples],
            app=[APPS.index(s.app) for s in samples],
            **kw,
        )

    def take(self, idx: np.ndarray, t: np.ndarray | None = None) -> "Trace":
        return Trace(
            t=self.t[idx] if t is None else t,
            imu=self.imu[idx],
            sys=self.sys[idx],
            int_rate=self.int_rate[idx],
            int_event=self.int_event[idx],
            app=self.app[idx],
            user_id=self.user_id,
            session_id=self.session_id,
            subaction=self.subaction,
            meta=dict(self.meta),
        )


def resample(stream: Trace | Sequence[MultimodalSample], target_hz: float):
    """Zero-order-hold resampling onto a uniform grid at ``target_hz``.

    Each grid point takes the most recent reading at or before it. Returns
    the same kind of object that was passed in.
    """
    as_samples = not isinstance(stream, Trace)
    trace = Trace.from_samples(stream) if as_samples else stream
    if len(trace) == 0:
        return [] if as_samples else trace.take(np.arange(0))
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    n_out = int(math.floor(trace.duration * target_hz + 1e-9))
    n_out = max(n_out, 1)
    grid = trace.t[0] + np.arange(n_out) / target_hz
    idx = np.searchsorted(trace.t, grid + 1e-9, side="right") - 1
    out = trace.take(np.clip(idx, 0, len(trace) - 1), t=grid)
    return list(out.samples()) if as_samples else out


def window_count(duration: float, span: float, stride: float) -> int:
    if span <= 0 or stride <= 0:
        raise ValueError("span and stride must be positive")
    if duration + 1e-9 < span:
        return 0
    return int(math.floor((duration - span) / stride + 1e-9)) + 1


@dataclass
class WindowTensor:
    data: np.ndarray
    span: float
    rate: float
    user_id: str
    label: TaxonomyLabel
    session_id: str
    start_time: float


@dataclass
class WindowSet:
    """A stack of equally-shaped windows plus per-window metadata."""

    X: np.ndarray  # (N, T, d)
    user_ids: np.ndarray
    session_ids: np.ndarray
    subactions: np.ndarray
    start_times: np.ndarray
    apps: np.ndarray  # dominant foreground app index per window
    span: float = 2.0
    rate: float = 20.0

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, i: int) -> WindowTensor:
        return WindowTensor(
            data=self.X[i],
            span=self.span,
            rate=self.rate,
            user_id=str(self.user_ids[i]),
            label=TaxonomyLabel.from_subaction(str(self.subactions[i])),
            session_id=str(self.session_ids[i]),
            start_time=float(self.start_times[i]),
        )

    @property
    def ids(self) -> np.ndarray:
        """Unique per-window key ``session@start``."""
        return np.char.add(
            np.char.add(self.session_ids.astype(str), "@"),
            np.char.mod("%.3f", self.start_times),
        )

    def subset(self, mask) -> "WindowSet":
        mask = np.asarray(mask)
        return WindowSet(
            X=self.X[mask],
            user_ids=self.user_ids[mask],
            session_ids=self.session_ids[mask],
            subactions=self.subactions[mask],
            start_times=self.start_times[mask],
            apps=self.apps[mask],
            span=self.span,
            rate=self.rate,
        )

    def with_features(self, X: np.ndarray) -> "WindowSet":
        out = self.subset(slice(None))
        out.X = X
        return out

    @staticmethod
    def concat(sets: Iterable["WindowSet"]) -> "WindowSet":
        sets = [s for s in sets]
        if not sets:
            raise ValueError("nothing to concatenate")
        return WindowSet(
            X=np.concatenate([s.X for s in sets]),
            user_ids=np.concatenate([s.user_ids for s in sets]),
            session_ids=np.concatenate([s.session_ids for s in sets]),
            subactions=np.concatenate([s.subactions for s in sets]),
            start_times=np.concatenate([s.start_times for s in sets]),
            apps=np.concatenate([s.apps for s in sets]),
            span=sets[0].span,
            rate=sets[0].rate,
        )


def _empty_windows(T: int, d: int, span: float, rate: float) -> WindowSet:
    return WindowSet(
        X=np.zeros((0, T, d), dtype=np.float32),
        user_ids=np.zeros(0, dtype=object),
        session_ids=np.zeros(0, dtype=object),
        subactions=np.zeros(0, dtype=object),
        start_times=np.zeros(0),
        apps=np.zeros(0, dtype=np.int64),
        span=span,
        rate=rate,
    )


def make_windows(
    stream: Trace,
    span: float = 2.0,
    stride: float = 1.0,
    rate: float = 20.0,
    features: np.ndarray | None = None,
) -> WindowSet:
    """Slide a ``span``-second window every ``stride`` seconds over a trace sampled at ``rate``.

    ``features`` may carry an already encoded (and possibly normalised)
    matrix for the trace; otherwise the trace is encoded here.
    """
    T = int(round(span * rate))
    if abs(T - span * rate) > 1e-6:
        raise ValueError("span * rate must be an integer number of rows")
    if not isinstance(stream, Trace):
        stream = Trace.from_samples(stream)
    feats = stream.features() if features is None else features
    n = window_count(stream.duration, span, stride) if len(stream) else 0
    if n == 0:
        return _empty_windows(T, feats.shape[1] if feats.ndim == 2 else N_FEATURES, span, rate)
    starts = np.rint(np.arange(n) * stride * rate).astype(np.int64)
    starts = starts[starts + T <= len(stream)]
    idx = starts[:, None] + np.arange(T)[None, :]
    X = feats[idx].astype(np.float32)
    app_votes = np.apply_along_axis(np.bincount, 1, stream.app[idx], minlength=N_APP)
    m = len(starts)
    return WindowSet(
        X=X,
        user_ids=np.full(m, stream.user_id, dtype=object),
        session_ids=np.full(m, stream.session_id, dtype=object),
        subactions=np.full(m, stream.subaction, dtype=object),
        start_times=stream.t[starts],
        apps=np.argmax(app_votes, axis=1),
        span=span,
        rate=rate,
    )


# -- trace file format: one JSON record per line, fixed field order ---------

_RECORD_FIELDS = ("t", "imu", "sys", "int_rate", "int_event", "app", "user_id", "session_id", "subaction")


def _r(x: float) -> float:
    return round(float(x), 6)


def write_trace(trace: Trace, path: str | Path) -> None:
    lines = []
    for i in range(len(trace)):
        rec = {
            "t": _r(trace.t[i]),
            "imu": [_r(v) for v in trace.imu[i]],
            "sys": [_r(v) for v in trace.sys[i]],
            "int_rate": _r(trace.int_rate[i]),
            "int_event": EVENT_TYPES[trace.int_event[i]],
            "app": APPS[trace.app[i]],
            "user_id": trace.user_id,
            "session_id": trace.session_id,
            "subaction": trace.subaction,
        }
        lines.append(json.dumps(rec, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_trace(path: str | Path) -> Trace:
    t, imu, sys_, rate, ev, app = [], [], [], [], [], []
    user_id = session_id = ""
    subaction = "NIO"
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if tuple(rec) != _RECORD_FIELDS:
                raise EncodingError(f"{path}:{lineno}: unexpected fields {tuple(rec)}")
            t.append(rec["t"])
            imu.append(rec["imu"])
            sys_.append(rec["sys"])
            rate.append(rec["int_rate"])
            ev.append(EVENT_TYPES.index(rec["int_event"]))
            app.append(APPS.index(rec["app"]))
            user_id, session_id, subaction = rec["user_id"], rec["session_id"], rec["subaction"]
    trace = Trace(
        t=t,
        imu=np.array(imu, dtype=float).reshape(len(t), N_IMU),
        sys=np.array(sys_, dtype=float).reshape(len(t), N_SYS),
        int_rate=rate,
        int_event=ev,
        app=app,
        user_id=user_id,
        session_id=session_id,
        subaction=subaction,
    )
    trace.validate()
    return trace
