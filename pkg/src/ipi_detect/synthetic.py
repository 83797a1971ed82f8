"""Synthetic multi-user smartphone usage corpus.

Each user gets a latent behavioural signature (how the phone is held, hand
tremor, typing cadence, battery/memory baselines, environment). Sessions
replay one of 44 task templates: the interaction and app channels follow the
template's phase sketch, while IMU and system channels are driven by the
signature plus task load and noise. ``separability`` scales the spread of
signatures around a common base, so ``separability=0`` yields statistically
identical users.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.spatial.transform import Rotation

from .taxonomy import NIO, SUBACTIONS, TaxonomyLabel
from .traces import APPS, EVENT_TYPES, N_IMU, N_SYS, Trace, read_trace, write_trace

_EV = {name: i for i, name in enumerate(EVENT_TYPES)}
_NONE = _EV["NONE"]

# ---------------------------------------------------------------------------
# user profiles

# name: (base value, spread per unit separability)
SIGNATURE_FIELDS: dict[str, tuple[float, float]] = {
    "tremor_hz": (9.0, 1.2),
    "tremor_amp": (0.06, 0.025),
    "pitch_deg": (35.0, 9.0),
    "roll_deg": (0.0, 7.0),
    "yaw_deg": (0.0, 25.0),
    "grip_noise": (0.08, 0.03),
    "ar_coef": (0.85, 0.04),
    "cadence": (0.0, 0.18),  # log-multiplier on interaction rates
    "current_ma": (320.0, 45.0),
    "voltage_mv": (3900.0, 60.0),
    "temperature_dc": (310.0, 18.0),
    "memory_mb": (2600.0, 220.0),
    "app_count": (14.0, 2.5),
    "bandwidth_scale": (0.0, 0.2),  # log-multiplier
    "pressure_hpa": (1005.0, 6.0),
    "light_log_lux": (5.0, 0.45),
    "excursion_rate": (0.02, 0.008),
}


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    signature: dict
    separability: float

    def as_vector(self) -> np.ndarray:
        """Signature in field order, each field scaled by its spread."""
        return np.array([self.signature[k] / s for k, (_, s) in SIGNATURE_FIELDS.items()])


def _clip_signature(sig: dict) -> dict:
    sig["tremor_hz"] = float(np.clip(sig["tremor_hz"], 3.0, 14.0))
    sig["tremor_amp"] = abs(sig["tremor_amp"])
    sig["grip_noise"] = max(abs(sig["grip_noise"]), 0.01)
    sig["ar_coef"] = float(np.clip(sig["ar_coef"], 0.5, 0.98))
    sig["app_count"] = max(sig["app_count"], 3.0)
    sig["excursion_rate"] = float(np.clip(sig["excursion_rate"], 0.0, 0.08))
    return sig


def generate_profile(seed: int, separability: float, user_id: str | None = None) -> UserProfile:
    """Signature = base + separability * standard-normal perturbation(seed)."""
    if separability < 0:
        raise ValueError("separability must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    z = rng.standard_normal(len(SIGNATURE_FIELDS))
    sig = {
        k: float(base + separability * spread * zi)
        for (k, (base, spread)), zi in zip(SIGNATURE_FIELDS.items(), z)
    }
    return UserProfile(user_id or f"seed{seed}", _clip_signature(sig), float(separability))


# ---------------------------------------------------------------------------
# task templates

@dataclass(frozen=True)
class Phase:
    name: str
    fraction: float
    mix: tuple[float, ...]  # probabilities over EVENT_TYPES[:-1]
    rate: tuple[float, float]  # events/s range
    upstream: float = 0.0  # task-coupled bandwidth load (relative)
    downstream: float = 0.0


@dataclass(frozen=True)
class TaskTemplate:
    task_id: int
    platform: str
    label: TaxonomyLabel
    duration_range: tuple[float, float]
    phases: tuple[Phase, ...]


def _mix(**kw) -> tuple[float, ...]:
    v = np.array([kw.get(e.lower(), 0.0) for e in EVENT_TYPES[:-1]], dtype=float)
    return tuple(v / v.sum())


_NAV = _mix(click=0.55, window_change=0.35, scroll=0.1)
_TYPE = _mix(text_changed=0.75, focus=0.15, click=0.1)

# phase sketches by kind of activity: (name, fraction, mix, rate range, up, down)
_KINDS: dict[str, list[tuple]] = {
    "view": [
        ("navigate", 0.25, _NAV, (0.9, 1.6), 0, 0.2),
        ("read", 0.75, _mix(scroll=0.7, click=0.2, focus=0.1), (0.6, 1.3), 0, 0.3),
    ],
    "settings": [
        ("navigate", 0.45, _mix(click=0.55, window_change=0.4, scroll=0.05), (1.0, 1.8), 0, 0.1),
        ("inspect", 0.55, _mix(scroll=0.5, click=0.3, focus=0.2), (0.4, 1.0), 0, 0.1),
    ],
    "edit_account": [
        ("navigate", 0.3, _NAV, (1.0, 1.7), 0, 0.1),
        ("type", 0.5, _TYPE, (2.5, 4.0), 0.1, 0),
        ("confirm", 0.2, _mix(click=0.6, window_change=0.4), (0.8, 1.4), 0.2, 0.1),
    ],
    "photo": [
        ("navigate", 0.3, _NAV, (1.0, 1.6), 0, 0.1),
        ("pick", 0.45, _mix(scroll=0.4, click=0.45, long_click=0.15), (0.7, 1.3), 0, 0.2),
        ("upload", 0.25, _mix(click=0.5, window_change=0.5), (0.2, 0.5), 1.0, 0),
    ],
    "compose": [
        ("open", 0.15, _mix(click=0.6, window_change=0.4), (0.8, 1.4), 0, 0.1),
        ("type", 0.7, _mix(text_changed=0.82, focus=0.08, click=0.1), (3.0, 4.8), 0.05, 0),
        ("send", 0.15, _mix(click=0.8, window_change=0.2), (0.8, 1.3), 0.4, 0),
    ],
    "upload": [
        ("open", 0.2, _NAV, (0.9, 1.5), 0, 0.1),
        ("pick", 0.45, _mix(scroll=0.45, click=0.4, long_click=0.15), (0.6, 1.2), 0, 0.1),
        ("transfer", 0.35, _mix(click=0.3, window_change=0.7), (0.05, 0.3), 1.6, 0),
    ],
    "delete": [
        ("navigate", 0.3, _NAV, (1.0, 1.6), 0, 0.1),
        ("select", 0.4, _mix(long_click=0.5, click=0.3, scroll=0.2), (0.8, 1.5), 0, 0),
        ("confirm", 0.3, _mix(click=0.7, window_change=0.3), (0.7, 1.2), 0.1, 0),
    ],
    "modify_file": [
        ("navigate", 0.25, _NAV, (1.0, 1.6), 0, 0.1),
        ("edit", 0.5, _mix(long_click=0.25, text_changed=0.45, click=0.3), (1.5, 2.8), 0.2, 0),
        ("confirm", 0.25, _mix(click=0.6, window_change=0.4), (0.7, 1.2), 0.3, 0),
    ],
    "playlist": [
        ("navigate", 0.3, _NAV, (1.0, 1.6), 0, 0.3),
        ("edit", 0.7, _mix(long_click=0.3, click=0.4, scroll=0.2, text_changed=0.1), (1.0, 2.0), 0.05, 0.2),
    ],
    "install": [
        ("browse", 0.35, _mix(scroll=0.3, click=0.5, window_change=0.2), (0.8, 1.4), 0, 0.2),
        ("confirm", 0.35, _mix(click=0.5, window_change=0.5), (0.6, 1.2), 0, 0.6),
        ("install", 0.3, _mix(window_change=0.6, click=0.4), (0.05, 0.3), 0, 1.2),
    ],
    "passive": [
        ("start", 0.1, _mix(click=0.6, scroll=0.4), (0.6, 1.2), 0, 0.6),
        ("consume", 0.9, _mix(click=0.4, scroll=0.4, focus=0.2), (0.02, 0.12), 0, 1.5),
    ],
    "browse": [
        ("scroll", 1.0, _mix(scroll=0.75, click=0.2, long_click=0.05), (0.9, 1.7), 0, 0.8),
    ],
    "search": [
        ("query", 0.35, _mix(text_changed=0.65, focus=0.2, click=0.15), (2.0, 3.2), 0, 0.2),
        ("scan", 0.65, _mix(scroll=0.6, click=0.4), (0.9, 1.5), 0, 0.6),
    ],
    "like": [
        ("scroll", 1.0, _mix(scroll=0.5, click=0.45, long_click=0.05), (1.3, 2.2), 0.05, 0.7),
    ],
}

# (task id, platform, subaction, kind) - task list used in the data-collection protocol
_TASKS: tuple[tuple[int, str, str, str], ...] = (
    (1, "Gmail", "View emails", "view"),
    (2, "Gmail", "View account settings", "settings"),
    (3, "Spotify", "View account settings", "settings"),
    (4, "Spotify", "Subscription details", "settings"),
    (5, "Amazon", "Inspect order history", "view"),
    (6, "Amazon", "View browsing history", "view"),
    (7, "Amazon", "View payment settings", "settings"),
    (8, "Instagram", "See one's post history", "view"),
    (9, "Instagram", "Upload photo", "upload"),
    (10, "Instagram", "View account settings", "settings"),
    (11, "YouTube", "Watch history", "view"),
    (12, "YouTube", "Upload video", "upload"),
    (13, "YouTube", "View account settings", "settings"),
    (14, "Slack", "View messages", "view"),
    (15, "Slack", "Inspect files", "view"),
    (16, "Slack", "View account settings", "settings"),
    (17, "Gmail", "Change profile photo", "photo"),
    (18, "Gmail", "Delete emails", "delete"),
    (19, "Spotify", "Change profile photo", "photo"),
    (20, "Spotify", "Change email", "edit_account"),
    (21, "Spotify", "Change username", "edit_account"),
    (22, "Spotify", "Modify music list", "playlist"),
    (23, "Amazon", "Change password", "edit_account"),
    (24, "Amazon", "Change address", "edit_account"),
    (25, "Instagram", "Change username", "edit_account"),
    (26, "Instagram", "Change profile photo", "photo"),
    (27, "YouTube", "Change password", "edit_account"),
    (28, "Slack", "Add a file", "upload"),
    (29, "Slack", "Modify a file", "modify_file"),
    (30, "Slack", "Delete a file", "delete"),
    (31, "Slack", "Change password", "edit_account"),
    (32, "Gmail", "Send emails", "compose"),
    (33, "Amazon", "Send reviews", "compose"),
    (34, "Instagram", "Send messages", "compose"),
    (35, "YouTube", "Comment", "compose"),
    (36, "Slack", "Send messages", "compose"),
    (37, "OTHER", "Software installation", "install"),
    (38, "Spotify", NIO, "passive"),
    (39, "Amazon", NIO, "search"),
    (40, "Amazon", NIO, "browse"),
    (41, "Instagram", NIO, "browse"),
    (42, "Instagram", NIO, "like"),
    (43, "YouTube", NIO, "search"),
    (44, "YouTube", NIO, "passive"),
)

TASK_DURATION = (15.0, 35.0)
NIO_DURATION = (30.0, 90.0)


def _build_template(task_id: int, platform: str, subaction: str, kind: str) -> TaskTemplate:
    # per-subaction jitter of the kind's sketch keeps same-kind tasks distinct
    rng = np.random.default_rng(zlib.crc32(f"{subaction}|{kind}".encode()))
    phases = []
    fr = np.array([p[1] for p in _KINDS[kind]]) * np.exp(0.2 * rng.standard_normal(len(_KINDS[kind])))
    fr = fr / fr.sum()
    for (name, _, mix, (lo, hi), up, down), f in zip(_KINDS[kind], fr):
        m = np.asarray(mix) * np.exp(0.35 * rng.standard_normal(len(mix)))
        m = np.where(np.asarray(mix) > 0, m, 0.0)
        scale = math.exp(0.15 * rng.standard_normal())
        phases.append(Phase(name, float(f), tuple(m / m.sum()), (lo * scale, hi * scale), up, down))
    duration = NIO_DURATION if subaction == NIO else TASK_DURATION
    return TaskTemplate(task_id, platform, TaxonomyLabel.from_subaction(subaction), duration, tuple(phases))


TASK_TEMPLATES: dict[int, TaskTemplate] = {t[0]: _build_template(*t) for t in _TASKS}
NIO_TASK_IDS: tuple[int, ...] = tuple(k for k, t in TASK_TEMPLATES.items() if t.label.is_nio)

# platform-specific system load offsets: (memory MB, current mA)
_APP_LOAD = {
    "Amazon": (180.0, 40.0),
    "Gmail": (120.0, 25.0),
    "Instagram": (260.0, 70.0),
    "Slack": (200.0, 35.0),
    "Spotify": (150.0, 55.0),
    "YouTube": (300.0, 110.0),
    "OTHER": (60.0, 15.0),
}


# ---------------------------------------------------------------------------
# session synthesis

def _ar1(rng, n: int, coef: float, scale: float, dims: int = 1) -> np.ndarray:
    from scipy.signal import lfilter

    e = rng.standard_normal((n, dims)) * scale * math.sqrt(1 - coef**2)
    return lfilter([1.0], [1.0, -coef], e, axis=0)


def generate_session(
    profile: UserProfile,
    template: TaskTemplate,
    duration: float,
    seed,
    rate: float = 20.0,
    noise: float = 1.0,
    start_time: float = 0.0,
    session_id: str = "",
    environment: dict | None = None,
    enforce_range: bool = True,
) -> Trace:
    """Synthesise one labelled session of ``duration`` seconds at ``rate`` Hz."""
    lo, hi = template.duration_range
    if enforce_range and not (lo - 1e-9 <= duration <= hi + 1e-9):
        raise ValueError(f"duration {duration} outside template range {template.duration_range}")
    n = int(round(duration * rate))
    if n <= 0:
        raise ValueError("duration too short for the sampling rate")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    sig = profile.signature
    env = environment or sig
    t_local = np.arange(n) / rate

    # ---- interaction + app channels from the phase sketch
    bounds = np.concatenate([[0.0], np.cumsum([p.fraction for p in template.phases])]) * duration
    phase_of = np.clip(np.searchsorted(bounds, t_local, side="right") - 1, 0, len(template.phases) - 1)
    cadence = math.exp(sig["cadence"])
    ev_times, ev_types = [], []
    for k, ph in enumerate(template.phases):
        p_lo, p_hi = bounds[k], bounds[k + 1]
        lam = rng.uniform(*ph.rate) * cadence
        count = rng.poisson(lam * (p_hi - p_lo))
        ev_times.append(rng.uniform(p_lo, p_hi, count))
        ev_types.append(rng.choice(len(ph.mix), size=count, p=ph.mix))
    ev_t = np.concatenate(ev_times)
    ev_k = np.concatenate(ev_types).astype(np.int64)
    order = np.argsort(ev_t, kind="stable")
    ev_t, ev_k = ev_t[order], ev_k[order]
    # rate = events within the trailing second; event = latest event in that second
    upto = np.searchsorted(ev_t, t_local, side="right")
    since = np.searchsorted(ev_t, t_local - 1.0, side="right")
    int_rate = (upto - since).astype(float)
    latest = ev_k[np.maximum(upto - 1, 0)] if len(ev_k) else np.full(n, _NONE)
    int_event = np.where(upto > since, latest, _NONE)

    app_idx = APPS.index(template.platform)
    app = np.full(n, app_idx, dtype=np.int64)
    launch = min(n, int(rate * rng.uniform(0.5, 1.5)))
    app[:launch] = APPS.index("OTHER")
    n_exc = rng.poisson(sig["excursion_rate"] * duration)
    for _ in range(n_exc):
        s = rng.integers(0, n)
        app[s : s + int(rate * rng.uniform(1.0, 3.0))] = APPS.index("OTHER")

    # ---- IMU: orientation baseline + session jitter + drift, tremor, grip noise
    jitter = rng.normal(0.0, 4.0, 3) * noise
    drift = _ar1(rng, n, 0.995, 3.0 * noise, 3)
    angles = np.array([sig["pitch_deg"], sig["roll_deg"], sig["yaw_deg"]]) + jitter + drift
    rot = Rotation.from_euler("xyz", angles, degrees=True)
    gravity = rot.inv().apply([0.0, 0.0, 9.81])
    magnetic = rot.inv().apply([0.0, 22.0, -42.0]) + rng.normal(0, 0.8 * noise, (n, 3))
    quat = rot.as_quat()[:, [3, 0, 1, 2]]
    quat *= np.sign(quat[:, :1] + 1e-12)

    busy = np.clip(int_rate / 3.0, 0.0, 2.0)[:, None]
    phase = rng.uniform(0, 2 * np.pi, 3)
    tremor = sig["tremor_amp"] * np.sin(2 * np.pi * sig["tremor_hz"] * t_local[:, None] + phase)
    grip = _ar1(rng, n, sig["ar_coef"], sig["grip_noise"] * noise, 3) * (1.0 + 0.6 * busy)
    lin_acc = tremor + grip + rng.normal(0, 0.01 * noise, (n, 3))
    accel = gravity + lin_acc
    gyro = (
        sig["tremor_amp"] * 2 * np.pi * sig["tremor_hz"] / 9.81
        * np.cos(2 * np.pi * sig["tremor_hz"] * t_local[:, None] + phase)
        + _ar1(rng, n, sig["ar_coef"], 0.5 * sig["grip_noise"] * noise, 3) * (1.0 + busy)
    )
    proximity = np.where(rng.random(n) < 0.002, 0.0, 5.0)
    pressure = env["pressure_hpa"] + rng.normal(0, 0.6 * noise) + _ar1(rng, n, 0.99, 0.05 * noise)[:, 0]
    light = np.exp(env["light_log_lux"] + rng.normal(0, 0.25 * noise) + _ar1(rng, n, 0.98, 0.05 * noise)[:, 0])

    imu = np.column_stack([accel, gyro, lin_acc, magnetic, quat, proximity, pressure, light])

    # ---- SYS: baselines + task-coupled load
    up_load = np.array([p.upstream for p in template.phases])[phase_of]
    down_load = np.array([p.downstream for p in template.phases])[phase_of]
    bw = math.exp(sig["bandwidth_scale"])
    burst = rng.exponential(1.0, (n, 2))
    up_bw = bw * (2_000.0 + 150_000.0 * up_load * burst[:, 0]) * (1 + 0.3 * noise * rng.random(n))
    down_bw = bw * (5_000.0 + 250_000.0 * down_load * burst[:, 1]) * (1 + 0.3 * noise * rng.random(n))
    mem_off, cur_off = (np.array([_APP_LOAD[a] for a in APPS])[app]).T
    current = (
        sig["current_ma"] + cur_off + 60.0 * busy[:, 0] + 80.0 * down_load
        + _ar1(rng, n, 0.95, 12.0 * noise)[:, 0]
    )
    voltage = sig["voltage_mv"] - 0.02 * t_local + rng.normal(0, 8.0 * noise) + rng.normal(0, 3.0 * noise, n)
    temperature = sig["temperature_dc"] + rng.normal(0, 4.0 * noise) + 0.05 * t_local + rng.normal(0, 1.0, n)
    memory = sig["memory_mb"] + mem_off + rng.normal(0, 40.0 * noise) + _ar1(rng, n, 0.99, 10.0 * noise)[:, 0]
    app_count = np.full(n, float(round(sig["app_count"] + rng.normal(0, 0.7 * noise))))
    sys_ = np.column_stack([up_bw, down_bw, current, voltage, temperature, memory, app_count])

    assert imu.shape == (n, N_IMU) and sys_.shape == (n, N_SYS)
    return Trace(
        t=start_time + t_local,
        imu=imu,
        sys=sys_,
        int_rate=int_rate,
        int_event=int_event,
        app=app,
        user_id=profile.user_id,
        session_id=session_id,
        subaction=template.label.subaction,
        meta={"task_id": template.task_id},
    )


# ---------------------------------------------------------------------------
# corpus

DEFAULT_PAIRS = tuple((f"u{2 * i:02d}", f"u{2 * i + 1:02d}") for i in range(9))


@dataclass
class CorpusConfig:
    n_users: int = 27
    pairs: list = field(default_factory=lambda: [list(p) for p in DEFAULT_PAIRS])
    seed: int = 0
    separability: float = 2.0
    noise: float = 1.0
    rate: float = 20.0
    minutes: float = 41.5
    # genuine pairs share a home: the second member inherits the first's environment
    shared_environment: bool = True

    def validate(self) -> None:
        if self.n_users < 4:
            raise ValueError("need at least 4 users")
        if self.minutes <= 5.0:
            raise ValueError("per-user minutes must exceed the 5-minute calibration length")
        if self.separability < 0 or self.noise < 0 or self.rate <= 0:
            raise ValueError("separability/noise must be >= 0 and rate > 0")
        ids = set(user_ids(self.n_users))
        for v, a in self.pairs:
            if v not in ids or a not in ids or v == a:
                raise ValueError(f"invalid pair {(v, a)}")


def user_ids(n_users: int) -> list[str]:
    return [f"u{i:02d}" for i in range(n_users)]


@dataclass
class Corpus:
    config: CorpusConfig
    profiles: dict
    traces: list
    manifest: dict

    def traces_for(self, users: Iterable[str]) -> list[Trace]:
        users = set(users)
        return [tr for tr in self.traces if tr.user_id in users]

    @property
    def users(self) -> list[str]:
        return list(self.profiles)

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        for tr, entry in zip(self.traces, self.manifest["sessions"]):
            write_trace(tr, out / entry["file"])
        (out / "manifest.json").write_text(
            json.dumps(self.manifest, indent=1, sort_keys=True), encoding="utf-8"
        )
        return out

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        root = Path(path)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest.json in {root}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        config = CorpusConfig(**manifest["config"])
        traces = []
        for entry in manifest["sessions"]:
            tr = read_trace(root / entry["file"])
            tr.meta["task_id"] = entry["task_id"]
            traces.append(tr)
        profiles = {
            u["user_id"]: UserProfile(u["user_id"], u["signature"], config.separability)
            for u in manifest["users"]
        }
        return cls(config, profiles, traces, manifest)


def _user_schedule(rng: np.random.Generator, budget_s: float) -> list[tuple[int, float]]:
    """All 44 templates plus NIO filler, shuffled, summing to ``budget_s`` seconds.

    Only the filler is shortened to hit the budget, so every template (and
    therefore every subaction) appears once the budget can hold them all.
    Smaller budgets keep a shuffled prefix of the templates.
    """
    tasks = [(tid, float(rng.uniform(*TASK_TEMPLATES[tid].duration_range))) for tid in TASK_TEMPLATES]
    used = sum(d for _, d in tasks)
    if used >= budget_s:
        sched, total = [], 0.0
        for i in rng.permutation(len(tasks)):
            if total >= budget_s - 1e-9:
                break
            d = min(tasks[i][1], budget_s - total)
            sched.append((tasks[i][0], d))
            total += d
        if len(sched) > 1 and sched[-1][1] < 5.0:
            tid, d = sched.pop()
            sched[-1] = (sched[-1][0], sched[-1][1] + d)
        return sched
    filler = []
    while used < budget_s:
        tid = int(rng.choice(NIO_TASK_IDS))
        d = float(rng.uniform(*TASK_TEMPLATES[tid].duration_range))
        filler.append([tid, d])
        used += d
    excess = used - budget_s
    if filler[-1][1] - excess >= 5.0 or len(filler) == 1:
        filler[-1][1] -= excess
    else:
        rest = filler.pop()[1] - excess
        filler[-1][1] += rest
    tasks += [(tid, d) for tid, d in filler]
    return [tasks[i] for i in rng.permutation(len(tasks))]


def generate_corpus(config: CorpusConfig) -> Corpus:
    config.validate()
    ids = user_ids(config.n_users)
    profiles = {
        uid: generate_profile(
            int(np.random.SeedSequence([config.seed, i]).generate_state(1)[0]), config.separability, uid
        )
        for i, uid in enumerate(ids)
    }
    env_source = {uid: uid for uid in ids}
    if config.shared_environment:
        for v, a in config.pairs:
            env_source[a] = v

    traces, sessions = [], []
    for ui, uid in enumerate(ids):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, ui, 0xC0FFEE]))
        sched = _user_schedule(rng, config.minutes * 60.0)
        clock = 0.0
        seen: dict[int, int] = {}
        for si, (tid, dur) in enumerate(sched):
            occ = seen.get(tid, 0)
            seen[tid] = occ + 1
            tmpl = TASK_TEMPLATES[tid]
            sid = f"{uid}_s{si:03d}"
            tr = generate_session(
                profiles[uid],
                tmpl,
                dur,
                np.random.SeedSequence([config.seed, ui, tid, occ]),
                rate=config.rate,
                noise=config.noise,
                start_time=clock,
                session_id=sid,
                environment=profiles[env_source[uid]].signature,
                enforce_range=False,
            )
            traces.append(tr)
            lab = tmpl.label
            sessions.append(
                {
                    "session_id": sid,
                    "user_id": uid,
                    "task_id": tid,
                    "subaction": lab.subaction,
                    "action": lab.action,
                    "category": lab.category,
                    "app": tmpl.platform,
                    "start": round(clock, 6),
                    "duration": round(len(tr) / config.rate, 6),
                    "n_samples": len(tr),
                    "file": f"traces/{sid}.jsonl",
                }
            )
            clock += len(tr) / config.rate
    manifest = {
        "format_version": 1,
        "config": asdict(config),
        "users": [{"user_id": u, "signature": profiles[u].signature} for u in ids],
        "pairs": [list(p) for p in config.pairs],
        "sessions": sessions,
    }
    return Corpus(config, profiles, traces, manifest)


def subaction_coverage(manifest: dict) -> dict[str, set]:
    """user -> set of subactions with at least one session."""
    cov: dict[str, set] = {}
    for s in manifest["sessions"]:
        cov.setdefault(s["user_id"], set()).add(s["subaction"])
    return cov


def all_subactions_covered(manifest: dict) -> bool:
    return all(c >= set(SUBACTIONS) for c in subaction_coverage(manifest).values())
