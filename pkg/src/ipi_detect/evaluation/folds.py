"""Leave-two-out folds: one held-out (victim, abuser) pair per fold."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    victim: str
    abuser: str
    pair_type: str
    pretrain: tuple
    finetune: tuple
    calibration_s: float = 300.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pretrain"], d["finetune"] = list(self.pretrain), list(self.finetune)
        return d

    @property
    def test_users(self) -> tuple:
        return (self.victim, self.abuser)


def make_folds(
    manifest: dict,
    n_genuine: int = 6,
    n_synthetic: int = 6,
    n_finetune: int = 3,
    seed: int = 0,
    calibration_s: float = 300.0,
) -> list[FoldSpec]:
    """Genuine folds use the first designated pairs; synthetic folds pair users
    who are not designated partners. Everyone outside the test pair and the
    ``n_finetune`` fine-tune users is a pretraining user.
    """
    users = [u["user_id"] for u in manifest["users"]]
    pairs = [tuple(p) for p in manifest["pairs"]]
    if len(pairs) < n_genuine:
        raise ValueError(f"manifest designates {len(pairs)} pairs, need {n_genuine}")
    if len(users) < 2 + n_finetune + 1:
        raise ValueError("not enough users for a test pair, fine-tune pool and pretraining set")
    rng = np.random.default_rng(seed)
    designated = {frozenset(p) for p in pairs}
    chosen = [(v, a, "genuine") for v, a in pairs[:n_genuine]]
    used = set()
    tries = 0
    while len(chosen) < n_genuine + n_synthetic:
        v, a = (users[i] for i in rng.choice(len(users), 2, replace=False))
        tries += 1
        if tries > 10000:
            raise ValueError("could not draw enough synthetic pairs")
        key = frozenset((v, a))
        if key in designated or key in used:
            continue
        used.add(key)
        chosen.append((v, a, "synthetic"))
    folds = []
    for i, (v, a, kind) in enumerate(chosen, start=1):
        rest = [u for u in users if u not in (v, a)]
        ft = sorted(rest[j] for j in rng.choice(len(rest), n_finetune, replace=False))
        pre = tuple(u for u in rest if u not in ft)
        folds.append(FoldSpec(i, v, a, kind, pre, tuple(ft), calibration_s))
    return folds
