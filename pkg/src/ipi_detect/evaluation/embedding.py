"""Owner-vs-attacker separation of difference vectors."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist


def pairwise_stats(A, B) -> tuple[float, float]:
    """Mean Euclidean distance and mean cosine similarity over all (a, b) pairs."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    return float(cdist(A, B).mean()), float((1.0 - cdist(A, B, "cosine")).mean())


def embedding_analysis(contexts, max_per_user: int = 500, seed: int = 0) -> dict:
    """Per pair type (and overall): mean distance / cosine between victim and
    abuser difference vectors on each fold's test stream, averaged over folds."""
    rng = np.random.default_rng(seed)
    per_type: dict[str, list] = {}
    for ctx in contexts:
        dv = ctx.dv("test")
        ab = ctx.data.is_abuser.astype(bool)
        own, att = dv[~ab], dv[ab]
        if len(own) > max_per_user:
            own = own[rng.choice(len(own), max_per_user, replace=False)]
        if len(att) > max_per_user:
            att = att[rng.choice(len(att), max_per_user, replace=False)]
        stats = pairwise_stats(own, att)
        per_type.setdefault(ctx.data.fold.pair_type, []).append(stats)
        per_type.setdefault("overall", []).append(stats)
    return {
        k: {"euclidean": float(np.mean([s[0] for s in v])), "cosine": float(np.mean([s[1] for s in v])), "n_folds": len(v)}
        for k, v in per_type.items()
    }
