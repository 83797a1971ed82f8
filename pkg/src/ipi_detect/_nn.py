"""Shared torch plumbing: seeding, minibatch training with early stopping, weight export."""

from __future__ import annotations

import copy
import hashlib
import logging
from typing import Callable

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)


def seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(int(seed))
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def as_tensor(X) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(X, dtype=np.float32))


def train_loop(
    module: nn.Module,
    loss_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    X: np.ndarray,
    Y: np.ndarray,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    patience: int | None = None,
    min_delta: float = 0.0,
    validation_fraction: float = 0.0,
    y_dtype=torch.float32,
) -> dict:
    """Adam minibatch training. Returns the history dict.

    With ``patience`` set, training stops once the monitored loss (validation
    loss if a validation split exists, else training loss) fails to improve by
    ``min_delta`` for ``patience`` consecutive epochs, and the best weights are
    restored.
    """
    gen = seed_everything(seed)
    n = len(X)
    if n == 0:
        raise ValueError("no training data")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)
    n_val = int(round(n * validation_fraction)) if n >= 20 else 0
    val_idx, tr_idx = idx[:n_val], idx[n_val:]
    Xt, Yt = as_tensor(X), torch.as_tensor(np.asarray(Y), dtype=y_dtype)
    opt = torch.optim.Adam(module.parameters(), lr=lr)

    def evaluate(sel) -> float:
        module.eval()
        with torch.no_grad():
            total = 0.0
            for s in range(0, len(sel), 4096):
                b = torch.as_tensor(sel[s : s + 4096])
                total += float(loss_fn(module(Xt[b]), Yt[b])) * len(b)
        return total / len(sel)

    history = {"initial": evaluate(tr_idx), "loss": [], "val_loss": [], "stopped_epoch": None}
    best, best_state, wait = np.inf, None, 0
    for epoch in range(epochs):
        module.train()
        perm = torch.as_tensor(tr_idx)[torch.randperm(len(tr_idx), generator=gen)]
        total = 0.0
        for s in range(0, len(perm), batch_size):
            b = perm[s : s + batch_size]
            opt.zero_grad()
            loss = loss_fn(module(Xt[b]), Yt[b])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(b)
        history["loss"].append(total / len(perm))
        monitored = history["loss"][-1]
        if n_val:
            history["val_loss"].append(evaluate(val_idx))
            monitored = history["val_loss"][-1]
        if patience is not None:
            if monitored < best - min_delta:
                best, wait = monitored, 0
                best_state = copy.deepcopy(module.state_dict())
            else:
                wait += 1
                if wait >= patience:
                    history["stopped_epoch"] = epoch + 1
                    break
    if best_state is not None:
        module.load_state_dict(best_state)
    module.eval()
    log.debug("trained %s for %d epochs", type(module).__name__, len(history["loss"]))
    return history


def predict_batches(module: nn.Module, X: np.ndarray, fn=None, batch: int = 4096) -> np.ndarray:
    module.eval()
    fn = fn or module
    outs = []
    with torch.no_grad():
        for s in range(0, len(X), batch):
            outs.append(fn(as_tensor(X[s : s + batch])).numpy())
    if not outs:
        return np.zeros((0,))
    return np.concatenate(outs).astype(np.float64)


def state_to_numpy(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype("<f4") for k, v in module.state_dict().items()}


def load_numpy_state(module: nn.Module, tensors: dict[str, np.ndarray]) -> None:
    module.load_state_dict({k: torch.as_tensor(np.asarray(v, dtype=np.float32)) for k, v in tensors.items()})


def weights_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in sorted(state_to_numpy(module).items()):
        h.update(k.encode())
        h.update(v.tobytes())
    return h.hexdigest()
