"""Losses, NAdam and the pre-train / fine-tune loops."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import save_checkpoint
from .metrics import evaluate_model
from .model import init_params, item_representations, make_batch, user_representations
from .params import ParamStore
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)


class IncompatibleCheckpoint(ValueError):
    """Pretrained parameters do not fit the fine-tuning model."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    tau: float = 0.8
    epochs: int = 40
    patience: int = 10
    seed: int = 0
    clip_norm: float | None = 5.0
    threshold: float = 0.5  # validation NDCG@10 level counted for epochs-to-threshold

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, epochs and patience must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


# ------------------------------------------------------------------ losses

def inbatch_ce_loss(user_reprs, target_reprs, tau: float) -> Tensor:
    """Each user against every in-batch target; the diagonal holds the positives."""
    scores = T.matmul(T.as_tensor(user_reprs), T.transpose(T.as_tensor(target_reprs))) * (1.0 / tau)
    if scores.shape[0] < 2:
        raise ValueError("in-batch loss needs at least two users")
    return T.cross_entropy(scores, np.arange(scores.shape[0]))


def inbatch_ce_from_scores(scores, tau: float) -> Tensor:
    scores = T.as_tensor(scores)
    return T.cross_entropy(scores * (1.0 / tau), np.arange(scores.shape[0]))


def fullcorpus_ce_loss(scores, targets, tau: float) -> Tensor:
    """``-log softmax(scores / tau)[target]``; ``targets`` are column indices."""
    scores = T.as_tensor(scores)
    squeeze = scores.ndim == 1
    if squeeze:
        scores = T.reshape(scores, (1, -1))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if (targets < 0).any() or (targets >= scores.shape[1]).any():
        raise IndexError(f"target outside the {scores.shape[1]} candidates")
    return T.cross_entropy(scores * (1.0 / tau), targets)


# ------------------------------------------------------------------ optimizer

@dataclass
class NAdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum_decay: float = 4e-3
    step: int = 0
    mu_product: float = 1.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def nadam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: NAdamState, lr: float) -> None:
    """In-place Nesterov-accelerated Adam update with the usual momentum warm-up schedule."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    mu = b1 * (1.0 - 0.5 * 0.96 ** (t * state.momentum_decay))
    mu_next = b1 * (1.0 - 0.5 * 0.96 ** ((t + 1) * state.momentum_decay))
    state.mu_product *= mu
    mu_prod_next = state.mu_product * mu_next
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros(p.shape))
        v = state.v.setdefault(name, np.zeros(p.shape))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        denom = np.sqrt(v / (1.0 - b2 ** t)) + state.eps
        update = (lr * (1.0 - mu) / (1.0 - state.mu_product)) * g / denom
        update += (lr * mu_next / (1.0 - mu_prod_next)) * m / denom
        if lr != 0.0:
            p.data = (p.data.astype(np.float64) - update).astype(p.dtype)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


# ------------------------------------------------------------------ loops

def _batches(n: int, size: int, rng, drop_small: int = 1):
    order = rng.permutation(n)
    for lo in range(0, n, size):
        idx = order[lo:lo + size]
        if len(idx) >= drop_small:
            yield idx


def _write_log(fh, entry: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
        fh.flush()


def _step(store: ParamStore, grads, state, tcfg):
    clip_gradients(grads, tcfg.clip_norm)
    nadam_step(dict(store.items()), grads, state, tcfg.lr)


def run_pretrain(examples, catalog, store: ParamStore, cfg, tcfg: TrainConfig, out_dir=None) -> list[dict]:
    """In-batch cross-entropy training; returns one log entry per epoch."""
    if not examples:
        raise ValueError("empty dataset")
    if len(examples) < 2:
        raise ValueError("in-batch training needs at least two examples")
    rng = np.random.default_rng(tcfg.seed)
    state = NAdamState()
    out = Path(out_dir) if out_dir else None
    fh = (out / "pretrain_log.jsonl").open("w") if out else None
    history = []
    try:
        for epoch in range(1, tcfg.epochs + 1):
            t0 = time.perf_counter()
            losses, collisions = [], 0
            for idx in _batches(len(examples), tcfg.batch_size, rng, drop_small=2):
                chunk = [examples[i] for i in idx]
                targets = np.array([e.target for e in chunk])
                collisions += len(targets) - len(np.unique(targets))
                batch = make_batch([(e.items, e.timestamps) for e in chunk], cfg.max_len)
                with T.GradTape() as tape:
                    u = user_representations(store, cfg, catalog, batch, training=True, rng=rng)
                    reps = item_representations(store, cfg, catalog, targets)
                    loss = inbatch_ce_loss(u, reps, tcfg.tau)
                grads = tape.backward(loss, dict(store.items()))
                _step(store, grads, state, tcfg)
                losses.append(float(loss.data))
            if collisions:
                log.info("epoch %d: %d duplicate in-batch targets", epoch, collisions)
            entry = {"epoch": epoch, "split": "train", "loss": float(np.mean(losses)),
                     "collisions": collisions, "seconds": time.perf_counter() - t0}
            history.append(entry)
            _write_log(fh, entry)
            if out:
                save_checkpoint(out / "pretrain_last.mmck", store)
    finally:
        if fh:
            fh.close()
    if out:
        save_checkpoint(out / "pretrain.mmck", store)
    return history


def transfer_params(pretrained: ParamStore, cfg, seed: int, feature_dims, num_items: int) -> ParamStore:
    """Fresh store for a new domain carrying over every pretrained block.

    Item-bias tables are always re-initialized; adapters only when the
    feature dimensions changed.
    """
    store = init_params(cfg, seed, feature_dims, num_items, init="pretrained")
    same_dims = list(pretrained.meta.get("feature_dims", [])) == [int(d) for d in feature_dims]
    fresh = {n for n in store.tensors if n.startswith("bias.") or (n.startswith("adapter.") and not same_dims)}
    mine = {e["name"]: (e["alias_of"], e["shape"]) for e in store.manifest() if e["name"] not in fresh}
    theirs = {e["name"]: (e["alias_of"], e["shape"]) for e in pretrained.manifest()
              if not e["name"].startswith("bias.") and not (e["name"].startswith("adapter.") and not same_dims)}
    if mine != theirs:
        diff = sorted(n for n in set(mine) | set(theirs) if mine.get(n) != theirs.get(n))[:3]
        raise IncompatibleCheckpoint(f"checkpoint manifest does not match the model: {diff}")
    for name in store.tensors:
        if name not in fresh:
            store.tensors[name].data = pretrained.tensors[name].data.copy()
    return store


@dataclass
class ConvergenceReport:
    epochs_run: int
    epochs_to_best: int
    epochs_to_threshold: int | None
    best_ndcg10: float
    seconds_per_epoch: float


def run_finetune(split, catalog, store: ParamStore, cfg, tcfg: TrainConfig, out_dir=None):
    """Full-corpus cross-entropy with early stopping on validation NDCG@10.

    ``store`` is left holding the best epoch's parameters.  Returns
    ``(history, ConvergenceReport)``.
    """
    examples = split.train
    if not examples:
        raise ValueError("empty dataset")
    valid = split.valid or split.train
    rng = np.random.default_rng(tcfg.seed)
    state = NAdamState()
    out = Path(out_dir) if out_dir else None
    fh = (out / "finetune_log.jsonl").open("w") if out else None
    history = []
    best, best_epoch, best_snap, stale, reached = -np.inf, 0, store.snapshot(), 0, None
    seconds = []
    try:
        for epoch in range(1, tcfg.epochs + 1):
            t0 = time.perf_counter()
            losses = []
            for idx in _batches(len(examples), tcfg.batch_size, rng):
                chunk = [examples[i] for i in idx]
                batch = make_batch([(e.items, e.timestamps) for e in chunk], cfg.max_len)
                with T.GradTape() as tape:
                    u = user_representations(store, cfg, catalog, batch, training=True, rng=rng)
                    scores = T.matmul(u, T.transpose(item_representations(store, cfg, catalog)))
                    loss = fullcorpus_ce_loss(scores, np.array([e.target - 1 for e in chunk]), tcfg.tau)
                grads = tape.backward(loss, dict(store.items()))
                _step(store, grads, state, tcfg)
                losses.append(float(loss.data))
            seconds.append(time.perf_counter() - t0)
            report = evaluate_model(store, cfg, catalog, valid, ks=(10,))
            ndcg = report.ndcg["10"]
            entry = {"epoch": epoch, "split": "valid", "loss": float(np.mean(losses)), "ndcg10": ndcg,
                     "recall10": report.recall["10"], "seconds": seconds[-1]}
            history.append(entry)
            _write_log(fh, entry)
            if reached is None and ndcg >= tcfg.threshold:
                reached = epoch
            if ndcg > best:
                best, best_epoch, best_snap, stale = ndcg, epoch, store.snapshot(), 0
                if out:
                    save_checkpoint(out / "finetune_best.mmck", store)
            else:
                stale += 1
                if stale >= tcfg.patience:
                    break
    finally:
        if fh:
            fh.close()
    store.restore(best_snap)
    conv = ConvergenceReport(len(history), best_epoch, reached, float(best), float(np.mean(seconds)))
    return history, conv
