"""Ranking metrics and full-corpus evaluation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .model import item_representations, make_batch, user_representations


@dataclass
class EvalReport:
    recall: dict[str, float]
    ndcg: dict[str, float]
    users: int
    mean_rank: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"


def recall_at_k(ranked_ids, target, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(target in list(ranked_ids[:k]))


def ndcg_at_k(ranked_ids, target, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    top = list(ranked_ids[:k])
    if target not in top:
        return 0.0
    return float(1.0 / np.log2(top.index(target) + 2))


def target_ranks(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of each target column; ties go to the lower column index."""
    scores = np.asarray(scores, dtype=np.float64)
    rows = np.arange(scores.shape[0])
    t = scores[rows, targets][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    ahead = (scores > t) | ((scores == t) & (cols < targets[:, None]))
    return 1 + ahead.sum(axis=1)


def report_from_ranks(ranks: np.ndarray, ks: Sequence[int] = (10, 50)) -> EvalReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("nothing to evaluate")
    recall, ndcg = {}, {}
    for k in ks:
        hit = ranks <= k
        recall[str(k)] = float(hit.mean())
        ndcg[str(k)] = float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean())
    return EvalReport(recall, ndcg, int(ranks.size), float(ranks.mean()))


def evaluate_scorer(score_fn: Callable, examples, ks: Sequence[int] = (10, 50), batch_size: int = 256) -> EvalReport:
    """``score_fn(examples) -> (B, |I|)`` scores, column ``j`` being item ``j + 1``."""
    if not examples:
        raise ValueError("empty split")
    ranks = []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        scores = np.asarray(score_fn(chunk))
        ranks.append(target_ranks(scores, np.array([e.target - 1 for e in chunk])))
    return report_from_ranks(np.concatenate(ranks), ks)


def model_scorer(store, cfg, catalog, truncate: int | None = None) -> Callable:
    reps = item_representations(store, cfg, catalog).data.astype(np.float64)

    def score(examples):
        seqs = [(e.items[-truncate:], e.timestamps[-truncate:]) if truncate else (e.items, e.timestamps)
                for e in examples]
        u = user_representations(store, cfg, catalog, make_batch(seqs, cfg.max_len)).data
        return u.astype(np.float64) @ reps.T

    return score


def evaluate_model(store, cfg, catalog, examples, ks: Sequence[int] = (10, 50)) -> EvalReport:
    return evaluate_scorer(model_scorer(store, cfg, catalog), examples, ks)


def random_scorer(num_items: int, seed: int) -> Callable:
    rng = np.random.default_rng(seed)
    return lambda examples: rng.random((len(examples), num_items))
