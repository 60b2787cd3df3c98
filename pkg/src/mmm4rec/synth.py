"""Synthetic corpora with a planted next-item rule.

Each item has a visual vector ``v_i`` and a text vector ``t_i = P v_{s(i)} + noise``
where ``s`` is a single-cycle permutation and ``P`` is an orthogonal map shared
by every domain built from the same ``generator_seed``.  Users mostly walk
along ``s``, so the next item is the visual nearest neighbour of
``P^T t_last``.  The walks restart at random items now and then, but never in
the last three steps, so the leave-one-out targets all follow the rule.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import InteractionRecord, ItemCatalog, save_feature_matrix, write_interactions


@dataclass
class SynthCorpus:
    records: list[InteractionRecord]
    item_ids: list[str]
    feat_v: np.ndarray
    feat_t: np.ndarray
    presence_v: np.ndarray
    successor: np.ndarray  # successor[i] = s(i), 0-based

    def catalog(self) -> ItemCatalog:
        return ItemCatalog.from_features(self.item_ids, self.feat_v, self.feat_t, self.presence_v)


def feature_generator(dim: int, generator_seed: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(generator_seed).normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def make_corpus(users: int = 200, items: int = 100, dim: int = 32, seed: int = 0,
                generator_seed: int = 1234, min_len: int = 5, max_len: int = 20,
                restart: float = 0.1, noise: float = 0.05, missing_visual: float = 0.0,
                domain: str = "") -> SynthCorpus:
    if items < 3 or users < 1 or min_len < 4:
        raise ValueError("need at least 3 items, 1 user and sequences of length >= 4")
    rng = np.random.default_rng(seed)
    proj = feature_generator(dim, generator_seed)
    feat_v = rng.normal(size=(items, dim)) / np.sqrt(dim)
    cycle = rng.permutation(items)
    successor = np.empty(items, dtype=np.int64)
    successor[cycle] = np.roll(cycle, -1)
    feat_t = feat_v[successor] @ proj.T + noise * rng.normal(size=(items, dim)) / np.sqrt(dim)
    presence_v = rng.random(items) >= missing_visual
    item_ids = [f"{domain}i{k:05d}" for k in range(items)]
    records = []
    for u in range(users):
        length = int(rng.integers(min_len, max_len + 1))
        cur = int(rng.integers(items))
        seq = [cur]
        for step in range(1, length):
            if step < length - 3 and rng.random() < restart:
                cur = int(rng.integers(items))
            else:
                cur = int(successor[cur])
            seq.append(cur)
        stamps = int(rng.integers(1_000_000, 2_000_000)) + np.cumsum(rng.integers(60, 86_400, size=length))
        records += [InteractionRecord(f"{domain}u{u:05d}", item_ids[i], int(t)) for i, t in zip(seq, stamps)]
    return SynthCorpus(records, item_ids, feat_v.astype(np.float32), feat_t.astype(np.float32),
                       presence_v, successor)


def write_corpus(corpus: SynthCorpus, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(out / "interactions.tsv", corpus.records)
    save_feature_matrix(out / "features_v.mmf", corpus.feat_v, corpus.presence_v, 0, corpus.item_ids)
    save_feature_matrix(out / "features_t.mmf", corpus.feat_t, None, 1, corpus.item_ids)
    return out
