"""Shared test utilities: central-difference gradient checks and toy fixtures."""
from __future__ import annotations

import numpy as np

from mmm4rec import tensor as T
from mmm4rec.data import ItemCatalog


def numeric_grad(fn, arrays: dict, name: str, h: float = 1e-3, max_entries: int | None = None, rng=None):
    """Central differences of the scalar ``fn(**tensors)`` w.r.t. ``arrays[name]``."""
    base = arrays[name]
    flat = np.arange(base.size)
    if max_entries is not None and base.size > max_entries:
        flat = (rng or np.random.default_rng(0)).choice(base.size, max_entries, replace=False)
    out = np.zeros(base.size)
    for i in flat:
        vals = []
        for sign in (1.0, -1.0):
            bumped = {k: v.copy() for k, v in arrays.items()}
            bumped[name].reshape(-1)[i] += sign * h
            vals.append(float(fn(**{k: T.Tensor(v) for k, v in bumped.items()}).data))
        out[i] = (vals[0] - vals[1]) / (2 * h)
    return out.reshape(base.shape), flat


def gradcheck(fn, arrays: dict, h: float = 1e-3, max_entries: int | None = None, seed: int = 0) -> float:
    """Worst relative error (norm-wise, per input) between tape and finite-difference gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    with T.precision(np.float64):
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        leaves = {k: T.Tensor(v, requires_grad=True) for k, v in arrays.items()}
        with T.GradTape() as tape:
            loss = fn(**leaves)
        analytic = tape.backward(loss, leaves)
        for name in arrays:
            num, idx = numeric_grad(fn, arrays, name, h, max_entries, rng)
            a = analytic[name].reshape(-1)[idx]
            n = num.reshape(-1)[idx]
            scale = max(np.linalg.norm(n), np.linalg.norm(a), 1e-8)
            worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst


def toy_catalog(num_items: int = 20, dims=(6, 5), seed: int = 0, missing=()) -> ItemCatalog:
    rng = np.random.default_rng(seed)
    presence = np.ones(num_items, dtype=bool)
    presence[list(missing)] = False
    return ItemCatalog.from_features([f"i{k}" for k in range(num_items)], rng.normal(size=(num_items, dims[0])),
                                     rng.normal(size=(num_items, dims[1])), presence)


def random_sequences(rng, num_items: int, lengths):
    return [(rng.integers(1, num_items + 1, size=n), np.cumsum(rng.integers(1, 1000, size=n)) + 10_000)
            for n in lengths]
