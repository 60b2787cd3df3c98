"""Dataset-free verification and benchmark harnesses, plus the history-truncation probe."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from . import tensor as T
from .metrics import evaluate_scorer, model_scorer
from .ssd import literal_decay_mask, select_form, ssd_auto

VERIFY_GRID = {"L": tuple(range(1, 65)), "D": (1, 4, 64), "N": (1, 3, 256)}
BENCH_GRID = {"L": (4, 16, 64, 256), "D": (4, 16, 64), "N": (4, 64, 256)}


@dataclass
class DualityReport:
    passed: bool
    checked: int
    max_forward_diff: float
    max_grad_rel_err: float
    failures: list = field(default_factory=list)
    literal_probe: dict = field(default_factory=dict)
    seconds: float = 0.0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"duality {status}: {self.checked} configurations, max |diff| {self.max_forward_diff:.2e}, "
                 f"max grad rel err {self.max_grad_rel_err:.2e}"]
        lines += [f"  failing L={f['L']} D={f['D']} N={f['N']}: {f['what']} {f['value']:.2e}"
                  for f in self.failures]
        if self.literal_probe:
            p = self.literal_probe
            lines.append(f"  literal decay probe: unstable={p['unstable']} "
                         f"(negative mask entries {p['negative_entries']}, max |mask| {p['max_abs_mask']:.3g})")
        return "\n".join(lines)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def duality_case(rng, length: int, d: int, n: int):
    """Forward max-abs difference and worst gradient relative error between the two forms."""
    scale = 1.0 / np.sqrt(d)
    leaves = {
        "C": T.Tensor(rng.normal(size=(length, d)) * scale, requires_grad=True),
        "Bbar": T.Tensor(rng.normal(size=(length, d)) * scale, requires_grad=True),
        "a_hat": T.Tensor(rng.uniform(0.05, 1.0, size=length), requires_grad=True),
        "X": T.Tensor(rng.normal(size=(length, n)), requires_grad=True),
    }
    probe = rng.normal(size=(length, n))
    outs, grads = {}, {}
    for form in ("quadratic", "recurrent"):
        with T.GradTape() as tape:
            y = ssd_auto(leaves["C"], leaves["Bbar"], leaves["a_hat"], leaves["X"], form)
            loss = T.sum(y * probe)
        outs[form] = y.data.astype(np.float64)
        grads[form] = tape.backward(loss, leaves)
    diff = float(np.max(np.abs(outs["quadratic"] - outs["recurrent"])))
    grad_err = max(_rel(grads["quadratic"][k], grads["recurrent"][k]) for k in leaves)
    return diff, grad_err


def literal_probe(seed: int, length: int = 32) -> dict:
    """Decay taken as ``A * delta_hat`` itself: negative factors make the mask oscillate."""
    rng = np.random.default_rng(seed)
    a_hat = -rng.uniform(1.0, 16.0) * rng.uniform(1e-3, 1e-1, size=length) * 20.0
    mask = literal_decay_mask(a_hat)
    low = np.tril(np.ones((length, length), dtype=bool))
    neg = int(np.sum(mask[low] < 0))
    max_abs = float(np.max(np.abs(mask[low])))
    return {"negative_entries": neg, "max_abs_mask": max_abs,
            "unstable": bool(neg > 0 or max_abs > 1.0)}


def verify_duality(seed: int = 0, grid: dict | None = None, tol: float = 1e-5,
                   grad_tol: float = 1e-3) -> DualityReport:
    grid = grid or VERIFY_GRID
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    failures, worst, worst_g, count = [], 0.0, 0.0, 0
    for length in grid["L"]:
        for d in grid["D"]:
            for n in grid["N"]:
                diff, gerr = duality_case(rng, length, d, n)
                count += 1
                worst, worst_g = max(worst, diff), max(worst_g, gerr)
                if diff >= tol:
                    failures.append({"L": length, "D": d, "N": n, "what": "forward", "value": diff})
                if gerr >= grad_tol:
                    failures.append({"L": length, "D": d, "N": n, "what": "gradient", "value": gerr})
    return DualityReport(not failures, count, worst, worst_g, failures, literal_probe(seed),
                         time.perf_counter() - t0)


# ------------------------------------------------------------------ benchmark

@dataclass
class BenchPoint:
    L: int
    D: int
    N: int
    quadratic_us: float
    recurrent_us: float
    max_abs_diff: float
    selected: str
    faster: str


@dataclass
class BenchReport:
    points: list[BenchPoint]
    repeats: int

    @property
    def selector_accuracy(self) -> float:
        return float(np.mean([p.selected == p.faster for p in self.points]))

    @property
    def max_abs_diff(self) -> float:
        return float(max(p.max_abs_diff for p in self.points))

    def to_dict(self) -> dict:
        return {"repeats": self.repeats, "selector_accuracy": self.selector_accuracy,
                "max_abs_diff": self.max_abs_diff, "points": [asdict(p) for p in self.points]}


def _median_us(fn, repeats: int, budget: float = 2e-3) -> float:
    fn()
    loops, elapsed = 1, 0.0
    while True:
        t = time.perf_counter()
        for _ in range(loops):
            fn()
        elapsed = time.perf_counter() - t
        if elapsed >= budget or loops >= 1 << 16:
            break
        loops *= 4
    samples = []
    for _ in range(repeats):
        t = time.perf_counter()
        for _ in range(loops):
            fn()
        samples.append((time.perf_counter() - t) / loops)
    return float(np.median(samples) * 1e6)


def bench_kernels(grid: dict | None = None, repeats: int = 5, seed: int = 0) -> BenchReport:
    """Median wall time of each compiled form per grid point, plus their agreement."""
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    grid = grid or BENCH_GRID
    _kernels.warmup()
    rng = np.random.default_rng(seed)
    points = []
    for length in grid["L"]:
        for d in grid["D"]:
            for n in grid["N"]:
                c = rng.normal(size=(1, length, d)) / np.sqrt(d)
                b = rng.normal(size=(1, length, d)) / np.sqrt(d)
                a = rng.uniform(0.5, 1.0, size=(1, length))
                x = rng.normal(size=(1, length, n))
                log_a = np.log(a)
                yq = _kernels.quadratic_forward(c, b, log_a, x)
                yr = _kernels.scan_forward(c, b, a, x)
                q = _median_us(lambda: _kernels.quadratic_forward(c, b, log_a, x), repeats)
                r = _median_us(lambda: _kernels.scan_forward(c, b, a, x), repeats)
                points.append(BenchPoint(length, d, n, q, r, float(np.max(np.abs(yq - yr))),
                                         select_form(length, d, n), "quadratic" if q < r else "recurrent"))
    return BenchReport(points, repeats)


# ------------------------------------------------------------------ truncation

def truncation_probe(store, cfg, catalog, examples, lengths, ks=(10, 50), out_csv=None) -> list[dict]:
    """Metrics when only the most recent ``length`` interactions are kept."""
    if any(length < 1 for length in lengths):
        raise ValueError("lengths must be positive")
    rows = []
    for length in lengths:
        rep = evaluate_scorer(model_scorer(store, cfg, catalog, truncate=int(length)), examples, ks)
        row = {"length": int(length)}
        row.update({f"recall@{k}": rep.recall[str(k)] for k in ks})
        row.update({f"ndcg@{k}": rep.ndcg[str(k)] for k in ks})
        rows.append(row)
    if out_csv is not None:
        with Path(out_csv).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return rows
