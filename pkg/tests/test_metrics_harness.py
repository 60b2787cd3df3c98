import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmm4rec.data import Example, build_sequences, leave_one_out_split
from mmm4rec.harness import bench_kernels, duality_case, literal_probe, truncation_probe, verify_duality
from mmm4rec.metrics import (evaluate_model, evaluate_scorer, ndcg_at_k, random_scorer, recall_at_k,
                             report_from_ranks, target_ranks)
from mmm4rec.model import ModelConfig, init_params
from mmm4rec.ssd import ssd_auto
from mmm4rec.synth import make_corpus


def test_metric_examples():
    ranked = list(range(100, 120))
    assert recall_at_k(ranked, 100, 10) == 1 and ndcg_at_k(ranked, 100, 10) == 1.0
    assert ndcg_at_k(ranked, 102, 10) == 0.5
    assert recall_at_k(ranked, 110, 10) == 0 and ndcg_at_k(ranked, 110, 10) == 0.0
    with pytest.raises(ValueError):
        recall_at_k(ranked, 100, 0)


def test_ranks_break_ties_by_index():
    scores = np.array([[1.0, 1.0, 1.0], [0.0, 2.0, 2.0]])
    assert target_ranks(scores, np.array([2, 2])).tolist() == [3, 2]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 200), min_size=1, max_size=40))
def test_report_bounds_and_monotone(ranks):
    rep = report_from_ranks(np.array(ranks), ks=(1, 10, 50))
    for k in ("1", "10", "50"):
        assert 0 <= rep.recall[k] <= 1 and 0 <= rep.ndcg[k] <= rep.recall[k]
    assert rep.recall["1"] <= rep.recall["10"] <= rep.recall["50"]
    assert rep.users == len(ranks)


def _examples(n, num_items, rng):
    return [Example(f"u{i}", [1], [0], int(rng.integers(1, num_items + 1))) for i in range(n)]


def test_oracle_and_random_scorers(rng):
    examples = _examples(300, 100, rng)

    def oracle(chunk):
        s = np.zeros((len(chunk), 100))
        s[np.arange(len(chunk)), [e.target - 1 for e in chunk]] = 1.0
        return s

    rep = evaluate_scorer(oracle, examples)
    assert rep.recall == {"10": 1.0, "50": 1.0} and rep.ndcg == {"10": 1.0, "50": 1.0}
    r1 = evaluate_scorer(random_scorer(100, 3), examples)
    r2 = evaluate_scorer(random_scorer(100, 3), examples)
    assert r1 == r2
    sigma = np.sqrt(0.1 * 0.9 / 300)
    assert abs(r1.recall["10"] - 0.1) < 3 * sigma
    with pytest.raises(ValueError):
        evaluate_scorer(oracle, [])


def test_verify_small_grid_and_singleton():
    rep = verify_duality(0, {"L": (1, 2, 9), "D": (1, 4), "N": (1, 3)})
    assert rep.passed and rep.checked == 12 and "PASS" in rep.summary()
    c, b, x = np.array([[2.0]]), np.array([[3.0]]), np.array([[0.5, -1.0]])
    for form in ("quadratic", "recurrent"):
        y = ssd_auto(c, b, np.array([0.7]), x, form).data
        assert np.allclose(y, 2.0 * 3.0 * x)
    diff, gerr = duality_case(np.random.default_rng(0), 1, 4, 3)
    assert diff < 1e-6 and gerr < 1e-5


def test_literal_probe_flags_instability():
    assert literal_probe(0)["unstable"]


def test_verify_reports_failures():
    rep = verify_duality(0, {"L": (4,), "D": (2,), "N": (2,)}, tol=0.0)
    assert not rep.passed and rep.failures[0]["L"] == 4 and "failing" in rep.summary()


def test_bench_trends():
    rep = bench_kernels({"L": (16, 256), "D": (8,), "N": (8,)}, repeats=3)
    short, long = rep.points
    assert rep.max_abs_diff < 1e-5
    assert long.quadratic_us / short.quadratic_us > long.recurrent_us / short.recurrent_us
    rep = bench_kernels({"L": (4,), "D": (4,), "N": (256,)}, repeats=3)
    assert rep.points[0].faster == "quadratic" == rep.points[0].selected
    with pytest.raises(ValueError):
        bench_kernels(repeats=2)


@pytest.fixture(scope="module")
def planted():
    corpus = make_corpus(users=120, items=40, dim=16, seed=5)
    seqs, _ = build_sequences(corpus.records)
    return corpus.catalog(), leave_one_out_split(seqs)


def test_truncation_probe_schema_and_noop(planted, tmp_path):
    catalog, split = planted
    cfg = ModelConfig(latent_dim=8, state_dim=4, max_len=20, dropout=0.0)
    store = init_params(cfg, 0, catalog.feature_dims, catalog.num_items)
    rows = truncation_probe(store, cfg, catalog, split.test, [1, 3, 50], out_csv=tmp_path / "t.csv")
    full = evaluate_model(store, cfg, catalog, split.test)
    assert rows[-1]["recall@10"] == full.recall["10"] and rows[-1]["ndcg@50"] == full.ndcg["50"]
    with (tmp_path / "t.csv").open() as fh:
        table = list(csv.DictReader(fh))
    assert [int(r["length"]) for r in table] == [1, 3, 50]
    assert list(table[0]) == ["length", "recall@10", "recall@50", "ndcg@10", "ndcg@50"]
    with pytest.raises(ValueError):
        truncation_probe(store, cfg, catalog, split.test, [0])


def test_evaluate_model_is_deterministic(planted):
    catalog, split = planted
    cfg = ModelConfig(latent_dim=8, state_dim=4, max_len=20, dropout=0.0)
    store = init_params(cfg, 1, catalog.feature_dims, catalog.num_items)
    assert evaluate_model(store, cfg, catalog, split.test) == evaluate_model(store, cfg, catalog, split.test)
