import numpy as np
import pytest

from mmm4rec import tensor as T
from mmm4rec.blocks import align_modalities, ffn_forward, tissd_forward, tissd_project
from mmm4rec.model import init_params
from mmm4rec.temporal import compute_time_diffs
from mmm4rec.tensor import ShapeError

from helpers import gradcheck


def as_dict(view, names):
    return {n: view[n].data.astype(np.float64) for n in names}


TISSD_NAMES = ["W1", "b1", "conv", "A_log", "b_delta", "omega_d", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"]


def silu(x):
    return x / (1 + np.exp(-x))


def test_project_null_and_bias_routing(small_store):
    p = {k: v.data.copy() for k, v in [("W1", small_store["align1.tissd_v.W1"]), ("b1", small_store["align1.tissd_v.b1"])]}
    p["W1"][:] = 0
    x = np.random.default_rng(0).normal(size=(6, 8))
    C, B, X, delta = tissd_project(x, p)
    assert all(np.all(t.data == 0) for t in (C, B, X, delta))
    p["b1"][-1] = 1.0
    C, B, X, delta = tissd_project(x, p)
    assert np.all(delta.data == 1) and np.all(C.data == 0) and np.all(X.data == 0)


def test_project_split_offsets(small_store, rng):
    p = small_store.view("align1.tissd_v")
    x = rng.normal(size=(6, 8))
    full = x @ p["W1"].data + p["b1"].data
    C, B, X, delta = tissd_project(x, p)
    D, N = 4, 8
    assert np.allclose(C.data, full[:, :D], atol=1e-5)
    assert np.allclose(B.data, full[:, D:2 * D], atol=1e-5)
    assert np.allclose(X.data, full[:, 2 * D:2 * D + N], atol=1e-5)
    assert np.allclose(delta.data, full[:, -1], atol=1e-5)
    with pytest.raises(ShapeError):
        tissd_project(np.ones((6, 5)), p)


def test_zero_input_gives_zero_output(small_store):
    d = compute_time_diffs(np.arange(6) * 10)
    y, _ = tissd_forward(np.zeros((6, 8)), d, small_store.view("align1.tissd_v"))
    assert np.all(y.data == 0)


def test_reduces_to_unmasked_linear_attention_at_L3(small_cfg, rng):
    from dataclasses import replace
    cfg = replace(small_cfg, time_aware=False)
    store = init_params(cfg, 1, (6, 5), 20)
    p = store.view("align1.tissd_v")
    p["A_log"].data[:] = -40.0  # A ~ 0 so every decay is 1
    p["conv"].data[:] = 0.0
    p["conv"].data[0] = 1.0  # delta kernel
    x = rng.normal(size=(3, 8))
    d = compute_time_diffs([0, 5, 9])
    y, d_hat = tissd_forward(x, d, p, time_aware=False)
    assert np.all(d_hat.data == 0)
    proj = x @ p["W1"].data + p["b1"].data
    C, B, X = silu(proj[:, :4]), silu(proj[:, 4:8]), silu(proj[:, 8:16])
    dt = np.log(2) + p["b_delta"].data[:3]
    ref = np.array([sum((C[i] @ (dt[j] * B[j])) * X[j] for j in range(i + 1)) for i in range(3)])
    assert np.allclose(y.data, ref, atol=1e-5)


def test_tissd_causality(small_store, rng):
    p = small_store.view("align1.tissd_v")
    x = rng.normal(size=(6, 8))
    d = compute_time_diffs(np.cumsum(rng.integers(1, 50, 6)))
    base, _ = tissd_forward(x, d, p)
    for t in range(6):
        x2 = x.copy()
        x2[t] += rng.normal(size=8)
        y, _ = tissd_forward(x2, d, p)
        assert np.array_equal(y.data[:t], base.data[:t])


def test_tissd_gradient(small_store, rng):
    p = small_store.view("align1.tissd_v")
    ts = np.array([[0, 0, 3, 10, 12, 30]])
    valid = ts > 0
    valid[0, 1] = True
    probe = rng.normal(size=(1, 6, 8))

    def fn(x, **params):
        with T.precision(np.float64):
            d = compute_time_diffs(ts, valid)
        y, dh = tissd_forward(x, d, params)
        return T.sum(y * probe) + T.sum(dh * dh)

    arrays = {"x": rng.normal(size=(1, 6, 8))}
    arrays.update(as_dict(p, TISSD_NAMES))
    arrays["A_log"] = np.log(np.array([0.5]))
    assert gradcheck(fn, arrays, max_entries=12) < 1e-3


def test_ffn_zero_and_oracle(small_store, rng):
    p = small_store.view("align1.ffn_v")
    h = rng.normal(size=(6, 8))
    out = ffn_forward(h, p).data
    hid = h @ p["W_in"].data + p["b_in"].data
    ref = silu(hid) @ p["W_out"].data + p["b_out"].data
    assert np.allclose(out, ref, atol=1e-5)
    zero = {"W_in": np.zeros((8, 32)), "b_in": np.zeros(32), "W_out": np.zeros((32, 8)), "b_out": np.zeros(8)}
    assert np.all(ffn_forward(h, zero).data == 0)


def test_shared_weights_are_same_objects(small_store):
    for name in ("W1", "conv", "A_log", "b_delta", "omega_d"):
        assert small_store[f"align1.tissd_v.{name}"] is small_store[f"align1.tissd_t.{name}"]


def _mirror_norms(store):
    for part in ("ln1", "ffn", "ln2"):
        for name in [n for n in store.tensors if n.startswith(f"align1.{part}_v.")]:
            store[name.replace("_v.", "_t.")].data = store[name].data.copy()


def test_identical_inputs_identical_streams(small_store, rng):
    _mirror_norms(small_store)
    x = rng.normal(size=(6, 8))
    d = compute_time_diffs(np.cumsum(rng.integers(1, 50, 6)))
    pv, pt, dv, dt = align_modalities(x, x, d, small_store.view("align1"))
    assert np.array_equal(pv.data, pt.data) and np.array_equal(dv.data, dt.data)


def test_unshared_streams_differ(small_cfg, rng):
    from dataclasses import replace
    store = init_params(replace(small_cfg, shared_align=False), 0, (6, 5), 20)
    _mirror_norms(store)
    x = rng.normal(size=(6, 8))
    d = compute_time_diffs(np.cumsum(rng.integers(1, 50, 6)))
    pv, pt, _, _ = align_modalities(x, x, d, store.view("align1"))
    assert not np.allclose(pv.data, pt.data)


def test_dropout_zero_train_equals_eval(small_store, rng):
    xv, xt = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
    d = compute_time_diffs(np.cumsum(rng.integers(1, 50, 6)))
    a = align_modalities(xv, xt, d, small_store.view("align1"), 0.0, rng, True)
    b = align_modalities(xv, xt, d, small_store.view("align1"), 0.0, None, False)
    assert all(np.array_equal(u.data, v.data) for u, v in zip(a, b))
    c = align_modalities(xv, xt, d, small_store.view("align1"), 0.5, np.random.default_rng(0), True)
    assert not np.allclose(c[0].data, b[0].data)


def test_residual_ln_rows_standardized(small_store, rng):
    xv, xt = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
    d = compute_time_diffs(np.cumsum(rng.integers(1, 50, 6)))
    pv, *_ = align_modalities(xv, xt, d, small_store.view("align1"))
    assert np.allclose(pv.data.mean(axis=1), 0, atol=1e-5)
    assert np.allclose(pv.data.std(axis=1), 1, atol=1e-3)


def test_align_causality(small_store, rng):
    xv, xt = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
    d = compute_time_diffs(np.cumsum(rng.integers(1, 50, 6)))
    base = align_modalities(xv, xt, d, small_store.view("align1"))
    for t in range(6):
        xv2, xt2 = xv.copy(), xt.copy()
        xv2[t] += 1.0
        xt2[t] -= 1.0
        out = align_modalities(xv2, xt2, d, small_store.view("align1"))
        assert np.array_equal(out[0].data[:t], base[0].data[:t])
        assert np.array_equal(out[1].data[:t], base[1].data[:t])
