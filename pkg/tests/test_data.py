import random
from dataclasses import replace

import numpy as np
import pytest

from mmm4rec.data import (FormatError, InteractionRecord, UserSequence, build_sequences, kcore_filter,
                          leave_one_out_split, load_catalog, load_checkpoint, load_feature_matrix, load_split,
                          parse_config, parse_interactions, save_checkpoint, save_feature_matrix, save_split,
                          write_interactions)
from mmm4rec.model import forward_user, init_params

R = InteractionRecord


def test_parse_examples(tmp_path):
    f = tmp_path / "a.tsv"
    f.write_text("u1\ti9\t100\n")
    assert parse_interactions(f) == [R("u1", "i9", 100)]
    f.write_text("")
    assert parse_interactions(f) == []
    f.write_text("u1\ti9\tabc")
    with pytest.raises(FormatError, match=":1:"):
        parse_interactions(f)
    f.write_text("u1\ti9\t1\nu2\ti3\n")
    with pytest.raises(FormatError, match=":2:"):
        parse_interactions(f)
    with pytest.raises(FileNotFoundError):
        parse_interactions(tmp_path / "missing.tsv")


def test_write_parse_round_trip(tmp_path):
    recs = [R("u1", "i1", 5), R("u2", "i2", 0)]
    write_interactions(tmp_path / "x.tsv", recs)
    assert parse_interactions(tmp_path / "x.tsv") == recs


def test_kcore_examples_and_properties():
    core = [R(u, i, 0) for u in ("a", "b") for i in ("x", "y")]
    assert kcore_filter(core, 2) == core
    chain = [R("u1", "i1", 0), R("u1", "i2", 1), R("u2", "i2", 2)]
    assert kcore_filter(chain, 2) == []
    rng = random.Random(0)
    recs = [R(f"u{rng.randrange(30)}", f"i{rng.randrange(20)}", t) for t in range(300)]
    once = kcore_filter(recs, 5)
    assert kcore_filter(once, 5) == once
    users, items = {}, {}
    for r in once:
        users[r.user_id] = users.get(r.user_id, 0) + 1
        items[r.item_id] = items.get(r.item_id, 0) + 1
    assert min(users.values()) >= 5 and min(items.values()) >= 5
    with pytest.raises(ValueError):
        kcore_filter(recs, 0)


def test_build_sequences_order_and_ties():
    recs = [R("u2", "b", 5), R("u1", "z", 3), R("u1", "a", 3), R("u2", "a", 1), R("u1", "m", 1)]
    seqs, ids = build_sequences(recs)
    assert ids == ["a", "b", "m", "z"]
    assert seqs["u1"].items == [3, 1, 4] and seqs["u1"].timestamps == [1, 3, 3]
    assert seqs["u2"].items == [1, 2]
    shuffled = recs[:]
    random.Random(1).shuffle(shuffled)
    assert build_sequences(shuffled) == (seqs, ids)
    with pytest.raises(ValueError):
        build_sequences([])
    with pytest.raises(ValueError):
        UserSequence([1, 2], [5, 4])


def test_leave_one_out():
    split = leave_one_out_split({"a": UserSequence([1, 2, 3, 4, 5], [1, 2, 3, 4, 5]),
                                 "b": UserSequence([7, 8], [1, 2])})
    (test,), (valid,) = split.test, split.valid
    assert test.items == [1, 2, 3, 4] and test.target == 5
    assert valid.items == [1, 2, 3] and valid.target == 4
    train = {e.user: e for e in split.train}
    assert train["a"].items == [1, 2] and train["a"].target == 3  # train prefix of length 3
    assert train["b"].items == [7] and train["b"].target == 8
    for e in split.train + split.valid + split.test:
        assert len(e.items) == len(e.timestamps) >= 1


def test_split_round_trip(tmp_path):
    split = leave_one_out_split({"a": UserSequence([1, 2, 3, 4], [1, 2, 3, 4])})
    save_split(tmp_path / "s.json", split)
    assert load_split(tmp_path / "s.json") == split


def test_feature_matrix_round_trip_and_errors(tmp_path, rng):
    m = rng.normal(size=(5, 8)).astype(np.float32)
    pres = np.array([1, 0, 1, 1, 1], dtype=bool)
    p = tmp_path / "f.mmf"
    save_feature_matrix(p, m, pres, 1, [f"i{k}" for k in range(5)])
    back, bp = load_feature_matrix(p, 1)
    assert np.array_equal(back, m) and np.array_equal(bp, pres)
    with pytest.raises(FormatError, match="modality"):
        load_feature_matrix(p, 0)
    raw = p.read_bytes()
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_feature_matrix(p)
    p.write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_feature_matrix(p)
    p.write_bytes(raw)
    (tmp_path / "items.idx").write_text("i0\ni1\n")
    with pytest.raises(FormatError, match="items.idx"):
        load_feature_matrix(p)


def test_catalog_reorders_rows_and_zeroes_missing(tmp_path, rng):
    fv, ft = rng.normal(size=(3, 4)), rng.normal(size=(3, 2))
    save_feature_matrix(tmp_path / "features_v.mmf", fv, [True, False, True], 0, ["a", "b", "c"])
    save_feature_matrix(tmp_path / "features_t.mmf", ft, None, 1, ["a", "b", "c"])
    cat = load_catalog(tmp_path, ["c", "b"])
    assert cat.num_items == 2 and cat.feature_dims == (4, 2)
    assert np.allclose(cat.feat_v[1], fv[2]) and np.all(cat.feat_v[2] == 0) and np.all(cat.feat_v[0] == 0)
    assert cat.presence_v.tolist() == [False, True, False]
    with pytest.raises(FormatError):
        load_catalog(tmp_path, ["a", "zz"])


def test_checkpoint_round_trip_preserves_aliases(small_cfg, catalog, tmp_path):
    store = init_params(small_cfg, 0, catalog.feature_dims, catalog.num_items)
    assert "align1.tissd_t.W1" in store.aliases
    save_checkpoint(tmp_path / "m.mmck", store)
    back = load_checkpoint(tmp_path / "m.mmck")
    assert back.aliases == store.aliases and back.meta == store.meta
    assert back["align1.tissd_t.W1"] is back["align1.tissd_v.W1"]
    assert back.manifest_hash() == store.manifest_hash()
    u1, _ = forward_user([1, 4, 9], [0, 10, 20], catalog, store, small_cfg)
    u2, _ = forward_user([1, 4, 9], [0, 10, 20], catalog, back, small_cfg)
    assert np.array_equal(u1.data, u2.data)
    assert (tmp_path / "m.mmck.json").exists()


def test_checkpoint_errors(small_store, tmp_path):
    p = tmp_path / "m.mmck"
    save_checkpoint(p, small_store)
    raw = p.read_bytes()
    p.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(p)
    p.write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(p)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.mmck")


def test_unshared_checkpoint_has_no_aliases(small_cfg, tmp_path):
    store = init_params(replace(small_cfg, shared_align=False), 0, (6, 5), 20)
    save_checkpoint(tmp_path / "m.mmck", store)
    assert load_checkpoint(tmp_path / "m.mmck").aliases == {}


def test_parse_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nlr = 0.01\nlayers=2  # inline\nshared = false\n\n")
    assert parse_config(p, {"lr": float, "layers": int, "shared": bool}) == {"lr": 0.01, "layers": 2,
                                                                             "shared": False}
    p.write_text("lr = 0.01\nbogus = 1\n")
    with pytest.raises(FormatError, match="bogus"):
        parse_config(p, {"lr": float})
    p.write_text("lr = fast\n")
    with pytest.raises(FormatError, match="lr"):
        parse_config(p, {"lr": float})
