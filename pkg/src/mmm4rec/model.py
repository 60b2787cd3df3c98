"""Full model: adapters, optional item bias, alignment, fusion, cross-modal block, scoring."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .blocks import align_modalities
from .cross import output_head, ticossd_forward
from .fusion import fuse_time_signals
from .params import ParamStore
from .temporal import TimeDiffSeq, compute_time_diffs, raw_time_diffs
from .tensor import ShapeError, Tensor

ABLATIONS = ("full", "no-pt", "no-time", "no-shared", "no-lf", "no-af", "no-id", "2l")


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 256
    state_dim: int = 64
    kernel_size: int = 4
    max_len: int = 50
    layers: int = 1
    tau: float = 0.8
    dropout: float = 0.4
    use_id_bias: bool = True
    time_aware: bool = True
    shared_align: bool = True
    learnable_filter: bool = True
    adaptive_filter: bool = True
    decay: str = "exp"
    ssd_mode: str = "auto"

    def __post_init__(self):
        for name in ("latent_dim", "state_dim", "kernel_size", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.decay not in ("exp", "literal"):
            raise ValueError(f"unknown decay mode {self.decay!r}")
        if self.ssd_mode not in ("auto", "quadratic", "recurrent"):
            raise ValueError(f"unknown ssd mode {self.ssd_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def apply_ablation(cfg: ModelConfig, name: str) -> ModelConfig:
    """Config for one named variant; ``no-pt`` only changes how training starts."""
    changes = {
        "full": {}, "no-pt": {},
        "no-time": {"time_aware": False},
        "no-shared": {"shared_align": False},
        "no-lf": {"learnable_filter": False},
        "no-af": {"adaptive_filter": False},
        "no-id": {"use_id_bias": False},
        "2l": {"layers": 2},
    }
    if name not in changes:
        raise ValueError(f"unknown ablation {name!r}; expected one of {', '.join(ABLATIONS)}")
    return replace(cfg, **changes[name])


@dataclass
class Batch:
    """Left-padded sequences: ``items`` uses pad id 0, ``valid`` flags real positions."""
    items: np.ndarray
    timestamps: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.valid is None:
            self.valid = self.items != 0
        if not self.valid[:, -1].all():
            raise ValueError("every sequence needs at least one interaction")


def make_batch(sequences, max_len: int) -> Batch:
    """Truncate to the most recent ``max_len`` interactions and left-pad."""
    n = len(sequences)
    items = np.zeros((n, max_len), dtype=np.int64)
    stamps = np.zeros((n, max_len), dtype=np.int64)
    for row, (seq_items, seq_ts) in enumerate(sequences):
        if len(seq_items) == 0:
            raise ValueError(f"sequence {row} is empty")
        seq_items = np.asarray(seq_items[-max_len:], dtype=np.int64)
        seq_ts = np.asarray(seq_ts[-max_len:], dtype=np.int64)
        if (seq_items <= 0).any():
            raise ValueError(f"sequence {row} contains the pad id or a negative id")
        items[row, max_len - len(seq_items):] = seq_items
        stamps[row, max_len - len(seq_ts):] = seq_ts
        stamps[row, :max_len - len(seq_ts)] = seq_ts[0]
    return Batch(items, stamps)


# ------------------------------------------------------------------ init

def _gauss(rng, *shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


def _conv(rng, k, c):
    bound = 1.0 / np.sqrt(k)
    return rng.uniform(-bound, bound, size=(k, c))


def _time_enhance_params(store, prefix, rng, cfg):
    L, K = cfg.max_len, cfg.kernel_size
    store.add(f"{prefix}.omega_d", _conv(rng, K, 1))
    store.add(f"{prefix}.mlp_w1", _gauss(rng, L, L))
    store.add(f"{prefix}.mlp_b1", np.zeros(L))
    store.add(f"{prefix}.mlp_w2", _gauss(rng, L, 1))
    store.add(f"{prefix}.mlp_b2", np.ones(1))


def _decay_params(store, prefix, rng, cfg):
    store.add(f"{prefix}.A_log", np.log(rng.uniform(1.0, 16.0, size=1)))
    dt0 = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=cfg.max_len))
    # softplus(0) = ln 2 is what the time product contributes at init
    store.add(f"{prefix}.b_delta", dt0 - np.log(2.0))


def _ln(store, prefix, n):
    store.add(f"{prefix}.gamma", np.ones(n))
    store.add(f"{prefix}.beta", np.zeros(n))


def _ffn(store, prefix, rng, n):
    store.add(f"{prefix}.W_in", _gauss(rng, n, 4 * n))
    store.add(f"{prefix}.b_in", np.zeros(4 * n))
    store.add(f"{prefix}.W_out", _gauss(rng, 4 * n, n))
    store.add(f"{prefix}.b_out", np.zeros(n))


def _tissd_params(store, prefix, rng, cfg):
    N, D = cfg.latent_dim, cfg.state_dim
    store.add(f"{prefix}.W1", _gauss(rng, N, 2 * D + N + 1))
    store.add(f"{prefix}.b1", np.zeros(2 * D + N + 1))
    store.add(f"{prefix}.conv", _conv(rng, cfg.kernel_size, 2 * D + N))
    _decay_params(store, prefix, rng, cfg)
    if cfg.time_aware:
        _time_enhance_params(store, prefix, rng, cfg)


def _complex_filter(store, prefix, rng, L):
    store.add(f"{prefix}.W_re", np.eye(L) + _gauss(rng, L, L))
    store.add(f"{prefix}.W_im", _gauss(rng, L, L))
    store.add(f"{prefix}.b_re", _gauss(rng, L))
    store.add(f"{prefix}.b_im", _gauss(rng, L))


def init_adapters(store, rng, cfg, dim_v, dim_t):
    N = cfg.latent_dim
    store.add("adapter.v.W", _gauss(rng, dim_v, N))
    store.add("adapter.v.b", np.zeros(N))
    store.add("adapter.t.W", _gauss(rng, dim_t, N))
    store.add("adapter.t.b", np.zeros(N))


def init_bias(store, cfg, num_items):
    if cfg.use_id_bias:
        store.add("bias.v", np.zeros((num_items, cfg.latent_dim)))
        store.add("bias.t", np.zeros((num_items, cfg.latent_dim)))


def init_params(cfg: ModelConfig, seed: int, feature_dims: tuple[int, int], num_items: int,
                init: str = "scratch") -> ParamStore:
    """Deterministic parameter store for ``cfg``.

    ``feature_dims`` is ``(visual, text)``; ``num_items`` excludes the pad row.
    Each block draws from its own seeded stream so enabling or disabling one
    block leaves the others' initial values untouched.
    """
    if num_items < 1:
        raise ValueError("catalog has no items")
    store = ParamStore()
    store.meta = {"config": cfg.to_dict(), "init": init, "num_items": int(num_items),
                  "feature_dims": [int(d) for d in feature_dims]}
    N, D, K, L = cfg.latent_dim, cfg.state_dim, cfg.kernel_size, cfg.max_len

    def stream(tag: int):
        return np.random.default_rng([seed, tag])

    init_adapters(store, stream(0), cfg, *feature_dims)
    init_bias(store, cfg, num_items)
    if cfg.time_aware:
        store.add("time_ln.gamma", np.ones(1))
        store.add("time_ln.beta", np.zeros(1))
    for k in range(1, cfg.layers + 1):
        rng = stream(10 * k + 1)
        a = f"align{k}"
        _tissd_params(store, f"{a}.tissd_v", rng, cfg)
        if cfg.shared_align:
            for name in [n for n in store.tensors if n.startswith(f"{a}.tissd_v.")]:
                store.alias(name.replace(".tissd_v.", ".tissd_t."), name)
        else:
            _tissd_params(store, f"{a}.tissd_t", stream(10 * k + 2), cfg)
        for m in ("v", "t"):
            _ln(store, f"{a}.ln1_{m}", N)
            _ffn(store, f"{a}.ffn_{m}", rng, N)
            _ln(store, f"{a}.ln2_{m}", N)
        rng = stream(10 * k + 3)
        if cfg.time_aware and cfg.adaptive_filter:
            _complex_filter(store, f"fusion{k}.adaptive", rng, L)
        if cfg.time_aware and cfg.learnable_filter:
            _complex_filter(store, f"fusion{k}.learnable", rng, L)
        rng = stream(10 * k + 4)
        c = f"cross{k}"
        store.add(f"{c}.W2", _gauss(rng, N, D))
        store.add(f"{c}.b2", np.zeros(D))
        store.add(f"{c}.W3", _gauss(rng, N, D + N + 1))
        store.add(f"{c}.b3", np.zeros(D + N + 1))
        store.add(f"{c}.conv_c", _conv(rng, K, D))
        store.add(f"{c}.conv_bx", _conv(rng, K, D + N))
        _decay_params(store, c, rng, cfg)
        if cfg.time_aware:
            _time_enhance_params(store, c, rng, cfg)
        _ln(store, f"{c}.ln_o", N)
        _ffn(store, f"{c}.ffn", rng, N)
        _ln(store, f"{c}.ln_y", N)
    return store


def parameter_ledger(cfg: ModelConfig, feature_dims: tuple[int, int], num_items: int) -> dict[str, int]:
    """Closed-form parameter counts per block, independent of the store."""
    N, D, K, L = cfg.latent_dim, cfg.state_dim, cfg.kernel_size, cfg.max_len
    dv, dt = feature_dims
    time_enh = K + L * L + L + L + 1 if cfg.time_aware else 0
    tissd = N * (2 * D + N + 1) + (2 * D + N + 1) + K * (2 * D + N) + 1 + L + time_enh
    ffn = N * 4 * N + 4 * N + 4 * N * N + N
    align = tissd * (1 if cfg.shared_align else 2) + 2 * (ffn + 4 * N)
    filt = 2 * L * L + 2 * L
    fusion = filt * (int(cfg.adaptive_filter) + int(cfg.learnable_filter)) if cfg.time_aware else 0
    cross = (N * D + D + N * (D + N + 1) + (D + N + 1) + K * D + K * (D + N) + 1 + L + time_enh
             + ffn + 4 * N)
    return {
        "adapter": dv * N + N + dt * N + N,
        "bias": 2 * num_items * N if cfg.use_id_bias else 0,
        "time_ln": 2 if cfg.time_aware else 0,
        "align": cfg.layers * align,
        "fusion": cfg.layers * fusion,
        "cross": cfg.layers * cross,
    }


# ------------------------------------------------------------------ forward

def adapt_features(f_v, f_t, p) -> tuple[Tensor, Tensor]:
    """Two independent affine maps into the latent space."""
    out = []
    for name, f in (("v", f_v), ("t", f_t)):
        f = T.as_tensor(f)
        w = p[f"adapter.{name}.W"]
        if f.shape[-1] != w.shape[0]:
            modality = "visual" if name == "v" else "text"
            raise ShapeError(f"{modality} features have dim {f.shape[-1]}, adapter expects {w.shape[0]}")
        out.append(T.matmul(f, w) + p[f"adapter.{name}.b"])
    return out[0], out[1]


def apply_modality_bias(x, item_ids, table, enabled: bool) -> Tensor:
    """``x + table[id - 1]`` per row; pad rows (id 0) get no bias."""
    x = T.as_tensor(x)
    if not enabled or table is None:
        return x
    ids = np.asarray(item_ids, dtype=np.int64)
    if (ids < 0).any() or (ids > table.shape[0]).any():
        bad = ids[(ids < 0) | (ids > table.shape[0])][0]
        raise IndexError(f"item id {bad} outside catalog of {table.shape[0]} items")
    rows = T.take_rows(table, np.maximum(ids - 1, 0))
    keep = (ids > 0).astype(x.dtype)[..., None]
    return x + rows * keep


def _modal_inputs(store, cfg, catalog, ids, valid):
    pres_v = (catalog.presence_v[ids] & valid)[..., None].astype(np.float32)
    pres_t = (catalog.presence_t[ids] & valid)[..., None].astype(np.float32)
    xv, xt = adapt_features(catalog.feat_v[ids], catalog.feat_t[ids], store)
    xv, xt = xv * pres_v, xt * pres_t
    bv = store["bias.v"] if cfg.use_id_bias else None
    bt = store["bias.t"] if cfg.use_id_bias else None
    return apply_modality_bias(xv, ids, bv, cfg.use_id_bias), apply_modality_bias(xt, ids, bt, cfg.use_id_bias)


def encode(store, cfg: ModelConfig, catalog, batch: Batch, training: bool = False, rng=None,
           diagnostics: dict | None = None) -> Tensor:
    """Sequence output ``Y`` of shape ``(B, L_max, N)``."""
    ids, valid = batch.items, batch.valid
    if ids.shape[1] != cfg.max_len:
        raise ShapeError(f"batch length {ids.shape[1]} != max_len {cfg.max_len}")
    if ids.max() > catalog.num_items:
        raise IndexError(f"item id {ids.max()} outside catalog of {catalog.num_items} items")
    xv, xt = _modal_inputs(store, cfg, catalog, ids, valid)
    if cfg.time_aware:
        d = compute_time_diffs(batch.timestamps, valid, store["time_ln.gamma"], store["time_ln.beta"])
    else:
        d = TimeDiffSeq(T.tensor(np.zeros(ids.shape)), raw_time_diffs(batch.timestamps, valid), valid)
    kw = dict(time_aware=cfg.time_aware, decay=cfg.decay, mode=cfg.ssd_mode)
    drop = dict(dropout_p=cfg.dropout, rng=rng, training=training)
    pv, pt, d_t = xv, xt, None
    for k in range(1, cfg.layers + 1):
        pv, pt, dv, dt = align_modalities(pv, pt, d, store.view(f"align{k}"), **drop, d_t=d_t, **kw)
        d, d_t = TimeDiffSeq(dv, d.raw, valid), TimeDiffSeq(dt, d.raw, valid)
    y = None
    for k in range(1, cfg.layers + 1):
        if cfg.time_aware:
            d_f = fuse_time_signals(d.values, d_t.values, store.view(f"fusion{k}"),
                                    adaptive=cfg.adaptive_filter, learnable=cfg.learnable_filter,
                                    diagnostics=diagnostics)
        else:
            d_f = T.tensor(np.zeros(ids.shape))
        qv, kt = (pv, pt) if y is None else (y, y)
        p = store.view(f"cross{k}")
        m = ticossd_forward(qv, kt, d_f, valid, p, **kw)
        y = output_head(m, qv, kt, p, **drop)
    return y


def user_representations(store, cfg, catalog, batch, training=False, rng=None) -> Tensor:
    y = encode(store, cfg, catalog, batch, training, rng)
    return y[:, -1, :]


def forward_user(items, timestamps, catalog, store, cfg, training: bool = False, rng=None):
    """Representation of one sequence (its most recent position) plus diagnostics."""
    diag: dict = {}
    batch = make_batch([(items, timestamps)], cfg.max_len)
    y = encode(store, cfg, catalog, batch, training, rng, diagnostics=diag)
    diag["length"] = int(min(len(items), cfg.max_len))
    return y[0, -1, :], diag


def item_representations(store, cfg, catalog, ids=None) -> Tensor:
    """Candidate vectors ``R`` with ``score = u R^T``; rows follow ``ids`` (default all items)."""
    ids = np.arange(1, catalog.num_items + 1) if ids is None else np.asarray(ids, dtype=np.int64)
    if (ids < 1).any() or (ids > catalog.num_items).any():
        bad = ids[(ids < 1) | (ids > catalog.num_items)][0]
        raise IndexError(f"unknown candidate id {bad}")
    rv, rt = adapt_features(catalog.feat_v[ids], catalog.feat_t[ids], store)
    rv = rv * catalog.presence_v[ids][:, None].astype(np.float32)
    rt = rt * catalog.presence_t[ids][:, None].astype(np.float32)
    if cfg.use_id_bias:
        rv = rv + T.take_rows(store["bias.v"], ids - 1)
        rt = rt + T.take_rows(store["bias.t"], ids - 1)
    return rv + rt


def score_candidates(u, store, cfg, catalog, candidate_ids=None) -> Tensor:
    """``u . R_i`` for each candidate; ``u`` is ``(N,)`` or ``(B, N)``."""
    reps = item_representations(store, cfg, catalog, candidate_ids)
    u = T.as_tensor(u)
    if u.ndim == 1:
        return T.matmul(T.reshape(u, (1, -1)), T.transpose(reps))[0]
    return T.matmul(u, T.transpose(reps))
