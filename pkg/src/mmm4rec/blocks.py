"""Time-aware SSD block and the weight-shared two-modality alignment stage."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .ssd import ssd_auto
from .temporal import TimeDiffSeq, discretize_zoh, enhance_time, first_valid
from .tensor import ShapeError, Tensor


def _lift(x) -> tuple[Tensor, bool]:
    x = T.as_tensor(x)
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    return x, False


def state_dim(p) -> int:
    n, cols = p["W1"].shape
    return (cols - n - 1) // 2


def tissd_project(x, p):
    """``[C, B, X, Delta] = x W1 + b1`` split at ``[D, 2D, 2D+N]``."""
    x = T.as_tensor(x)
    w1 = p["W1"]
    if x.shape[-1] != w1.shape[0]:
        raise ShapeError(f"input width {x.shape[-1]} != projection rows {w1.shape[0]}")
    n, d = w1.shape[0], state_dim(p)
    proj = T.matmul(x, w1) + p["b1"]
    return (proj[..., :d], proj[..., d:2 * d], proj[..., 2 * d:2 * d + n], proj[..., 2 * d + n])


def decay_A(p) -> Tensor:
    """The scalar state coefficient, kept negative through a log parametrization."""
    return -T.exp(p["A_log"])


def time_signal(values, valid, p, time_aware: bool) -> Tensor:
    if time_aware:
        return enhance_time(values, valid, p)
    return T.tensor(np.zeros(np.shape(valid)))


def tissd_forward(x, d: TimeDiffSeq, p, *, time_aware: bool = True, decay: str = "exp",
                  mode: str = "auto") -> tuple[Tensor, Tensor]:
    """One time-aware SSD pass; returns the sequence output and the enhanced time signal."""
    x, squeeze = _lift(x)
    valid = np.atleast_2d(d.valid)
    if valid.shape != x.shape[:2]:
        raise ShapeError(f"time mask {valid.shape} does not match input {x.shape[:2]}")
    n, dd = x.shape[-1], state_dim(p)
    m = T.tensor(valid[..., None].astype(x.dtype))
    proj = T.matmul(x, p["W1"]) + p["b1"]
    cbx = T.causal_conv1d(proj[..., :2 * dd + n], p["conv"], "silu", start=first_valid(valid))
    C = cbx[..., :dd]
    B = cbx[..., dd:2 * dd] * m
    Xin = cbx[..., 2 * dd:] * m
    delta = proj[..., 2 * dd + n]
    d_hat = time_signal(d.values, valid, p, time_aware)
    a_hat, Bbar, _, log_a = discretize_zoh(delta, d_hat, decay_A(p), B, p["b_delta"], decay)
    y = ssd_auto(C, Bbar, a_hat, Xin, "recurrent" if decay == "literal" else mode, log_a)
    if squeeze:
        return T.reshape(y, y.shape[1:]), T.reshape(d_hat, d_hat.shape[1:])
    return y, d_hat


def ffn_forward(h, p, dropout_p: float = 0.0, rng=None, training: bool = False) -> Tensor:
    hidden = T.silu(T.matmul(h, p["W_in"]) + p["b_in"])
    hidden = T.dropout(hidden, dropout_p, rng, training)
    return T.matmul(hidden, p["W_out"]) + p["b_out"]


def residual_norm(x, skip, p) -> Tensor:
    return T.layer_norm(x + skip, p["gamma"], p["beta"])


def align_modalities(xv, xt, d: TimeDiffSeq, p, dropout_p: float = 0.0, rng=None,
                     training: bool = False, *, d_t: TimeDiffSeq | None = None,
                     time_aware: bool = True, decay: str = "exp", mode: str = "auto"):
    """Both modalities through the (shared) TiSSD, then residual LN, FFN, residual LN.

    ``p`` is the stage view holding ``tissd_v``/``tissd_t`` (aliases of each
    other when weights are shared) plus per-modality norms and FFNs.
    Returns ``(Pv, Pt, d_hat_v, d_hat_t)``.
    """
    d_t = d if d_t is None else d_t
    kw = dict(time_aware=time_aware, decay=decay, mode=mode)
    xv_tilde, d_hat_v = tissd_forward(xv, d, p.view("tissd_v"), **kw)
    xt_tilde, d_hat_t = tissd_forward(xt, d_t, p.view("tissd_t"), **kw)
    hv = residual_norm(T.dropout(xv_tilde, dropout_p, rng, training), xv, p.view("ln1_v"))
    ht = residual_norm(T.dropout(xt_tilde, dropout_p, rng, training), xt, p.view("ln1_t"))
    pv = residual_norm(ffn_forward(hv, p.view("ffn_v"), dropout_p, rng, training), hv, p.view("ln2_v"))
    pt = residual_norm(ffn_forward(ht, p.view("ffn_t"), dropout_p, rng, training), ht, p.view("ln2_t"))
    return pv, pt, d_hat_v, d_hat_t
