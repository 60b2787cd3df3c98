"""Cross-modal time-aware SSD (queries from the visual stream, keys/values from text)."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .blocks import decay_A, ffn_forward, residual_norm, time_signal
from .ssd import ssd_auto
from .temporal import discretize_zoh, first_valid
from .tensor import ShapeError, Tensor


def ticossd_project(pv, pt, p):
    """``C = Pv W2 + b2``; ``[B, X, Delta] = Pt W3 + b3``."""
    pv, pt = T.as_tensor(pv), T.as_tensor(pt)
    w2, w3 = p["W2"], p["W3"]
    if pv.shape[-1] != w2.shape[0] or pt.shape[-1] != w3.shape[0]:
        raise ShapeError(f"stream widths {pv.shape[-1]}, {pt.shape[-1]} do not match "
                         f"projections {w2.shape}, {w3.shape}")
    d, n = w2.shape[1], w3.shape[0]
    C = T.matmul(pv, w2) + p["b2"]
    proj = T.matmul(pt, w3) + p["b3"]
    return C, proj[..., :d], proj[..., d:d + n], proj[..., d + n]


def ticossd_forward(pv, pt, d_f, valid, p, *, time_aware: bool = True, decay: str = "exp",
                    mode: str = "auto") -> Tensor:
    """``M = mask o (C B^T) (diag(delta_hat) X)`` with the fused signal in place of D."""
    pv, pt = T.as_tensor(pv), T.as_tensor(pt)
    squeeze = pv.ndim == 2
    if squeeze:
        pv, pt = T.reshape(pv, (1,) + pv.shape), T.reshape(pt, (1,) + pt.shape)
        d_f = T.reshape(T.as_tensor(d_f), (1, -1))
    valid = np.atleast_2d(np.asarray(valid, dtype=bool))
    start = first_valid(valid)
    d, n = p["W2"].shape[1], p["W3"].shape[0]
    m = T.tensor(valid[..., None].astype(pv.dtype))
    C = T.matmul(pv, p["W2"]) + p["b2"]
    proj = T.matmul(pt, p["W3"]) + p["b3"]
    C = T.causal_conv1d(C, p["conv_c"], "silu", start=start)
    bx = T.causal_conv1d(proj[..., :d + n], p["conv_bx"], "silu", start=start)
    B = bx[..., :d] * m
    X = bx[..., d:] * m
    delta = proj[..., d + n]
    d_hat = time_signal(d_f, valid, p, time_aware)
    a_hat, _, delta_hat, log_a = discretize_zoh(delta, d_hat, decay_A(p), B, p["b_delta"], decay)
    X = T.reshape(delta_hat, delta_hat.shape + (1,)) * X
    out = ssd_auto(C, B, a_hat, X, "recurrent" if decay == "literal" else mode, log_a)
    return T.reshape(out, out.shape[1:]) if squeeze else out


def output_head(m, pv, pt, p, dropout_p: float = 0.0, rng=None, training: bool = False) -> Tensor:
    """``O = LN(M + Pv + Pt)``, ``Y = LN(FFN(O) + O)``."""
    o = T.layer_norm(T.dropout(m, dropout_p, rng, training) + pv + pt, p["ln_o.gamma"], p["ln_o.beta"])
    return residual_norm(ffn_forward(o, p.view("ffn"), dropout_p, rng, training), o, p.view("ln_y"))
