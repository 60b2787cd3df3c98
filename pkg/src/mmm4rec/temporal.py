"""Inter-arrival time signal: differences, global enhancement, discretization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class OrderingError(ValueError):
    """Timestamps go backwards."""


@dataclass
class TimeDiffSeq:
    values: Tensor  # (B, L) normalized differences, zero at padding
    raw: np.ndarray  # (B, L) gaps in seconds, raw[first valid] == 0
    valid: np.ndarray  # (B, L) bool

    @property
    def start(self) -> np.ndarray:
        return first_valid(self.valid)


def first_valid(valid: np.ndarray) -> np.ndarray:
    """Index of the first real position per row (left padding)."""
    valid = np.asarray(valid, dtype=bool)
    return np.where(valid.any(axis=-1), valid.argmax(axis=-1), valid.shape[-1] - 1)


def raw_time_diffs(timestamps, valid=None) -> np.ndarray:
    ts = np.atleast_2d(np.asarray(timestamps, dtype=np.int64))
    valid = np.ones(ts.shape, dtype=bool) if valid is None else np.atleast_2d(np.asarray(valid, dtype=bool))
    raw = np.zeros(ts.shape, dtype=np.float64)
    both = valid[:, 1:] & valid[:, :-1]
    gaps = np.diff(ts, axis=-1)
    bad = both & (gaps < 0)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise OrderingError(f"timestamps decrease at index {col + 1} (row {row}): "
                            f"{ts[row, col]} -> {ts[row, col + 1]}")
    raw[:, 1:] = np.where(both, gaps, 0.0)
    return raw


def compute_time_diffs(timestamps, valid=None, gamma=None, beta=None, eps: float = 1e-5) -> TimeDiffSeq:
    """Gaps ``[0, t2-t1, ...]`` layer-normalized along the valid positions.

    ``gamma``/``beta`` are the scalar affine parameters (identity when omitted).
    Accepts one sequence ``(L,)`` or a left-padded batch ``(B, L)``.
    """
    ts = np.atleast_2d(np.asarray(timestamps, dtype=np.int64))
    valid = np.ones(ts.shape, dtype=bool) if valid is None else np.atleast_2d(np.asarray(valid, dtype=bool))
    raw = raw_time_diffs(ts, valid)
    gamma = T.tensor(1.0) if gamma is None else gamma
    beta = T.tensor(0.0) if beta is None else beta
    values = T.layer_norm(T.tensor(raw), gamma, beta, eps=eps, mask=valid)
    return TimeDiffSeq(values=values, raw=raw, valid=valid)


def time_mlp(values, p) -> Tensor:
    """Scalar gate per sequence: ``R^L -> R^L -> R`` with a silu hidden layer."""
    hidden = T.silu(T.matmul(values, p["mlp_w1"]) + p["mlp_b1"])
    return T.matmul(hidden, p["mlp_w2"]) + p["mlp_b2"]  # (B, 1)


def enhance_time(values, valid, p, activation: str = "silu") -> Tensor:
    """``alpha * act(values * omega)``, with ``alpha`` a per-sequence scalar from the MLP.

    ``values`` is ``(B, L)``; padded positions are zeroed on the way in and
    on the way out.
    """
    values = T.as_tensor(values)
    squeeze = values.ndim == 1
    valid = np.atleast_2d(np.asarray(valid, dtype=bool))
    v = T.reshape(values, (1, -1)) if squeeze else values
    m = valid.astype(v.dtype)
    v = v * m
    nb, length = v.shape
    conv = T.causal_conv1d(T.reshape(v, (nb, length, 1)), p["omega_d"], activation, start=first_valid(valid))
    alpha = time_mlp(v, p)
    d_hat = alpha * T.reshape(conv, (nb, length)) * m
    return T.reshape(d_hat, (length,)) if squeeze else d_hat


def discretize_zoh(delta, d_hat, A, B, b_delta, decay: str = "exp"):
    """Time-modulated step size and zero-order-hold discretization.

    Returns ``(a_hat, Bbar, delta_hat, log_a)`` where
    ``delta_hat = softplus(delta * d_hat) + b_delta``, ``a_hat = exp(A * delta_hat)``
    and ``Bbar = delta_hat * B`` row-wise.  ``log_a`` is capped at 0 so the
    decays stay in (0, 1] even if ``delta_hat`` turns negative.  Under
    ``decay="literal"`` the decay is ``A * delta_hat`` itself and ``log_a`` is
    ``None``.  A ``b_delta`` longer than the sequence is right-aligned with it,
    matching the left-padding convention.
    """
    delta = T.as_tensor(delta)
    b_delta = T.as_tensor(b_delta)
    if b_delta.ndim == 1 and b_delta.shape[0] > delta.shape[-1]:
        b_delta = b_delta[b_delta.shape[0] - delta.shape[-1]:]
    delta_hat = T.softplus(delta * d_hat) + b_delta
    Bbar = T.reshape(delta_hat, delta_hat.shape + (1,)) * B
    if decay == "exp":
        log_a = T.minimum(delta_hat * A, 0.0)
        return T.exp(log_a), Bbar, delta_hat, log_a
    if decay == "literal":
        return delta_hat * A, Bbar, delta_hat, None
    raise ValueError(f"unknown decay mode {decay!r}")
