"""State-space duality kernels.

Two evaluations of the same causal operator

    y_i = sum_{j <= i} (prod_{k=j+1}^{i} a_k) (C_i . Bbar_j) X_j

* quadratic: build the 1-semiseparable decay mask and apply it to ``C Bbar^T``
  like a masked attention matrix, ``O(L^2 max(D, N))``;
* recurrent: carry a ``D x N`` state, ``h_t = a_t h_{t-1} + Bbar_t^T X_t``,
  ``y_t = C_t h_t``, ``O(L D N)``.

The quadratic form is composed from generic tape ops; the recurrent form is a
single fused op with a hand-written adjoint, so comparing their gradients
checks one route against the other.
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from . import tensor as T
from .tensor import DomainError, ShapeError, Tensor

MODES = ("auto", "quadratic", "recurrent")


def decay_mask_from_log(log_a) -> Tensor:
    """Mask from log decays: ``exp`` of segment sums, zero above the diagonal."""
    return T.exp(T.segment_sum(log_a))


def build_decay_mask(a_hat) -> Tensor:
    """``mask[i, j] = prod_{k=j+1}^{i} a_hat[k]`` (unit diagonal), zero for ``j > i``.

    Accepts ``(L,)`` or batched ``(B, L)`` decays; computed in log space.
    """
    a_hat = T.as_tensor(a_hat)
    if np.any(a_hat.data <= 0):
        bad = np.argwhere(a_hat.data <= 0)[0].tolist()
        raise DomainError(f"decay coefficients must be positive (index {bad})")
    return decay_mask_from_log(T.log(a_hat))


def literal_decay_mask(a_hat) -> np.ndarray:
    """Direct products without logs; valid for any sign.  Inspection only."""
    a = np.asarray(a_hat, dtype=np.float64)
    length = a.shape[-1]
    out = np.zeros(a.shape[:-1] + (length, length))
    for i in range(length):
        out[..., i, i] = 1.0
        for j in range(i - 1, -1, -1):
            out[..., i, j] = out[..., i, j + 1] * a[..., j + 1]
    return out


def _check(C: Tensor, Bbar: Tensor, X: Tensor) -> None:
    if C.shape != Bbar.shape:
        raise ShapeError(f"C {C.shape} and Bbar {Bbar.shape} must match")
    if C.shape[:-1] != X.shape[:-1]:
        raise ShapeError(f"C {C.shape} and X {X.shape} disagree on sequence/batch extents")


def ssd_quadratic(C, Bbar, X, mask) -> Tensor:
    """``(mask * (C @ Bbar^T)) @ X``."""
    C, Bbar, X, mask = (T.as_tensor(v) for v in (C, Bbar, X, mask))
    _check(C, Bbar, X)
    length = C.shape[-2]
    if mask.shape[-2:] != (length, length):
        raise ShapeError(f"mask {mask.shape} does not match sequence length {length}")
    scores = T.matmul(C, T.transpose(Bbar))
    return T.matmul(mask * scores, X)


def ssd_recurrent(C, Bbar, a_hat, X) -> Tensor:
    """Linear recurrence with state ``h_0 = 0``; any sign of ``a_hat`` is allowed."""
    C, Bbar, a_hat, X = (T.as_tensor(v) for v in (C, Bbar, a_hat, X))
    _check(C, Bbar, X)
    if a_hat.shape != C.shape[:-1]:
        raise ShapeError(f"a_hat {a_hat.shape} does not match sequence extents {C.shape[:-1]}")
    squeeze = C.ndim == 2
    lift = (lambda v: v[None]) if squeeze else (lambda v: v)
    c, b, a, x = (np.ascontiguousarray(lift(v.data), dtype=np.float64) for v in (C, Bbar, a_hat, X))
    y = _kernels.scan_forward(c, b, a, x)
    dt = X.dtype

    def grad(g):
        gy = np.ascontiguousarray(lift(g), dtype=np.float64)
        parts = _kernels.scan_backward(c, b, a, x, gy)
        return tuple((p[0] if squeeze else p).astype(dt) for p in parts)

    return T._emit("ssd_recurrent", (y[0] if squeeze else y).astype(dt), (C, Bbar, a_hat, X), grad)


def select_form(length: int, d: int, n: int) -> str:
    """Cost-model choice: quadratic when ``L^2 max(D, N) <= L D N``.

    Ties go to the quadratic form since it only fills the lower triangle.
    """
    return "quadratic" if length * length * max(d, n) <= length * d * n else "recurrent"


def ssd_auto(C, Bbar, a_hat, X, mode: str = "auto", log_a=None) -> Tensor:
    """Dispatch between the two forms.

    ``log_a`` (when the caller already has it) skips the ``log`` of ``a_hat``
    in the quadratic branch.
    """
    if mode not in MODES:
        raise ValueError(f"unknown SSD mode {mode!r}; expected one of {MODES}")
    C = T.as_tensor(C)
    if mode == "auto":
        mode = select_form(C.shape[-2], C.shape[-1], T.as_tensor(X).shape[-1])
    if mode == "recurrent":
        return ssd_recurrent(C, Bbar, a_hat, X)
    mask = decay_mask_from_log(log_a) if log_a is not None else build_decay_mask(a_hat)
    return ssd_quadratic(C, Bbar, X, mask)
