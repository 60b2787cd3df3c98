"""Frequency-domain fusion of the two modalities' enhanced time signals."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .fft import ComplexVec, complex_add, complex_linear, complex_mul, fft, ifft
from .tensor import ShapeError, Tensor


def filter_linear(z: ComplexVec, f) -> ComplexVec:
    return complex_linear(z, f["W_re"], f["W_im"], f["b_re"], f["b_im"])


def adaptive_filter_apply(spectrum: ComplexVec, f) -> ComplexVec:
    """Kernel generated from the spectrum itself, then applied elementwise."""
    if f["W_re"].shape[0] != spectrum.shape[-1]:
        raise ShapeError(f"filter size {f['W_re'].shape[0]} != spectrum length {spectrum.shape[-1]}")
    kernel = filter_linear(spectrum, f)
    return complex_mul(kernel, spectrum)


def _left_pad(x: Tensor, length: int) -> Tensor:
    short = length - x.shape[-1]
    if short < 0:
        raise ShapeError(f"signal length {x.shape[-1]} exceeds filter size {length}")
    if short == 0:
        return x
    zeros = T.tensor(np.zeros(x.shape[:-1] + (short,)))
    return T.concat([zeros, x], axis=-1)


def fuse_time_signals(d_hat_v, d_hat_t, p, *, adaptive: bool = True, learnable: bool = True,
                      diagnostics: dict | None = None) -> Tensor:
    """Real time signal fused from both modalities.

    FFT each signal, reweight each with the shared adaptive filter, add, refine
    with the learnable filter, invert and keep the real part.  Signals shorter
    than the filter are left-padded with zeros and the output is cut back to
    the input length.
    """
    d_hat_v, d_hat_t = T.as_tensor(d_hat_v), T.as_tensor(d_hat_t)
    if d_hat_v.shape != d_hat_t.shape:
        raise ShapeError(f"time signals differ in shape: {d_hat_v.shape} vs {d_hat_t.shape}")
    length = d_hat_v.shape[-1]
    size = length
    for name in ("adaptive", "learnable"):
        if f"{name}.W_re" in p:
            size = p[f"{name}.W_re"].shape[0]
    spec_v = fft(_left_pad(d_hat_v, size))
    spec_t = fft(_left_pad(d_hat_t, size))
    if adaptive:
        spec_v = adaptive_filter_apply(spec_v, p.view("adaptive"))
        spec_t = adaptive_filter_apply(spec_t, p.view("adaptive"))
    fused = complex_add(spec_v, spec_t)
    if learnable:
        fused = filter_linear(fused, p.view("learnable"))
    out = ifft(fused)
    if diagnostics is not None:
        diagnostics["imag_residue"] = float(np.max(np.abs(out.im.data)))
    return out.re[..., size - length:]
