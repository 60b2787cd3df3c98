"""Discrete Fourier transforms for arbitrary lengths, plus complex helpers.

The transform recurses on the smallest prime factor (mixed radix).  Radices
2, 3 and 5 use small dense butterflies; larger prime lengths go through
Bluestein's chirp-z reformulation on a power-of-two grid.  All arithmetic is
complex128 regardless of the tensor dtype.

Complex tensors are carried as :class:`ComplexVec`, a pair of real tensors,
so every complex operation differentiates through the real-valued tape.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

_DIRECT_RADICES = (2, 3, 5)


@dataclass
class ComplexVec:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"real part {self.re.shape} and imaginary part {self.im.shape} differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    @classmethod
    def from_numpy(cls, z: np.ndarray) -> ComplexVec:
        return cls(T.tensor(np.real(z)), T.tensor(np.imag(z)))

    def numpy(self) -> np.ndarray:
        return self.re.data.astype(np.float64) + 1j * self.im.data.astype(np.float64)


def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


@lru_cache(maxsize=None)
def _twiddles(p: int, m: int, sign: int) -> np.ndarray:
    return np.exp(sign * 2j * np.pi * np.outer(np.arange(p), np.arange(m)) / (p * m))


@lru_cache(maxsize=None)
def _chirp(n: int, sign: int) -> tuple[np.ndarray, np.ndarray, int]:
    idx = np.arange(n)
    # n^2 mod 2n keeps the phase argument small for large n
    w = np.exp(sign * 1j * np.pi * ((idx * idx) % (2 * n)) / n)
    size = 1 << (2 * n - 1).bit_length()
    filt = np.zeros(size, dtype=np.complex128)
    filt[:n] = np.conj(w)
    filt[size - n + 1:] = np.conj(w[1:])[::-1]
    return w, _transform(filt, -1), size


def _bluestein(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    w, filt_spec, size = _chirp(n, sign)
    padded = np.zeros(x.shape[:-1] + (size,), dtype=np.complex128)
    padded[..., :n] = x * w
    conv = _transform(_transform(padded, -1) * filt_spec, +1) / size
    return conv[..., :n] * w


def _transform(x: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized DFT along the last axis with kernel ``exp(sign*2*pi*i*k*n/L)``."""
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = _smallest_factor(n)
    if p == n:
        if n in _DIRECT_RADICES:
            return x @ _dft_matrix(n, sign)
        return _bluestein(x, sign)
    m = n // p
    # decimation in time: sub[..., r, j] = x[..., r + p*j]
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    inner = _transform(np.ascontiguousarray(sub), sign) * _twiddles(p, m, sign)
    out = np.einsum("rs,...rk->...sk", _dft_matrix(p, sign), inner)
    return out.reshape(x.shape[:-1] + (n,))


def fft_array(x, n: int | None = None) -> np.ndarray:
    """Forward DFT of a numpy array (``exp(-2 pi i k n / L)``, unnormalized)."""
    x = np.asarray(x, dtype=np.complex128)
    if n is not None:
        x = _fit_length(x, n)
    return _transform(x, -1)


def ifft_array(z, n: int | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    if n is not None:
        z = _fit_length(z, n)
    return _transform(z, +1) / z.shape[-1]


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("transform length must be >= 1")
    cur = x.shape[-1]
    if cur >= n:
        return x[..., :n]
    pad = np.zeros(x.shape[:-1] + (n - cur,), dtype=x.dtype)
    return np.concatenate([x, pad], axis=-1)


def naive_dft(x, inverse: bool = False) -> np.ndarray:
    """O(L^2) double loop; reference only."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    sign = 1.0 if inverse else -1.0
    out = np.zeros_like(x)
    for k in range(n):
        acc = 0.0 + 0.0j
        for j in range(n):
            acc = acc + x[..., j] * np.exp(sign * 2j * np.pi * k * j / n)
        out[..., k] = acc
    return out / n if inverse else out


# ------------------------------------------------------------ tape-aware ops

def _complex_pair(op: str, re: Tensor, im: Tensor, z: np.ndarray, adjoint) -> ComplexVec:
    """Emit two tape nodes (real and imaginary part) sharing one forward pass.

    ``adjoint(gc)`` maps a complex cotangent ``d loss/d Re + i d loss/d Im`` of
    the output to the complex cotangent of the input.
    """
    dt = re.dtype

    def split(gc):
        return np.real(gc).astype(dt), np.imag(gc).astype(dt)

    out_re = T._emit(op + ".re", np.real(z).astype(dt), (re, im), lambda g: split(adjoint(g)))
    out_im = T._emit(op + ".im", np.imag(z).astype(dt), (re, im), lambda g: split(adjoint(1j * g)))
    return ComplexVec(out_re, out_im)


def _as_complex(x) -> ComplexVec:
    if isinstance(x, ComplexVec):
        return x
    x = T.as_tensor(x)
    return ComplexVec(x, T.Tensor(np.zeros_like(x.data)))


def fft(x, n: int | None = None) -> ComplexVec:
    """Differentiable forward DFT along the last axis of a real tensor or ComplexVec."""
    zc = _as_complex(x)
    if n is not None and n != zc.shape[-1]:
        raise ShapeError(f"fft: input length {zc.shape[-1]} != requested {n}; pad explicitly")
    z = fft_array(zc.numpy())
    return _complex_pair("fft", zc.re, zc.im, z, lambda gc: _transform(gc, +1))


def ifft(z: ComplexVec) -> ComplexVec:
    """Differentiable inverse DFT (carries the ``1/L`` factor)."""
    n = z.shape[-1]
    out = ifft_array(z.numpy())
    return _complex_pair("ifft", z.re, z.im, out, lambda gc: _transform(gc, -1) / n)


def complex_mul(a: ComplexVec, b: ComplexVec) -> ComplexVec:
    return ComplexVec(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)


def complex_add(a: ComplexVec, b: ComplexVec) -> ComplexVec:
    return ComplexVec(a.re + b.re, a.im + b.im)


def complex_linear(z: ComplexVec, w_re, w_im, b_re, b_im) -> ComplexVec:
    """``z W + b`` through the stacked real block product.

    ``[Re z, Im z] @ [[Re W, Im W], [-Im W, Re W]] + [Re b, Im b]``, i.e.
    the 2x2 real realization of complex multiplication applied to row
    vectors.
    """
    w_re, w_im = T.as_tensor(w_re), T.as_tensor(w_im)
    length = z.shape[-1]
    if w_re.shape != (length, length) or w_im.shape != (length, length):
        raise ShapeError(f"complex_linear: weight {w_re.shape} does not match length {length}")
    block = T.concat([T.concat([w_re, w_im], axis=1), T.concat([-w_im, w_re], axis=1)], axis=0)
    stacked = T.concat([z.re, z.im], axis=-1)
    bias = T.concat([T.as_tensor(b_re), T.as_tensor(b_im)], axis=-1)
    out = T.matmul(stacked if stacked.ndim > 1 else T.reshape(stacked, (1, -1)), block) + bias
    if stacked.ndim == 1:
        out = T.reshape(out, (2 * length,))
    return ComplexVec(out[..., :length], out[..., length:])
