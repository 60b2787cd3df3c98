"""Compiled loops for the two SSD forms.

Everything is float64 and batched over the leading axis.  The backward scan
recomputes each batch element's states into a scratch buffer instead of
keeping all ``B x L x D x N`` of them alive.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


@njit(cache=True)
def scan_forward(c, b, a, x):
    nb, length, d = c.shape
    n = x.shape[2]
    y = np.zeros((nb, length, n))
    h = np.zeros((d, n))
    for bb in range(nb):
        h[:, :] = 0.0
        for t in range(length):
            at = a[bb, t]
            for i in range(d):
                bi = b[bb, t, i]
                ci = c[bb, t, i]
                for j in range(n):
                    v = at * h[i, j] + bi * x[bb, t, j]
                    h[i, j] = v
                    y[bb, t, j] += ci * v
    return y


@njit(cache=True)
def scan_backward(c, b, a, x, gy):
    nb, length, d = c.shape
    n = x.shape[2]
    gc = np.zeros_like(c)
    gb = np.zeros_like(b)
    ga = np.zeros_like(a)
    gx = np.zeros_like(x)
    states = np.zeros((length, d, n))
    gh = np.zeros((d, n))
    for bb in range(nb):
        for t in range(length):
            at = a[bb, t]
            for i in range(d):
                for j in range(n):
                    prev = states[t - 1, i, j] if t > 0 else 0.0
                    states[t, i, j] = at * prev + b[bb, t, i] * x[bb, t, j]
        gh[:, :] = 0.0
        for t in range(length - 1, -1, -1):
            for i in range(d):
                ci = c[bb, t, i]
                bi = b[bb, t, i]
                acc_c = 0.0
                acc_b = 0.0
                acc_a = 0.0
                for j in range(n):
                    g = gh[i, j] + ci * gy[bb, t, j]
                    gh[i, j] = g
                    acc_c += states[t, i, j] * gy[bb, t, j]
                    acc_b += g * x[bb, t, j]
                    gx[bb, t, j] += g * bi
                    if t > 0:
                        acc_a += g * states[t - 1, i, j]
                gc[bb, t, i] = acc_c
                gb[bb, t, i] = acc_b
                ga[bb, t] += acc_a
            at = a[bb, t]
            for i in range(d):
                for j in range(n):
                    gh[i, j] *= at
    return gc, gb, ga, gx


@njit(cache=True)
def quadratic_forward(c, b, log_a, x):
    nb, length, d = c.shape
    n = x.shape[2]
    y = np.zeros((nb, length, n))
    for bb in range(nb):
        cs = np.cumsum(log_a[bb])
        for i in range(length):
            for j in range(i + 1):
                s = 0.0
                for k in range(d):
                    s += c[bb, i, k] * b[bb, j, k]
                w = np.exp(cs[i] - cs[j]) * s
                for k in range(n):
                    y[bb, i, k] += w * x[bb, j, k]
    return y


def warmup() -> None:
    """Trigger compilation so timings exclude JIT cost."""
    one = np.ones((1, 2, 2))
    a = np.ones((1, 2))
    scan_forward(one, one, a, one)
    scan_backward(one, one, a, one, one)
    quadratic_forward(one, one, np.zeros((1, 2)), one)
