"""Dense tensors with tape-based reverse-mode differentiation.

Arrays are stored as float32 by default; reductions (matmul, sums, norms)
accumulate in float64 and round once on output.  Gradient checks switch the
whole computation to float64 with :func:`precision`.

Recording happens only inside an active :class:`GradTape`.  Outside a tape
every op is a plain numpy computation, which is what evaluation uses.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

MAX_RANK = 3

_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside an operation's mathematical domain."""


def default_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for new tensors on this thread."""
    prev = default_dtype()
    _local.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _local.dtype = prev


@contextlib.contextmanager
def debug_checks(enabled: bool = True) -> Iterator[None]:
    """Scan every op output for NaN/Inf and raise ``FloatingPointError``."""
    prev = getattr(_local, "debug", False)
    _local.debug = enabled
    try:
        yield
    finally:
        _local.debug = prev


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> GradTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "tape_id", "grad", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or default_dtype())
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"tensors have rank <= {MAX_RANK}, got shape {arr.shape}")
        if 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self.grad: np.ndarray | None = None
        self._tape: GradTape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> Tensor:
        t = cls.__new__(cls)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"tensors have rank <= {MAX_RANK}, got shape {arr.shape}")
        t.data = arr
        t.requires_grad = False
        t.tape_id = None
        t.grad = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> Tensor:
        return transpose(self)


@dataclass
class _Node:
    op: str
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class GradTape:
    """Append-only record of differentiable ops.

    Nodes are appended in execution order, so reverse order is a valid
    topological order for the backward sweep.
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> GradTape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op: str, out: Tensor, parents, backward) -> None:
        out.requires_grad = True
        out.tape_id = len(self.nodes)
        out._tape = self
        self.nodes.append(_Node(op, out, tuple(parents), backward))

    def backward(self, loss: Tensor, wrt: dict[str, Tensor] | None = None) -> dict[str, np.ndarray]:
        """Sweep the tape backwards from a scalar ``loss``.

        Returns gradients for the tensors in ``wrt`` (zeros for tensors the
        loss does not depend on).  Leaf tensors also get ``.grad`` set.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes[: loss.tape_id + 1]):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if parent._tape is None:
                    leaves[key] = parent
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=parent.dtype).reshape(parent.shape)
        for key, leaf in leaves.items():
            leaf.grad = grads[key].astype(leaf.dtype, copy=False)
        if wrt is None:
            return {}
        return {
            name: grads.get(id(t), np.zeros_like(t.data)).astype(t.dtype, copy=False)
            for name, t in wrt.items()
        }


def backward(loss: Tensor, wrt: dict[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    if loss._tape is None:
        raise ValueError("loss has no tape; compute it inside `with GradTape():`")
    return loss._tape.backward(loss, wrt)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor._wrap(data)
    if getattr(_local, "debug", False) and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {op}")
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(op, out, parents, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result_dtype(*arrays: np.ndarray) -> np.dtype:
    return np.result_type(*arrays)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _emit("pow", a.data ** exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def minimum(a, bound: float) -> Tensor:
    """Elementwise ``min(a, bound)``; the gradient is zero where clipped."""
    a = as_tensor(a)
    keep = a.data <= bound
    return _emit("minimum", np.where(keep, a.data, bound).astype(a.dtype), (a,),
                 lambda g: (g * keep,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    dt = _result_dtype(a.data, b.data)
    a64, b64 = a.data.astype(np.float64), b.data.astype(np.float64)
    out = np.matmul(a64, b64).astype(dt)

    def grad(g):
        g64 = g.astype(np.float64)
        ga = np.matmul(g64, np.swapaxes(b64, -1, -2))
        gb = np.matmul(np.swapaxes(a64, -1, -2), g64)
        return _unbroadcast(ga, a.shape).astype(dt), _unbroadcast(gb, b.shape).astype(dt)

    return _emit("matmul", out, (a, b), grad)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _emit("transpose", np.swapaxes(a.data, -1, -2), (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _emit("sum", np.asarray(out), (a,), grad)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis, keepdims) * (1.0 / float(count))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def grad(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("getitem", np.array(out), (a,), grad)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def grad(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, parts, grad)


def take_rows(table, idx) -> Tensor:
    """Row gather ``table[idx]`` for a 2-D table and an integer index array."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)

    def grad(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("take_rows", table.data[idx], (table,), grad)


def masked_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, value, a.data).astype(a.dtype)
    return _emit("masked_fill", out, (a,), lambda g: (np.where(mask, 0.0, g).astype(g.dtype),))


def dropout(a, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0 or rng is None:
        return as_tensor(a)
    a = as_tensor(a)
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return mul(a, keep)


# ------------------------------------------------------------- activations

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _emit("softplus", np.logaddexp(0.0, a.data).astype(a.dtype), (a,),
                 lambda g: (g * _sigmoid(a.data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _emit("silu", a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _emit("relu", np.where(pos, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * pos,))


def identity(a) -> Tensor:
    return as_tensor(a)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "exp": exp,
    "softplus": softplus,
    "silu": silu,
    "sigmoid": sigmoid,
    "relu": relu,
    "identity": identity,
}


def unary(op: str, x) -> Tensor:
    try:
        fn = ACTIVATIONS[op]
    except KeyError:
        raise ValueError(f"unknown unary op {op!r}; expected one of {sorted(ACTIVATIONS)}") from None
    return fn(x)


# --------------------------------------------------------- composite kernels

def layer_norm(x, gamma, beta, eps: float = 1e-5, mask: np.ndarray | None = None) -> Tensor:
    """Normalize over the last axis, then scale and shift.

    With ``mask`` only the flagged entries enter the statistics and the
    output is zero elsewhere; this is the length-axis mode used for 1-D
    signals with padding.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ValueError("eps must be positive")
    x64 = x.data.astype(np.float64)
    m = np.ones_like(x64) if mask is None else np.broadcast_to(mask, x.shape).astype(np.float64)
    count = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    mu = (x64 * m).sum(axis=-1, keepdims=True) / count
    centered = (x64 - mu) * m
    var = (centered**2).sum(axis=-1, keepdims=True) / count
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    g64, b64 = gamma.data.astype(np.float64), beta.data.astype(np.float64)
    out = (g64 * xhat + b64) * m if mask is not None else g64 * xhat + b64
    dt = x.dtype

    def grad(g):
        g = g.astype(np.float64) * m
        gxhat = g * g64
        mean_g = gxhat.sum(axis=-1, keepdims=True) / count
        mean_gx = (gxhat * xhat).sum(axis=-1, keepdims=True) / count
        gx = inv * (gxhat - mean_g - xhat * mean_gx) * m
        return (gx.astype(dt),
                _unbroadcast(g * xhat, gamma.shape).astype(dt),
                _unbroadcast(g, beta.shape).astype(dt))

    return _emit("layer_norm", out.astype(dt), (x, gamma, beta), grad)


def _conv_index(length: int, k: int, start: np.ndarray) -> np.ndarray:
    t = np.arange(length)[:, None] - np.arange(k)[None, :]
    return np.maximum(t[None, :, :], start[:, None, None])


def causal_conv1d(x, omega, activation: str = "identity", start=None) -> Tensor:
    """Depthwise causal convolution with index clamping.

    ``out[t] = sum_m x[max(t - m, s)] * omega[m]`` where ``s`` is the first
    valid position of the row (0 unless ``start`` is given).  ``x`` is
    ``(L, C)`` or ``(B, L, C)``; ``omega`` is ``(K, C)``.
    """
    x, omega = as_tensor(x), as_tensor(omega)
    if omega.ndim != 2 or omega.shape[0] < 1:
        raise ShapeError(f"conv kernel must be (K, C), got {omega.shape}")
    squeeze = x.ndim == 2
    xb = x.data[None] if squeeze else x.data
    b, length, c = xb.shape
    if omega.shape[1] != c:
        raise ShapeError(f"conv kernel {omega.shape} does not match {c} channels")
    k = omega.shape[0]
    s = np.zeros(b, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64).reshape(b)
    idx = _conv_index(length, k, s)  # (b, L, K)
    rows = np.arange(b)[:, None, None]
    gathered = xb[rows, idx].astype(np.float64)  # (b, L, K, C)
    w64 = omega.data.astype(np.float64)
    out = np.einsum("blkc,kc->blc", gathered, w64)
    dt = x.dtype

    def grad(g):
        g64 = (g[None] if squeeze else g).astype(np.float64)
        gw = np.einsum("blkc,blc->kc", gathered, g64)
        contrib = g64[:, :, None, :] * w64[None, None, :, :]
        gx = np.zeros((b, length, c))
        np.add.at(gx, (np.broadcast_to(rows, idx.shape), idx), contrib)
        gx = gx[0] if squeeze else gx
        return gx.astype(dt), gw.astype(dt)

    conv = _emit("causal_conv1d", (out[0] if squeeze else out).astype(dt), (x, omega), grad)
    return unary(activation, conv)


def cross_entropy(logits, targets) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over the rows of a 2-D input."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    z = logits.data.astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = np.mean(lse - z[rows, targets])

    def grad(g):
        p = np.exp(z - lse[:, None])
        p[rows, targets] -= 1.0
        return ((p * (float(g) / z.shape[0])).astype(logits.dtype),)

    return _emit("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), grad)


def segment_sum(x) -> Tensor:
    """``out[..., i, j] = sum_{k=j+1}^{i} x[..., k]`` for ``j <= i``, ``-inf`` above.

    Differences of float64 prefix sums, so entries near the diagonal keep full
    precision even when the running total is large.
    """
    x = as_tensor(x)
    x64 = x.data.astype(np.float64)
    cs = np.cumsum(x64, axis=-1)
    length = x.shape[-1]
    lower = np.tril(np.ones((length, length), dtype=bool))
    seg = cs[..., :, None] - cs[..., None, :]
    out = np.where(lower, seg, -np.inf).astype(x.dtype)

    def grad(g):
        g = np.where(lower, g.astype(np.float64), 0.0)
        # d out[i, j] / d x[k] = 1 for j < k <= i
        excl = np.cumsum(g, axis=-1) - g  # sum over j < k, indexed [i, k]
        gx = np.where(lower, excl, 0.0).sum(axis=-2)
        return (gx.astype(x.dtype),)

    return _emit("segment_sum", out, (x,), grad)
