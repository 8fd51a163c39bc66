"""Dense 64-bit tensors with a reverse-mode tape.

Primitives compute their value eagerly. While a :class:`Tape` is active, any
primitive whose inputs depend on a ``requires_grad`` tensor appends a record
holding its inputs, output and a backward rule. :func:`backward` sweeps the
records in reverse and accumulates into ``.grad`` of the leaf tensors.

Without an active tape nothing is recorded, which is what inference uses.
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp
from scipy.special import expit


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_tracked", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        value = np.array(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(-1, 1)
        elif value.ndim != 2:
            raise ValueError(f"tensors are 2-D matrices, got shape {value.shape}")
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() needs a 1x1 tensor")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications; use as a context manager."""

    def __init__(self):
        self.records: list[tuple[tuple[Tensor, ...], Tensor, object]] = []
        self._outputs: set[int] = set()

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, inputs, output, rule):
        self.records.append((inputs, output, rule))
        self._outputs.add(id(output))


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _active():
    tapes = _stack()
    return tapes[-1] if tapes else None


def _emit(value, inputs, rule) -> Tensor:
    """Wrap a primitive's result, enforce finiteness, and record it if tracked."""
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("primitive produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = np.zeros_like(value)
    out.requires_grad = False
    tape = _active()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        tape.record(inputs, out, rule)
    else:
        out._tracked = False
    return out


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm(s: sp.csr_matrix, h: Tensor) -> Tensor:
    """Sparse (N x N) times dense (N x C); ``s`` is a constant."""
    if s.shape[1] != h.shape[0]:
        raise ValueError(f"spmm shape mismatch: {s.shape} @ {h.shape}")
    return _emit(np.asarray(s @ h.value), (h,), lambda g: (np.asarray(s.T @ g),))


# ---------------------------------------------------------------- elementwise

def relu(t: Tensor) -> Tensor:
    x = t.value
    mask = x > 0
    return _emit(np.where(mask, x, 0.0), (t,), lambda g: (g * mask,))


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    x = t.value
    d = np.where(x > 0, 1.0, slope)
    return _emit(x * d, (t,), lambda g: (g * d,))


def sigmoid(t: Tensor) -> Tensor:
    s = expit(t.value)
    return _emit(s, (t,), lambda g: (g * s * (1.0 - s),))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g))


def add_bias(t: Tensor, b: Tensor) -> Tensor:
    """Add a 1 x C row to every row of an R x C tensor."""
    if b.shape != (1, t.shape[1]):
        raise ValueError(f"bias shape {b.shape} does not broadcast over {t.shape}")
    return _emit(t.value + b.value, (t, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(t.value * c, (t,), lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be an R x 1 column broadcast across columns."""
    av, bv = a.value, b.value
    if bv.shape == av.shape:
        return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))
    if bv.shape == (av.shape[0], 1):
        return _emit(av * bv, (a, b), lambda g: (g * bv, (g * av).sum(axis=1, keepdims=True)))
    raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner products, R x C and R x C -> R x 1."""
    if a.shape != b.shape:
        raise ValueError(f"rowdot shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return _emit(np.einsum("ij,ij->i", av, bv)[:, None], (a, b), lambda g: (g * bv, g * av))


def concat_cols(parts: list[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValueError("concat_cols needs equal row counts")
    widths = np.cumsum([0] + [p.shape[1] for p in parts])
    value = np.concatenate([p.value for p in parts], axis=1)

    def rule(g):
        return tuple(g[:, widths[k]:widths[k + 1]] for k in range(len(parts)))

    return _emit(value, tuple(parts), rule)


def take_rows(t: Tensor, index) -> Tensor:
    """Gather rows (repeats allowed); backward scatter-adds."""
    index = np.asarray(index, dtype=np.int64)
    n = t.shape[0]

    def rule(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, index, g)
        return (out,)

    return _emit(t.value[index], (t,), rule)


def take_cols(t: Tensor, start: int, stop: int) -> Tensor:
    shape = t.shape

    def rule(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _emit(t.value[:, start:stop].copy(), (t,), rule)


def sum_all(t: Tensor) -> Tensor:
    shape = t.shape
    return _emit(np.array([[t.value.sum()]]), (t,), lambda g: (np.full(shape, g[0, 0]),))


# ---------------------------------------------------------------- segment ops

def _segment_sum(values: np.ndarray, targets: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, targets, values)
    return out


def segment_softmax(logits: Tensor, targets, n: int) -> Tensor:
    """Softmax of edge logits within each target segment, column by column."""
    targets = np.asarray(targets, dtype=np.int64)
    x = logits.value
    if x.shape[0] == 0:
        return _emit(x.copy(), (logits,), lambda g: (g,))
    if targets.max() >= n:
        raise ValueError("segment target out of range")
    top = np.full((n, x.shape[1]), -np.inf)
    np.maximum.at(top, targets, x)
    e = np.exp(x - top[targets])
    y = e / _segment_sum(e, targets, n)[targets]

    def rule(g):
        inner = _segment_sum(g * y, targets, n)[targets]
        return (y * (g - inner),)

    return _emit(y, (logits,), rule)


def segment_reduce(values: Tensor, targets, n: int, mode: str = "sum") -> Tensor:
    """Sum or mean of edge rows per target; empty segments give zero rows."""
    targets = np.asarray(targets, dtype=np.int64)
    if mode not in ("sum", "mean"):
        raise ValueError(f"unknown reduce mode {mode!r}")
    out = _segment_sum(values.value, targets, n)
    if mode == "sum":
        return _emit(out, (values,), lambda g: (g[targets],))
    count = np.maximum(np.bincount(targets, minlength=n), 1).astype(np.float64)[:, None]
    return _emit(out / count, (values,), lambda g: ((g / count)[targets],))


# ---------------------------------------------------------------- training ops

def dropout(t: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity at inference or when ``p == 0``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return t
    if rng is None:
        raise ValueError("training-mode dropout needs a random stream")
    mask = (rng.random(t.shape) >= p) / (1.0 - p)
    return _emit(t.value * mask, (t,), lambda g: (g * mask,))


def weighted_bce_with_logits(logits: Tensor, labels, pos_weight: float, mask) -> Tensor:
    """Weighted mean binary cross-entropy over the masked nodes.

    Positives carry weight ``pos_weight`` and negatives weight 1; the sum is
    divided by the total weight of the masked nodes.
    """
    if pos_weight <= 0:
        raise ValueError("pos_weight must be positive")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("loss mask selects no nodes")
    if logits.shape != (len(mask), 1):
        raise ValueError(f"logits must be N x 1, got {logits.shape}")
    y = np.asarray(labels, dtype=np.float64)[mask]
    z = logits.value[mask, 0]
    w = np.where(y == 1, pos_weight, 1.0)
    total = w.sum()
    per_node = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = np.array([[np.dot(w, per_node) / total]])
    dz = w * (expit(z) - y) / total
    n = len(mask)

    def rule(g):
        out = np.zeros((n, 1))
        out[mask, 0] = g[0, 0] * dz
        return (out,)

    return _emit(loss, (logits,), rule)


# ---------------------------------------------------------------- reverse sweep

def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad tensor."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._outputs:
        if loss.requires_grad:
            loss.grad += 1.0
            return
        raise ValueError("loss was not recorded on this tape")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    leaves: dict[int, Tensor] = {}
    for inputs, output, rule in reversed(tape.records):
        g = adjoint.pop(id(output), None)
        if g is None:
            continue
        for t, gi in zip(inputs, rule(g)):
            if gi is None or not t._tracked:
                continue
            key = id(t)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi
            if t.requires_grad:
                leaves[key] = t
    for key, t in leaves.items():
        t.grad += adjoint[key]


# ---------------------------------------------------------------- gradient check

def gradient_check(fn, inputs: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps no arguments to a scalar Tensor and must read ``inputs``
    through closure. Error per entry is ``|a - n| / max(1, |a|, |n|)``.
    """
    saved = [t.requires_grad for t in inputs]
    try:
        for t in inputs:
            t.requires_grad = t._tracked = True
            t.zero_grad()
        with Tape() as tape:
            out = fn()
        backward(tape, out)
        analytic = [t.grad.copy() for t in inputs]
        base = fn().item()
        if fn().item() != base:
            raise RuntimeError("program is not deterministic; disable dropout")
        worst = 0.0
        for t, a in zip(inputs, analytic):
            flat = t.value.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = fn().item()
                flat[k] = orig - h
                down = fn().item()
                flat[k] = orig
                num = (up - down) / (2 * h)
                ak = a.reshape(-1)[k]
                worst = max(worst, abs(ak - num) / max(1.0, abs(ak), abs(num)))
        return worst
    finally:
        for t, r in zip(inputs, saved):
            t.requires_grad = t._tracked = r
            t.zero_grad()
