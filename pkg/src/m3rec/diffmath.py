"""Dense float64 matrix ops with a reverse-mode tape.

Values are 2-D ``numpy.float64`` arrays (row-major).  Column vectors are
``k x 1``.  Batched code keeps one vector per *row* and uses the row-wise
variants (``hcat``, ``mul_rows``, ``segment_sum``, ...).

Every op appends exactly one record to the tape of its inputs;
``Tape.backward`` replays the records in reverse and may run only once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Matrix = np.ndarray


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class OracleError(RuntimeError):
    pass


def as_matrix(x) -> Matrix:
    a = np.array(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise DimensionError(f"expected at most 2 dims, got shape {a.shape}")
    return np.ascontiguousarray(a)


@dataclass(eq=False)
class Parameter:
    name: str
    value: Matrix
    grad: Matrix = field(init=False)

    def __post_init__(self):
        self.value = as_matrix(self.value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.zero_grad()


class Var:
    """A value on a tape, carrying its adjoint during backward."""

    __slots__ = ("value", "grad", "tape", "param")

    def __init__(self, value: Matrix, tape: Tape, param: Parameter | None = None):
        self.value = value
        self.grad: Matrix | None = None
        self.tape = tape
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() on shape {self.value.shape}")
        return float(self.value.reshape(-1)[0])

    def _accum(self, g: Matrix) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    def __init__(self):
        self.records: list[tuple[Var, Callable[[Matrix], None]]] = []
        self.leaves: list[Var] = []
        self._param_vars: dict[int, Var] = {}
        self.done = False
        self.visited = 0

    def param(self, p: Parameter) -> Var:
        # one leaf per parameter: repeated uses share it and grads add up
        v = self._param_vars.get(id(p))
        if v is None:
            v = Var(p.value, self, p)
            self._param_vars[id(p)] = v
            self.leaves.append(v)
        return v

    def const(self, x) -> Var:
        return Var(as_matrix(x), self)

    def record(self, out: Var, backward: Callable[[Matrix], None]) -> Var:
        if self.done:
            raise TapeError("tape already consumed by backward; start a new tape")
        self.records.append((out, backward))
        return out

    def backward(self, loss: Var, seed: float = 1.0) -> None:
        if self.done:
            raise TapeError("backward called twice on the same tape")
        if loss.value.size != 1:
            raise DimensionError(f"backward needs a scalar, got {loss.value.shape}")
        self.done = True
        loss.grad = np.full_like(loss.value, seed)
        self.visited = 0
        for out, bw in reversed(self.records):
            self.visited += 1
            if out.grad is not None:
                bw(out.grad)
        for leaf in self.leaves:
            if leaf.grad is not None:
                leaf.param.grad += leaf.grad


def _tape_of(*xs: Var) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("op needs at least one Var input")


def _wrap(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.const(x)


def _same_shape(x: Var, y: Var, op: str) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


def matmul(a: Var, b: Var) -> Var:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    out = Var(a.value @ b.value, tape)

    def bw(g):
        a._accum(g @ b.value.T)
        b._accum(a.value.T @ g)

    return tape.record(out, bw)


def transpose(x: Var) -> Var:
    out = Var(np.ascontiguousarray(x.value.T), x.tape)
    return x.tape.record(out, lambda g: x._accum(g.T))


def add(x: Var, y: Var) -> Var:
    """Sum; ``y`` may also be a ``1 x c`` row or ``c x 1`` column bias broadcast over rows."""
    tape = _tape_of(x, y)
    x, y = _wrap(tape, x), _wrap(tape, y)
    if x.shape == y.shape:
        out = Var(x.value + y.value, tape)

        def bw(g):
            x._accum(g)
            y._accum(g)

        return tape.record(out, bw)
    rows, cols = x.shape
    if y.shape == (1, cols):
        bias = y.value
    elif y.shape == (cols, 1):
        bias = y.value.T
    else:
        raise DimensionError(f"add: shape mismatch {x.shape} vs {y.shape}")
    out = Var(x.value + bias, tape)

    def bw_bias(g):
        x._accum(g)
        gs = g.sum(axis=0, keepdims=True)
        y._accum(gs if y.shape == (1, cols) else gs.T)

    return tape.record(out, bw_bias)


def sub(x: Var, y: Var) -> Var:
    tape = _tape_of(x, y)
    x, y = _wrap(tape, x), _wrap(tape, y)
    _same_shape(x, y, "sub")
    out = Var(x.value - y.value, tape)

    def bw(g):
        x._accum(g)
        y._accum(-g)

    return tape.record(out, bw)


def affine(x: Var, scale: float = 1.0, shift: float = 0.0) -> Var:
    """``scale * x + shift`` with python-float constants."""
    out = Var(scale * x.value + shift, x.tape)
    return x.tape.record(out, lambda g: x._accum(scale * g))


def one_minus(x: Var) -> Var:
    return affine(x, -1.0, 1.0)


def hadamard(x: Var, y: Var) -> Var:
    tape = _tape_of(x, y)
    x, y = _wrap(tape, x), _wrap(tape, y)
    _same_shape(x, y, "hadamard")
    out = Var(x.value * y.value, tape)

    def bw(g):
        x._accum(g * y.value)
        y._accum(g * x.value)

    return tape.record(out, bw)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # overflow-free form
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Var) -> Var:
    s = _sigmoid(x.value)
    out = Var(s, x.tape)
    return x.tape.record(out, lambda g: x._accum(g * s * (1.0 - s)))


def tanh(x: Var) -> Var:
    t = np.tanh(x.value)
    out = Var(t, x.tape)
    return x.tape.record(out, lambda g: x._accum(g * (1.0 - t * t)))


def relu(x: Var) -> Var:
    mask = x.value > 0
    out = Var(np.where(mask, x.value, 0.0), x.tape)
    return x.tape.record(out, lambda g: x._accum(g * mask))


_ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def elementwise(f: str, x: Var) -> Var:
    try:
        return _ELEMENTWISE[f](x)
    except KeyError:
        raise ValueError(f"unknown elementwise function {f!r}") from None


def concat(x: Var, y: Var) -> Var:
    """Stack two column vectors: ``x ⊕ y``."""
    tape = _tape_of(x, y)
    x, y = _wrap(tape, x), _wrap(tape, y)
    for v in (x, y):
        if v.value.ndim != 2 or (v.shape[1] != 1 and v.value.size != 0):
            raise DimensionError(f"concat: expected column vector, got {v.shape}")
    xv = x.value.reshape(-1, 1)
    yv = y.value.reshape(-1, 1)
    n = xv.shape[0]
    out = Var(np.vstack([xv, yv]), tape)

    def bw(g):
        x._accum(g[:n].reshape(x.shape))
        y._accum(g[n:].reshape(y.shape))

    return tape.record(out, bw)


def hcat(x: Var, y: Var) -> Var:
    """Row-wise concatenation: row i of the result is ``x_i ⊕ y_i``."""
    tape = _tape_of(x, y)
    x, y = _wrap(tape, x), _wrap(tape, y)
    if x.shape[0] != y.shape[0]:
        raise DimensionError(f"hcat: row counts differ {x.shape} vs {y.shape}")
    n = x.shape[1]
    out = Var(np.hstack([x.value, y.value]), tape)

    def bw(g):
        x._accum(g[:, :n])
        y._accum(g[:, n:])

    return tape.record(out, bw)


def take_rows(x: Var, idx) -> Var:
    """Row lookup (embedding gather); repeated indices accumulate in backward."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"take_rows: index out of range for {x.shape[0]} rows")
    out = Var(x.value[idx], x.tape)

    def bw(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx, g)
        x._accum(gx)

    return x.tape.record(out, bw)


def mul_rows(x: Var, w: Var) -> Var:
    """Scale row i of ``x`` by the scalar ``w[i, 0]``."""
    if w.shape != (x.shape[0], 1):
        raise DimensionError(f"mul_rows: weights {w.shape} do not fit {x.shape}")
    out = Var(x.value * w.value, x.tape)

    def bw(g):
        x._accum(g * w.value)
        w._accum((g * x.value).sum(axis=1, keepdims=True))

    return x.tape.record(out, bw)


def segment_sum(x: Var, segments, n_segments: int) -> Var:
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != (x.shape[0],):
        raise DimensionError(f"segment_sum: {seg.shape} segment ids for {x.shape}")
    acc = np.zeros((n_segments, x.shape[1]))
    np.add.at(acc, seg, x.value)
    out = Var(acc, x.tape)
    return x.tape.record(out, lambda g: x._accum(g[seg]))


def _softmax_vec(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax(z: Var) -> Var:
    """Softmax of a column (or row) vector, max-shifted."""
    if z.value.size == 0:
        raise ValueError("softmax of an empty vector")
    if 1 not in z.shape:
        raise DimensionError(f"softmax expects a vector, got {z.shape}")
    p = _softmax_vec(z.value)
    out = Var(p, z.tape)

    def bw(g):
        z._accum(p * (g - (g * p).sum()))

    return z.tape.record(out, bw)


def segment_softmax(z: Var, segments, n_segments: int) -> Var:
    """Softmax of a ``k x 1`` column taken independently within each segment."""
    seg = np.asarray(segments, dtype=np.int64)
    if z.shape != (seg.size, 1):
        raise DimensionError(f"segment_softmax: {z.shape} vs {seg.size} segment ids")
    if seg.size == 0:
        raise ValueError("segment_softmax of an empty vector")
    v = z.value[:, 0]
    mx = np.full(n_segments, -np.inf)
    np.maximum.at(mx, seg, v)
    e = np.exp(v - mx[seg])
    tot = np.zeros(n_segments)
    np.add.at(tot, seg, e)
    p = (e / tot[seg]).reshape(-1, 1)
    out = Var(p, z.tape)

    def bw(g):
        gp = (g * p)[:, 0]
        s = np.zeros(n_segments)
        np.add.at(s, seg, gp)
        z._accum(p * (g - s[seg].reshape(-1, 1)))

    return z.tape.record(out, bw)


def softmax_cross_entropy(logits: Var, targets) -> Var:
    """Summed cross-entropy of row-wise softmax against integer targets.

    A column vector is read as a single row of logits.
    """
    column = logits.shape[1] == 1 and np.ndim(targets) == 0
    z = logits.value.T if column else logits.value
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if z.shape[0] != t.size:
        raise DimensionError(f"softmax_cross_entropy: {z.shape[0]} rows, {t.size} targets")
    if z.shape[1] == 0:
        raise ValueError("softmax_cross_entropy over an empty vocabulary")
    if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
        raise IndexError(f"target out of range for {z.shape[1]} classes")
    rows = np.arange(t.size)
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float((lse - shifted[rows, t]).sum())
    out = Var(np.array([[loss]]), logits.tape)

    def bw(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, t] -= 1.0
        gz = g[0, 0] * p
        logits._accum(gz.T if column else gz)

    return logits.tape.record(out, bw)


def total(x: Var) -> Var:
    out = Var(np.array([[x.value.sum()]]), x.tape)
    return x.tape.record(out, lambda g: x._accum(np.full_like(x.value, g[0, 0])))


def scale(x: Var, w: float) -> Var:
    return affine(x, w, 0.0)


def finite_diff_check(
    forward: Callable[[Tape], Var],
    params: Sequence[Parameter],
    eps: float = 1e-4,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``forward`` builds a scalar loss on the tape it is given.  Relative
    error per coordinate is ``|a - n| / (max(|a|, |n|) + 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    zero_grads(params)
    tape = Tape()
    loss = forward(tape)
    base = loss.item()
    tape.backward(loss)
    again = forward(Tape()).item()
    if again != base:
        raise OracleError(f"forward is not deterministic: {base!r} vs {again!r}")

    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = forward(Tape()).item()
            flat[k] = orig - eps
            fm = forward(Tape()).item()
            flat[k] = orig
            num = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[k]
            err = abs(a - num) / (max(abs(a), abs(num)) + 1e-8)
            worst = max(worst, err)
    return worst
