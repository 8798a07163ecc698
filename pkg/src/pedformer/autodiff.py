"""Reverse-mode automatic differentiation over float64 numpy arrays.

All model arithmetic runs through the primitives in this module. Each
primitive records itself on the active :class:`Tape` (when one is open) and
carries an explicit backward rule; :func:`grad_check` verifies any rule
against central finite differences. Every forward op checks its output for
NaN/Inf and aborts naming the offending op.

Tensors detached from any tape are plain immutable value holders and safe to
share across threads. A single tape is strictly single-threaded, but
independent tapes may run concurrently (tape state is thread-local).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


class AutodiffError(Exception):
    """Contract violation inside the autodiff engine."""


class ShapeError(AutodiffError):
    """Operands with incompatible shapes."""


class NonFiniteError(AutodiffError):
    """An op produced NaN or Inf; the op is named in the message."""


_state = threading.local()


def active_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of operations for one forward pass.

    Inputs of every recorded op precede it on the tape (ops are appended as
    they execute), so a single reverse sweep visits each node exactly once.
    """

    def __init__(self):
        self._ops = []  # (out, inputs, rule); rule(g) -> [(tensor, grad), ...]

    def __enter__(self):
        if active_tape() is not None:
            raise AutodiffError("nested tapes are not supported")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False

    def record(self, out, inputs, rule):
        self._ops.append((out, inputs, rule))

    def __len__(self):
        return len(self._ops)

    def backward(self, loss, params=None):
        """Accumulate gradients of a scalar ``loss`` into every reachable leaf.

        Leaves with ``requires_grad`` get their ``.grad`` field set
        (accumulating over repeated calls). When ``params`` is given, returns
        ``{name: gradient}`` with zeros for parameters the loss never touched.
        """
        if loss.data.size != 1:
            raise AutodiffError(f"backward expects a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for out, inputs, rule in reversed(self._ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gt in rule(g):
                if gt is None or not t.needs_grad:
                    continue
                acc = grads.get(id(t))
                # rebind instead of += : keeps stored buffers immutable, so
                # rules may freely return views of g
                grads[id(t)] = gt if acc is None else acc + gt
        for out, inputs, _ in self._ops:
            for t in inputs:
                if t.requires_grad and id(t) in grads:
                    g = grads.pop(id(t))
                    t.grad = g if t.grad is None else t.grad + g
        if params is None:
            return None
        out = {}
        for p in params:
            t = p.tensor
            out[p.name] = np.zeros_like(t.data) if t.grad is None else t.grad
        return out


class Tensor:
    """n-d float64 value, optionally participating in gradient flow.

    ``requires_grad`` marks trainable leaves; ``needs_grad`` additionally
    covers intermediates on a grad path so backward rules can skip dead
    branches (e.g. positional-encoding constants).
    """

    __slots__ = ("data", "requires_grad", "grad", "needs_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.needs_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise AutodiffError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


@dataclass
class Parameter:
    """Named trainable tensor; ``weight_decay`` is its L2 coefficient."""

    name: str
    tensor: Tensor
    weight_decay: float = 0.0

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


class ParamStore:
    """Registry of model parameters with unique names."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name, value, weight_decay=0.0):
        if name in self._params:
            raise AutodiffError(f"duplicate parameter name: {name}")
        p = Parameter(name, Tensor(value, requires_grad=True), weight_decay)
        self._params[name] = p
        return p

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def names(self):
        return list(self._params)

    def count(self):
        return sum(p.data.size for p in self)

    def zero_grad(self):
        for p in self:
            p.tensor.zero_grad()

    def state(self):
        return {p.name: p.data.copy() for p in self}

    def load_state(self, state):
        for p in self:
            if p.name not in state:
                raise AutodiffError(f"missing parameter in state: {p.name}")
            arr = np.asarray(state[p.name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"parameter {p.name}: stored shape {arr.shape} != model shape {p.data.shape}"
                )
            p.tensor.data = arr.copy()


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# op plumbing


def _ensure_finite(op, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(op, data, inputs, rule):
    _ensure_finite(op, data)
    out = Tensor(data)
    out.needs_grad = any(t.needs_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.needs_grad:
        tape.record(out, inputs, rule)
    return out


def _unbroadcast(grad, shape):
    # reduce a broadcast gradient back to the original operand shape
    grad = np.asarray(grad)
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def rule(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return _make("add", data, (a, b), rule)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def rule(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape))]

    return _make("sub", data, (a, b), rule)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def rule(g):
        return [
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        ]

    return _make("mul", data, (a, b), rule)


def neg(a):
    a = _wrap(a)
    return _make("neg", -a.data, (a,), lambda g: [(a, -g)])


def scale(a, s):
    a = _wrap(a)
    s = float(s)
    return _make("scale", a.data * s, (a,), lambda g: [(a, g * s)])


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def rule(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _make("matmul", data, (a, b), rule)


def transpose(a):
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")
    return _make("transpose", a.data.T.copy(), (a,), lambda g: [(a, g.T)])


def reshape(a, shape):
    a = _wrap(a)
    orig = a.data.shape
    data = a.data.reshape(shape)
    return _make("reshape", data.copy(), (a,), lambda g: [(a, g.reshape(orig))])


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    shapes = [t.data.shape for t in tensors]
    ref = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(ref) or any(
            s[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat shape mismatch along axis {axis}: {shapes}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [s[axis % len(s)] for s in shapes]
    bounds = np.cumsum([0] + sizes)

    def rule(g):
        pieces = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis % g.ndim] = slice(lo, hi)
            pieces.append((t, g[tuple(idx)]))
        return pieces

    return _make("concat", data, tuple(tensors), rule)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along ``axis``."""
    a = _wrap(a)
    ax = axis % a.data.ndim
    if start < 0 or start + length > a.data.shape[ax]:
        raise ShapeError(
            f"narrow [{start}:{start + length}) out of range for axis {ax} of {a.data.shape}"
        )
    idx = [slice(None)] * a.data.ndim
    idx[ax] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def rule(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return [(a, full)]

    return _make("narrow", data, (a,), rule)


def split(a, sizes, axis):
    """Partition along ``axis`` into consecutive pieces of the given sizes."""
    a = _wrap(a)
    ax = axis % a.data.ndim
    if sum(sizes) != a.data.shape[ax]:
        raise ShapeError(f"split sizes {sizes} do not cover axis {ax} of {a.data.shape}")
    out, start = [], 0
    for n in sizes:
        out.append(narrow(a, ax, start, n))
        start += n
    return out


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.data.shape).copy())]
        gg = g if keepdims else np.expand_dims(g, axis)
        return [(a, np.broadcast_to(gg, a.data.shape).copy())]

    return _make("sum", data, (a,), rule)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def tanh(a):
    a = _wrap(a)
    data = np.tanh(a.data)
    return _make("tanh", data, (a,), lambda g: [(a, g * (1.0 - data * data))])


def sigmoid(a):
    a = _wrap(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)
    return _make("sigmoid", data, (a,), lambda g: [(a, g * data * (1.0 - data))])


def softsign(a):
    a = _wrap(a)
    denom = 1.0 + np.abs(a.data)
    data = a.data / denom
    return _make("softsign", data, (a,), lambda g: [(a, g / (denom * denom))])


def relu(a):
    a = _wrap(a)
    data = np.maximum(a.data, 0.0)
    return _make("relu", data, (a,), lambda g: [(a, g * (a.data > 0.0))])


def exp(a):
    a = _wrap(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _make("exp", data, (a,), lambda g: [(a, g * data)])


def log(a):
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make("log", data, (a,), lambda g: [(a, g / a.data)])


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only through the interior."""
    a = _wrap(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make("clip", data, (a,), lambda g: [(a, g * mask)])


def logcosh(a):
    """Elementwise log(cosh(x)); linear tails computed without overflow."""
    a = _wrap(a)
    data = np.logaddexp(a.data, -a.data) - np.log(2.0)
    return _make("logcosh", data, (a,), lambda g: [(a, g * np.tanh(a.data))])


def softmax(a, axis=-1):
    """Max-shifted softmax; every slice along ``axis`` sums to 1."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return [(a, data * (g - dot))]

    return _make("softmax", data, (a,), rule)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    n = x.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match last axis {n}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gain.data * xhat + bias.data

    def rule(g):
        sum_axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=sum_axes) if g.ndim > 1 else g * xhat
        dbias = g.sum(axis=sum_axes) if g.ndim > 1 else g.copy()
        dxhat = g * gain.data
        dx = inv / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return [(x, dx), (gain, dgain), (bias, dbias)]

    return _make("layer_norm", data, (x, gain, bias), rule)


def linear(x, w, b=None):
    """Affine map rows(x) @ w (+ b)."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


def embedding(table, ids):
    """Row lookup; gradient scatters back into the selected rows."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be a matrix, got {table.data.shape}")
    if ids.ndim != 1:
        raise ShapeError(f"embedding ids must be 1-d, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding ids out of range [0, {table.data.shape[0]}): "
            f"[{ids.min()}, {ids.max()}]"
        )
    data = table.data[ids].copy()

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return [(table, full)]

    return _make("embedding", data, (table,), rule)


def stack_rows(rows):
    """Stack 1-row tensors (or reshape flat ones) into an (n, d) matrix."""
    shaped = [r if r.data.ndim == 2 else reshape(r, (1, r.data.size)) for r in rows]
    return concat(shaped, axis=0)


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    ok: bool


@dataclass
class GradCheckReport:
    tol: float
    h: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def ok(self):
        return all(e.ok for e in self.entries)

    def worst(self):
        return max(self.entries, key=lambda e: e.max_rel_err)

    def failures(self):
        return [e for e in self.entries if not e.ok]

    def summary(self):
        lines = []
        for e in self.entries:
            status = "ok" if e.ok else "FAIL"
            lines.append(f"{e.name:50s} max_rel_err={e.max_rel_err:.3e} {status}")
        return "\n".join(lines)


def _rel_err(ga, gf):
    return np.abs(ga - gf) / np.maximum(1e-8, np.abs(ga) + np.abs(gf))


def grad_check(f, params, h=1e-5, tol=1e-5):
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be a deterministic zero-argument callable returning a scalar
    Tensor built from the given parameters. Relative error per entry is
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    params = list(params)
    for p in params:
        p.tensor.zero_grad()
    with Tape() as tape:
        loss = f()
    analytic = tape.backward(loss, params=params)

    def value():
        out = f()
        if out.data.size != 1:
            raise AutodiffError("grad_check target must be scalar")
        return out.item()

    report = GradCheckReport(tol=tol, h=h)
    for p in params:
        flat = p.tensor.data.reshape(-1)
        ga = analytic[p.name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = value()
            flat[i] = orig - h
            lo = value()
            flat[i] = orig
            gf = (hi - lo) / (2.0 * h)
            worst = max(worst, float(_rel_err(ga[i], gf)))
        report.entries.append(GradCheckEntry(p.name, worst, worst < tol))
    return report
