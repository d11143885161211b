"""Reverse-mode automatic differentiation over float64 numpy buffers.

A Tape records primitive ops in execution order; backward() replays the
tape in reverse, accumulating vector-Jacobian products. Everything is
float64 and single-threaded, so runs are bit-reproducible given a seed.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "record", "backward", "ShapeError",
    "constant", "parameter", "set_debug_checks",
    "add", "sub", "mul", "div", "neg", "scale",
    "matmul", "conv1d", "conv1d_transpose",
    "relu", "sigmoid", "softmax", "rmsnorm",
    "embedding_lookup", "reshape", "transpose", "getitem", "concat",
    "masked_fill", "cross_entropy", "sum_", "mean_",
]

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Enable per-op finiteness assertions (slow; for debugging NaN leaks)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; non-Tensor operands are wrapped as constants
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Execution-ordered list of recorded op outputs for one forward pass."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Tensor] = []


_ACTIVE_TAPE: Tape | None = None


class record:
    """Context manager activating a tape; ops inside it are recorded."""

    def __init__(self, tape: Tape):
        self.tape = tape

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self.tape
        return self.tape

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data, parents, vjp) -> Tensor:
    """Build an op output; records it on the active tape when grads flow."""
    if _DEBUG_CHECKS and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values produced by primitive op")
    out = Tensor(out_data)
    if _ACTIVE_TAPE is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        _ACTIVE_TAPE.nodes.append(out)
    return out


def _accum(parent: Tensor, g) -> None:
    if not parent.requires_grad:
        return
    if parent.grad is None:
        parent.grad = np.array(g, dtype=np.float64)
    else:
        parent.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate gradients of `loss` into every reachable leaf's .grad."""
    if loss.data.ndim != 0:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss._vjp is None and not loss.requires_grad:
        raise ValueError("loss is not on the tape (was it computed under record()?)")
    needed = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in needed:
            continue
        needed.add(id(node))
        stack.extend(node._parents)
    loss.grad = np.array(1.0)
    for node in reversed(tape.nodes):
        if id(node) not in needed or node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is not None:
                _accum(parent, g)
        # free intermediate grads; leaves keep theirs
        if node is not loss:
            node.grad = None


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                         _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                         _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                         _unbroadcast(g * a.data, b.data.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g / b.data, a.data.shape),
                                         _unbroadcast(-g * a.data / b.data ** 2, b.data.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return _make(out, (a,), vjp)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / count,)

    return _make(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically stable split over sign
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive input")
    out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (a,), vjp)


def rmsnorm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x^2, last axis) + eps) * gain."""
    if x.data.shape[-1] != gain.data.shape[-1]:
        raise ShapeError(f"rmsnorm gain {gain.data.shape} does not match input {x.data.shape}")
    dim = x.data.shape[-1]
    r = np.sqrt(np.mean(x.data ** 2, axis=-1, keepdims=True) + eps)
    n = x.data / r
    out = n * gain.data

    def vjp(g):
        gg = g * gain.data
        gx = gg / r - x.data * ((gg * x.data).sum(axis=-1, keepdims=True) / (dim * r ** 3))
        ggain = (g * n).reshape(-1, dim).sum(axis=0)
        return (gx, ggain.reshape(gain.data.shape))

    return _make(out, (x, gain), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return (ga, gb)

    return _make(out, (a, b), vjp)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Temporal convolution. x: (B, T, Cin), w: (K, Cin, Cout), b: (Cout,)."""
    B, T, Cin = x.data.shape
    K, wCin, Cout = w.data.shape
    if wCin != Cin:
        raise ShapeError(f"conv1d channels: input {x.data.shape} vs weight {w.data.shape}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    t_out = (T + 2 * padding - K) // stride + 1
    if t_out < 1:
        raise ShapeError(f"conv1d output length {t_out} for input {x.data.shape}, kernel {K}")
    cols = np.empty((B, t_out, K, Cin))
    for j in range(K):
        cols[:, :, j, :] = xp[:, j:j + stride * t_out:stride, :]
    w2d = w.data.reshape(K * Cin, Cout)
    out = cols.reshape(B, t_out, K * Cin) @ w2d + b.data

    def vjp(g):
        g2d = g.reshape(-1, Cout)
        gw = (cols.reshape(-1, K * Cin).T @ g2d).reshape(K, Cin, Cout)
        gb = g2d.sum(axis=0)
        gcols = (g @ w2d.T).reshape(B, t_out, K, Cin)
        gxp = np.zeros_like(xp)
        for j in range(K):
            gxp[:, j:j + stride * t_out:stride, :] += gcols[:, :, j, :]
        gx = gxp[:, padding:padding + T, :] if padding else gxp
        return (gx, gw, gb)

    return _make(out, (x, w, b), vjp)


def conv1d_transpose(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv1d (fractionally strided). x: (B, T, Cin), w: (K, Cin, Cout)."""
    B, T, Cin = x.data.shape
    K, wCin, Cout = w.data.shape
    if wCin != Cin:
        raise ShapeError(f"conv1d_transpose channels: input {x.data.shape} vs weight {w.data.shape}")
    t_full = (T - 1) * stride + K
    t_out = t_full - 2 * padding
    if t_out < 1:
        raise ShapeError(f"conv1d_transpose output length {t_out} for input {x.data.shape}")
    taps = np.tensordot(x.data, w.data, axes=([2], [1]))  # (B, T, K, Cout)
    ypad = np.zeros((B, t_full, Cout))
    for j in range(K):
        ypad[:, j:j + stride * T:stride, :] += taps[:, :, j, :]
    out = ypad[:, padding:padding + t_out, :] + b.data

    def vjp(g):
        gpad = np.zeros((B, t_full, Cout))
        gpad[:, padding:padding + t_out, :] = g
        gtaps = np.empty((B, T, K, Cout))
        for j in range(K):
            gtaps[:, :, j, :] = gpad[:, j:j + stride * T:stride, :]
        gx = np.tensordot(gtaps, w.data, axes=([2, 3], [0, 2]))
        gw = np.tensordot(x.data, gtaps, axes=([0, 1], [0, 1])).transpose(1, 0, 2)
        gb = g.reshape(-1, Cout).sum(axis=0)
        return (gx, gw, gb)

    return _make(out, (x, w, b), vjp)


# ---------------------------------------------------------------------------
# shape and indexing


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g  # basic indexing selects unique elements
        return (ga,)

    return _make(out, (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), vjp)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.data.shape[0]})")
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _make(out, (table,), vjp)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, value, a.data)
    return _make(out, (a,), lambda g: (np.where(mask, 0.0, g),))


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over (optionally masked) positions.

    logits: (..., V); targets: integer array matching the leading shape.
    Rows whose target equals ignore_index contribute nothing.
    """
    V = logits.data.shape[-1]
    flat = logits.data.reshape(-1, V)
    targets = np.asarray(targets).reshape(-1)
    if targets.shape[0] != flat.shape[0]:
        raise ShapeError(f"cross_entropy targets {targets.shape} do not match logits {logits.data.shape}")
    valid = np.ones(targets.shape[0], dtype=bool)
    if ignore_index is not None:
        valid = targets != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every target is ignored")
    safe_targets = np.where(valid, targets, 0)
    zmax = flat.max(axis=1, keepdims=True)
    ez = np.exp(flat - zmax)
    logz = np.log(ez.sum(axis=1)) + zmax[:, 0]
    picked = flat[np.arange(flat.shape[0]), safe_targets]
    out = np.float64(((logz - picked) * valid).sum() / n_valid)

    def vjp(g):
        p = ez / ez.sum(axis=1, keepdims=True)
        p[np.arange(flat.shape[0]), safe_targets] -= 1.0
        p *= (valid / n_valid)[:, None] * g
        return (p.reshape(logits.data.shape),)

    return _make(out, (logits,), vjp)
