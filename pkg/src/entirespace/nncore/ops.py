"""Differentiable primitives over :class:`Node`.

All ops take and return nodes; each records its adjoint on the active tape.
Broadcasting follows numpy, limited to what the ranking model needs.
"""

from __future__ import annotations

import numpy as np

from .. import _accel
from ..errors import ShapeError, ValidationError
from .tape import Node, record

# Relu sign patterns observed while a kink recorder is installed (see gradcheck).
_kink_recorders: list = []


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return record("add", (a, b), a.value + b.value, back)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return record("sub", (a, b), a.value - b.value, back)


def elementwise_mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "elementwise_mul")
    av, bv = a.value, b.value

    def back(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return record("mul", (a, b), av * bv, back)


def scale(a, c: float) -> Node:
    a = as_node(a)
    return record("scale", (a,), a.value * c, lambda g: (g * c,))


def matmul(a, b) -> Node:
    """``np.matmul`` semantics, including broadcast batch dimensions."""
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return record("matmul", (a, b), out, back)


def concat(nodes, axis=-1) -> Node:
    nodes = [as_node(n) for n in nodes]
    if len(nodes) == 1:
        return nodes[0]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        shapes = ", ".join(str(n.shape) for n in nodes)
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", tuple(nodes), out, back)


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.shape
    return record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a, axes) -> Node:
    a = as_node(a)
    inv = np.argsort(axes)
    return record("transpose", (a,), np.transpose(a.value, axes), lambda g: (np.transpose(g, inv),))


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    for rec in _kink_recorders:
        rec.append(mask.copy())
    return record("relu", (a,), a.value * mask, lambda g: (g * mask,))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Node:
    a = as_node(a)
    y = _sigmoid(a.value)
    return record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def softmax(a, axis=-1) -> Node:
    a = as_node(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", (a,), y, back)


def layer_norm(a, gain, bias, eps=1e-5) -> Node:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    a, gain, bias = as_node(a), as_node(gain), as_node(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last dim {d} of {a.shape}")
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gain.value

    def back(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return record("layer_norm", (a, gain, bias), xhat * gv + bias.value, back)


def embedding_lookup(table, hash_ids, modulus=None) -> Node:
    """Rows ``table[hash_ids % modulus]``; output shape ``hash_ids.shape + (dim,)``."""
    table = as_node(table)
    rows = table.shape[0]
    if modulus is None:
        modulus = rows
    if modulus != rows:
        raise ShapeError(f"embedding_lookup: modulus {modulus} != table rows {rows} (table {table.shape})")
    ids = np.asarray(hash_ids)
    if ids.dtype == np.uint64:
        idx = (ids % np.uint64(modulus)).astype(np.int64)
    else:
        idx = np.asarray(ids, dtype=np.int64) % modulus
    out = table.value[idx]
    tshape = table.shape

    def back(g):
        gt = np.zeros(tshape)
        _accel.scatter_add_rows(gt, idx.reshape(-1), g.reshape(-1, tshape[1]))
        return (gt,)

    return record("embedding_lookup", (table,), out, back)


def sum(a, axis=None, keepdims=False) -> Node:  # noqa: A001 - mirrors numpy naming
    a = as_node(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", (a,), out, back)


def mean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def take(a, idx) -> Node:
    """Rows of ``a`` at distinct indices ``idx`` (axis 0)."""
    a = as_node(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def back(g):
        ga = np.zeros(shape)
        ga[idx] = g
        return (ga,)

    return record("take", (a,), a.value[idx], back)


def assemble_rows(parts, index_sets, n_rows) -> Node:
    """Inverse of :func:`take`: place ``parts[k]`` at rows ``index_sets[k]``.

    Rows covered by no part are zero. Index sets must be disjoint.
    """
    parts = [as_node(p) for p in parts]
    index_sets = [np.asarray(ix, dtype=np.int64) for ix in index_sets]
    tail = next((p.shape[1:] for p in parts if p.value.size), parts[0].shape[1:])
    out = np.zeros((n_rows,) + tail)
    for p, ix in zip(parts, index_sets):
        if len(ix):
            out[ix] = p.value

    def back(g):
        return tuple(g[ix] for ix in index_sets)

    return record("assemble_rows", tuple(parts), out, back)


class frozen_stops:
    """Hold every :func:`stop_gradient` output at its first-seen value.

    The first evaluation inside the context records the stopped values in call
    order; later evaluations replay them. This makes a finite-difference probe
    see stopped branches as the constants the recorded gradient assumes.
    """

    def __init__(self):
        self.values = []
        self.cursor = None

    def __enter__(self):
        _stop_replays.append(self)
        return self

    def __exit__(self, *exc):
        _stop_replays.remove(self)
        return False

    def rewind(self):
        self.cursor = 0

    def _next(self, value):
        if self.cursor is None:
            self.values.append(value.copy())
            return value
        v = self.values[self.cursor]
        self.cursor += 1
        return v


_stop_replays: list = []


def stop_gradient(a) -> Node:
    """Same values, no recorded edge: ancestors receive nothing through it."""
    a = as_node(a)
    value = a.value
    if _stop_replays:
        value = _stop_replays[-1]._next(value)
    return Node(value, requires_grad=False, stop_grad=True)


def sdpa(q, k, v, scale_factor=None, weights_out=None) -> Node:
    """softmax(q kᵀ · scale) v over the last two axes.

    ``q`` is ``[..., tq, d_k]``, ``k`` ``[..., t, d_k]``, ``v`` ``[..., t, d_v]``.
    A 1-d ``q`` is treated as a single query row. When ``weights_out`` is a
    list the attention weights are appended to it.
    """
    q, k, v = as_node(q), as_node(k), as_node(v)
    squeeze = q.value.ndim == 1
    if squeeze:
        q = reshape(q, (1, q.shape[0]))
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"sdpa: q {q.shape}, K {k.shape}, V {v.shape} are incompatible")
    if scale_factor is None:
        scale_factor = 1.0 / np.sqrt(q.shape[-1])
    kt = transpose(k, tuple(range(k.value.ndim - 2)) + (k.value.ndim - 1, k.value.ndim - 2))
    weights = softmax(scale(matmul(q, kt), scale_factor), axis=-1)
    if weights_out is not None:
        weights_out.append(weights.value)
    out = matmul(weights, v)
    if squeeze:
        out = reshape(out, (v.shape[-1],))
    return out


def bce_with_logits(logits, labels, reduction="mean") -> Node:
    """Binary cross-entropy on logits, in the overflow-free fused form."""
    logits = as_node(logits)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce: logits {logits.shape} vs labels {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("bce: labels must be 0 or 1")
    x = logits.value
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    if reduction == "mean":
        c = 1.0 / max(x.size, 1)
    elif reduction == "sum":
        c = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    p = _sigmoid(x)

    def back(g):
        return (g * c * (p - y),)

    return record("bce", (logits,), np.array(per.sum() * c), back)


bce_loss = bce_with_logits


def index(a, key) -> Node:
    """Basic (non-fancy) slicing, e.g. ``index(x, (slice(None), slice(0, 1)))``."""
    a = as_node(a)
    shape = a.shape

    def back(g):
        ga = np.zeros(shape)
        ga[key] = g
        return (ga,)

    return record("index", (a,), a.value[key], back)
