"""Dense float64 tensors with reverse-mode differentiation.

Every primitive returns a new :class:`Tensor`.  When at least one input
requires a gradient, the result remembers its parents and a closure mapping
the upstream gradient to one gradient per parent; :meth:`Tensor.backward`
replays those closures in reverse creation order.

Shapes are strict: element-wise binary ops demand identical shapes.  The
only implicit broadcast is :func:`add_bias` over the last axis; anything
else goes through the explicit :func:`expand`.
"""

from __future__ import annotations

import contextlib
import itertools
import math

import numpy as np

from .errors import DomainError, ShapeError

DTYPE = np.float64

_ids = itertools.count()
_relu_log = None


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def data(self):
        """Flat row-major copy of the values."""
        return self.value.ravel().copy()

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else _bad_item(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if seed is None:
            if self.value.size != 1:
                raise ShapeError(f"backward() without seed needs a scalar, got shape {self.shape}")
            seed = np.ones_like(self.value)
        order = _topological(self)
        grads = {self._id: np.asarray(seed, dtype=DTYPE)}
        for node in order:
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg


def _bad_item(t):
    raise ShapeError(f"item() needs a single element, got shape {t.shape}")


def _topological(root):
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen or not node.requires_grad:
            continue
        seen.add(node._id)
        nodes.append(node)
        stack.extend(node._parents)
    # parents are always created before children
    nodes.sort(key=lambda n: n._id, reverse=True)
    return nodes


def _result(value, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, tuple(parents), backward)
    return Tensor(value)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


@contextlib.contextmanager
def record_relu_masks():
    """Collect the ``input > 0`` mask of every relu evaluated inside the block."""
    global _relu_log
    previous = _relu_log
    _relu_log = []
    try:
        yield _relu_log
    finally:
        _relu_log = previous


# ---------------------------------------------------------------- element-wise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _result(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _result(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result(a.value * c, (a,), lambda g: (g * c,))


def add_bias(x, b):
    """``x + b`` with ``b`` shaped like the last axis of ``x``."""
    x, b = as_tensor(x), as_tensor(b)
    if b.shape != x.shape[-1:]:
        raise ShapeError(f"add_bias: bias shape {b.shape} does not match last axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _result(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=lead)))


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0
    if _relu_log is not None:
        _relu_log.append(mask.copy())
    return _result(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.value)
    return _result(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    if x.value.size and not np.all(x.value > 0):
        raise DomainError(f"log: non-positive input (min {x.value.min()!r})")
    xv = x.value
    return _result(np.log(xv), (x,), lambda g: (g / xv,))


def square(x):
    x = as_tensor(x)
    xv = x.value
    return _result(xv * xv, (x,), lambda g: (2.0 * g * xv,))


# ------------------------------------------------------------------ structural


def matmul(a, b):
    """Matrix product over the last two axes.

    Either both operands carry identical leading (batch) axes, or one of them
    is a plain 2-D matrix shared across the other's batch.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    if a.ndim == b.ndim:
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul: batch axes differ, {a.shape} vs {b.shape}")

        def backward(g):
            return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    elif b.ndim == 2:

        def backward(g):
            k, m = bv.shape
            return g @ bv.T, av.reshape(-1, k).T @ g.reshape(-1, m)

    elif a.ndim == 2:

        def backward(g):
            n, k = av.shape
            m = bv.shape[-1]
            ga = np.einsum("bnm,bkm->nk", g.reshape(-1, n, m), bv.reshape(-1, k, m))
            return ga, av.T @ g

    else:
        raise ShapeError(f"matmul: incompatible batch layout {a.shape} vs {b.shape}")
    return _result(av @ bv, (a, b), backward)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    if math.prod(shape) != x.value.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _result(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def expand(x, shape):
    """Explicit broadcast: prepend leading axes and/or stretch size-1 axes."""
    x = as_tensor(x)
    shape = tuple(shape)
    extra = len(shape) - x.ndim
    if extra < 0 or any(s != t and s != 1 for s, t in zip(x.shape, shape[extra:])):
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}")
    stretched = tuple(extra + i for i, s in enumerate(x.shape) if s == 1 and shape[extra + i] != 1)
    old = x.shape

    def backward(g):
        if stretched:
            g = g.sum(axis=stretched, keepdims=True)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        return (g.reshape(old),)

    return _result(np.broadcast_to(x.value, shape).copy(), (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or t.shape[:ax] + t.shape[ax + 1:] != ref.shape[:ax] + ref.shape[ax + 1:]:
            raise ShapeError(f"concat: shape mismatch {ref.shape} vs {t.shape} along axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result(
        np.concatenate([t.value for t in tensors], axis=ax),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=ax)),
    )


def take(x, indices, axis=0):
    """Select entries along ``axis`` (repeats allowed; gradients accumulate)."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    n = x.shape[ax]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(f"take: index out of range for axis {axis} of shape {x.shape}")
    old = x.shape

    def backward(g):
        out = np.zeros(old, dtype=DTYPE)
        np.add.at(np.moveaxis(out, ax, 0), idx, np.moveaxis(g, ax, 0))
        return (out,)

    return _result(np.take(x.value, idx, axis=ax), (x,), backward)


# ------------------------------------------------------------------ reductions


def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    old = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, old).copy(),)

    return _result(x.value.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def logsumexp(x, axis=-1):
    """log(sum(exp(x))) along ``axis`` (axis removed), max-shifted."""
    x = as_tensor(x)
    m = x.value.max(axis=axis, keepdims=True)
    e = np.exp(x.value - m)
    total = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis)
    weights = e / total
    return _result(out, (x,), lambda g: (np.expand_dims(g, axis) * weights,))


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm: normalized axis has length {d}, need at least 2")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match {x.shape}")
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gv = gain.value
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gv
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gv + bias.value, (x, gain, bias), backward)


# ------------------------------------------------------------------ driver


def forward_backward(graph_fn, params, inputs=None):
    """Evaluate ``graph_fn(leaves, inputs)`` and fill ``params`` gradients.

    ``leaves`` maps each parameter name to a differentiable :class:`Tensor`.
    Returns the scalar loss as a float.
    """
    leaves = {name: Tensor(params.value(name), requires_grad=True) for name in params.names()}
    loss = graph_fn(leaves, inputs)
    if not isinstance(loss, Tensor) or loss.value.size != 1:
        shape = getattr(loss, "shape", type(loss).__name__)
        raise ShapeError(f"forward_backward: graph must return a scalar Tensor, got {shape}")
    loss.backward()
    for name, leaf in leaves.items():
        params.set_grad(name, leaf.grad if leaf.grad is not None else 0.0)
    return float(loss.value.reshape(-1)[0])


def evaluate_graph(graph_fn, params, inputs=None):
    """Forward-only evaluation with constant (non-differentiable) leaves."""
    leaves = {name: Tensor(params.value(name)) for name in params.names()}
    return graph_fn(leaves, inputs)
