"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor`. When gradients are enabled
and at least one operand requires a gradient, the result remembers its
parents and a closure mapping the upstream gradient to per-parent
gradients. :meth:`Tensor.backward` walks that graph in reverse topological
order.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from ..errors import ConfigurationError, ContractError, DimensionError, NumericDomainError

_grad_enabled = True
_check_finite = False

# Large finite negative used for masked attention scores. exp() of it
# underflows to exactly 0.0, so masked positions contribute nothing.
MASK_VALUE = -1e30


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def detect_anomaly():
    """Raise NumericDomainError as soon as any op produces a non-finite value."""
    global _check_finite
    previous = _check_finite
    _check_finite = True
    try:
        yield
    finally:
        _check_finite = previous


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    """A float64 array that participates in the gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        if isinstance(data, np.ndarray):
            self.data = data.astype(np.float64, copy=False)
        else:
            self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # basic properties
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    # operators
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def backward(self, grad=None):
        """Populate ``.grad`` on every reachable leaf that requires a gradient.

        Leaf gradients accumulate (``+=``) so several backward passes can be
        summed before an optimizer step.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
        if not self.requires_grad:
            return

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def _result(data, parents, backward, op):
    out = Tensor(data)
    out.op = op
    if _check_finite and not np.all(np.isfinite(out.data)):
        raise NumericDomainError(f"{op} produced a non-finite value")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _require_finite(op, x):
    if not np.all(np.isfinite(x.data)):
        raise NumericDomainError(f"{op} received a non-finite input")


# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data / b.data, (a, b), backward, "div")


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _result(a.data ** exponent, (a,), backward, "pow")


def exp(a):
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a):
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a):
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a):
    positive = a.data > 0
    return _result(a.data * positive, (a,), lambda g: (g * positive,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """tanh approximation of GELU (smooth, so finite differences stay clean)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _result(y, (a,), backward, "gelu")


# linear algebra and shape manipulation

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch shapes of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def swapaxes(a, axis1, axis2):
    return _result(np.swapaxes(a.data, axis1, axis2), (a,),
                   lambda g: (np.swapaxes(g, axis1, axis2),), "swapaxes")


def getitem(a, index):
    if isinstance(index, Tensor):
        raise TypeError("index with integer arrays, not Tensors")

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} do not conform on axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"stack: shapes {[t.shape for t in tensors]} differ") from None

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(data, tuple(tensors), backward, "stack")


def masked_fill(a, mask, value):
    """Replace entries where ``mask`` is true by the constant ``value``."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    keep = ~mask
    return _result(np.where(mask, value, a.data), (a,), lambda g: (g * keep,), "masked_fill")


# normalisation and probabilities

def softmax(a, axis=-1):
    _require_finite("softmax", a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), backward, "softmax")


def _shifted_log_softmax(x, axis=-1):
    """``log softmax`` via ``log1p`` over the non-max terms (accurate near 0)."""
    x = np.asarray(x)
    top = x.argmax(axis=axis)
    shifted = x - np.take_along_axis(x, np.expand_dims(top, axis), axis=axis)
    e = np.exp(shifted)
    np.put_along_axis(e, np.expand_dims(top, axis), 0.0, axis=axis)
    return shifted - np.log1p(e.sum(axis=axis, keepdims=True))


def log_softmax(a, axis=-1):
    _require_finite("log_softmax", a)
    y = _shifted_log_softmax(a.data, axis)
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(y, (a,), backward, "log_softmax")


def layer_norm(a, gamma=None, beta=None, eps=1e-12):
    """Normalise over the last axis, then apply the optional affine map."""
    _require_finite("layer_norm", a)
    parents = [a]
    if gamma is not None:
        gamma = as_tensor(gamma)
        parents.append(gamma)
    if beta is not None:
        beta = as_tensor(beta)
        parents.append(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = xhat
    if gamma is not None:
        y = y * gamma.data
    if beta is not None:
        y = y + beta.data

    def backward(g):
        gxhat = g * gamma.data if gamma is not None else g
        gx = inv_std * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append(_unbroadcast(g * xhat, gamma.shape))
        if beta is not None:
            grads.append(_unbroadcast(g, beta.shape))
        return tuple(grads)

    return _result(y, tuple(parents), backward, "layer_norm")


# lookups, convolution, pooling

def embedding(table, ids):
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= vocab)]
        if bad.size:
            raise IndexError(f"embedding id {int(bad[0])} out of range [0, {vocab})")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    data = table.data[ids] if ids.size else np.zeros(ids.shape + (table.shape[1],))
    return _result(data, (table,), backward, "embedding")


def conv1d(x, kernel):
    """Same-padded 1-D convolution over axis -2.

    ``x`` is ``[..., n, d_in]``, ``kernel`` is ``[w, d_in, d_out]`` with odd
    ``w``; zero padding of ``w // 2`` at both ends keeps length ``n``.
    """
    w, d_in, d_out = kernel.shape
    if w % 2 == 0:
        raise ConfigurationError(f"conv1d kernel width must be odd, got {w}")
    if x.shape[-1] != d_in:
        raise DimensionError(f"conv1d: input {x.shape} and kernel {kernel.shape} do not conform")
    n = x.shape[-2]
    if n < 1:
        raise DimensionError("conv1d: empty sequence")
    pad = w // 2
    pad_width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, pad_width)
    windows = np.stack([xp[..., k:k + n, :] for k in range(w)], axis=-2)  # [..., n, w, d_in]
    flat = windows.reshape(windows.shape[:-2] + (w * d_in,))
    k2 = kernel.data.reshape(w * d_in, d_out)

    def backward(g):
        gk = None
        if kernel.requires_grad:
            gk = (flat.reshape(-1, w * d_in).T @ g.reshape(-1, d_out)).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gwin = (g @ k2.T).reshape(g.shape[:-1] + (w, d_in))
            gxp = np.zeros_like(xp)
            for k in range(w):
                gxp[..., k:k + n, :] += gwin[..., k, :]
            gx = gxp[..., pad:pad + n, :]
        return gx, gk

    return _result(flat @ k2, (x, kernel), backward, "conv1d")


def span_max(x, index, valid):
    """Elementwise max of rows of ``x`` over groups of positions.

    ``x`` is ``[B, n, d]``; ``index`` and ``valid`` are ``[B, W, S]``. Output
    row ``(b, w)`` is the max over ``x[b, index[b, w, s]]`` for the valid
    ``s``. Every group needs at least one valid entry.
    """
    index = np.asarray(index, dtype=np.int64)
    valid = np.asarray(valid, dtype=bool)
    B, n, d = x.shape
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"span position out of range for sequence length {n}")
    if index.shape[-1] == 0 or not np.all(valid.any(axis=-1)):
        raise ContractError("span_max: every group needs a valid position")
    b_idx = np.arange(B)[:, None, None]
    gathered = np.where(valid[..., None], x.data[b_idx, index], -np.inf)  # [B, W, S, d]
    arg = gathered.argmax(axis=2)  # [B, W, d]
    out = np.take_along_axis(gathered, arg[:, :, None, :], axis=2)[:, :, 0, :]
    # sequence position that won the max, per (b, w, feature)
    src = np.take_along_axis(np.broadcast_to(index[..., None], gathered.shape), arg[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(g):
        out_g = np.zeros_like(x.data)
        W = index.shape[1]
        bb = np.broadcast_to(np.arange(B)[:, None, None], (B, W, d))
        dd = np.broadcast_to(np.arange(d)[None, None, :], (B, W, d))
        np.add.at(out_g, (bb, src, dd), g)
        return (out_g,)

    return _result(out, (x,), backward, "span_max")


def cross_entropy(logits, targets, ignore_index=-100):
    """Mean of ``-log softmax(logits)[target]`` over non-ignored targets.

    ``logits`` is ``[..., C]`` and ``targets`` an integer array of the
    leading shape (or a single int for a 1-D logit vector).
    """
    targets = np.asarray(targets, dtype=np.int64)
    C = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    keep = targets != ignore_index
    bad = targets[keep & ((targets < 0) | (targets >= C))]
    if bad.size:
        raise IndexError(f"target class {int(bad[0])} out of range [0, {C})")
    count = int(keep.sum())
    if count == 0:
        raise ContractError("cross_entropy: every target is ignored")
    _require_finite("cross_entropy", logits)
    logp = _shifted_log_softmax(logits.data)
    safe = np.where(keep, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * keep).sum() / count

    def backward(g):
        grad = np.exp(logp)
        onehot = np.zeros_like(grad)
        np.put_along_axis(onehot, safe[..., None], 1.0, axis=-1)
        grad = (grad - onehot) * keep[..., None] * (float(g) / count)
        return (grad,)

    return _result(np.array(loss), (logits,), backward, "cross_entropy")


def dropout(x, p, rng, training=True):
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")
