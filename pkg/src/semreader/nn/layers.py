"""Parameterised layers built on the tensor ops."""
from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import tensor as T
from .tensor import Tensor


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def normal_init(rng, shape, std=0.02):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class Module:
    """Base class: parameters are discovered by walking attributes."""

    training = False

    def named_parameters(self, prefix=""):
        params = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    params[key] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{key}.{i}."))
        return params

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode=True):
        for value in self._modules():
            value.train(mode)
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def _modules(self):
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (v for v in value if isinstance(v, Module))

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = value.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = uniform_init(rng, (d_out,), d_in) if bias else None

    def forward(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, vocab_size, dim, rng):
        self.weight = normal_init(rng, (vocab_size, dim))

    def forward(self, ids):
        return T.embedding(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-12):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, p=0.0, rng=None):
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x):
        return T.dropout(x, self.p, self.rng, self.training)


class Conv1d(Module):
    """Same-padded convolution without bias; kernel is [width, d_in, d_out]."""

    def __init__(self, d_in, d_out, width, rng):
        if width % 2 == 0:
            raise ConfigurationError(f"conv1d kernel width must be odd, got {width}")
        self.kernel = uniform_init(rng, (width, d_in, d_out), width * d_in)

    def forward(self, x):
        return T.conv1d(x, self.kernel)


class GRU(Module):
    """Single-direction GRU.

    Gates (order r, z, candidate) share one input matrix ``W [d_in, 3h]``,
    one recurrent matrix ``U [h, 3h]`` and one bias ``b [3h]``::

        r  = sigmoid(x W_r + h U_r + b_r)
        z  = sigmoid(x W_z + h U_z + b_z)
        h~ = tanh(x W_h + (r * h) U_h + b_h)
        h' = (1 - z) * h + z * h~
    """

    def __init__(self, d_in, hidden, rng):
        self.hidden = hidden
        self.W = uniform_init(rng, (d_in, 3 * hidden), d_in)
        self.U = uniform_init(rng, (hidden, 3 * hidden), hidden)
        self.b = uniform_init(rng, (3 * hidden,), hidden)

    def forward(self, x, mask=None, reverse=False):
        """Run over ``x [B, T, d_in]``; returns states ``[B, T, h]``.

        Where ``mask[b, t]`` is false the state is carried through unchanged,
        so padded tails never leak into the reverse direction.
        """
        B, steps, _ = x.shape
        h = self.hidden
        gates_x = x @ self.W + self.b
        u_rz = self.U[:, :2 * h]
        u_h = self.U[:, 2 * h:]
        state = Tensor(np.zeros((B, h)))
        outputs = [None] * steps
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        for t in order:
            gx = gates_x[:, t, :]
            rz = T.sigmoid(gx[:, :2 * h] + state @ u_rz)
            r = rz[:, :h]
            z = rz[:, h:]
            candidate = T.tanh(gx[:, 2 * h:] + (r * state) @ u_h)
            if mask is not None:
                z = z * np.asarray(mask, dtype=np.float64)[:, t:t + 1]
            state = state + z * (candidate - state)
            outputs[t] = state
        return T.stack(outputs, axis=1)


class BiGRU(Module):
    """Forward and backward GRUs; output at t is [forward_t ; backward_t]."""

    def __init__(self, d_in, hidden, rng):
        self.forward_cell = GRU(d_in, hidden, rng)
        self.backward_cell = GRU(d_in, hidden, rng)

    def forward(self, x, mask=None):
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
            mask = None if mask is None else np.asarray(mask)[None]
        fwd = self.forward_cell(x, mask)
        bwd = self.backward_cell(x, mask, reverse=True)
        out = T.concat([fwd, bwd], axis=-1)
        return T.reshape(out, out.shape[1:]) if squeeze else out


class MultiHeadSelfAttention(Module):
    def __init__(self, dim, heads, rng):
        if dim % heads:
            raise ConfigurationError(f"model dim {dim} is not divisible by head count {heads}")
        self.heads = heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)

    def forward(self, x, mask=None):
        """``x`` is ``[B, n, d]`` (or ``[n, d]``); ``mask`` marks real positions."""
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
            mask = None if mask is None else np.asarray(mask)[None]
        B, n, d = x.shape
        dh = d // self.heads

        def split(t):
            return T.transpose(T.reshape(t, (B, n, self.heads, dh)), (0, 2, 1, 3))

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        if mask is not None:
            blocked = ~np.asarray(mask, dtype=bool)[:, None, None, :]
            scores = T.masked_fill(scores, blocked, T.MASK_VALUE)
        weights = T.softmax(scores, axis=-1)
        context = T.reshape(T.transpose(weights @ v, (0, 2, 1, 3)), (B, n, d))
        out = self.output(context)
        return T.reshape(out, (n, d)) if squeeze else out


class FeedForward(Module):
    def __init__(self, dim, hidden, rng):
        self.inner = Linear(dim, hidden, rng)
        self.outer = Linear(hidden, dim, rng)

    def forward(self, x):
        return self.outer(T.gelu(self.inner(x)))
