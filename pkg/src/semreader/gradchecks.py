"""Registered finite-difference checks for every kernel op and composite layer.

Each check runs on several seeds at toy sizes (every dimension <= 8) and
returns the worst :class:`GradCheckReport`. Used by the ``gradcheck``
subcommand and the test-suite.
"""
from __future__ import annotations

import numpy as np

from .encoder import Encoder, EncoderBlock, EncoderConfig
from .nn import tensor as T
from .nn.gradcheck import check_op, grad_check
from .nn.layers import GRU, BiGRU, Conv1d, FeedForward, LayerNorm, Linear, MultiHeadSelfAttention
from .nn.tensor import Tensor
from .reader import IntensiveReader, SketchyReader
from .sembert import SemanticConfig, SemanticIntegration
from .srl import LabelInventory

SEEDS = (0, 1, 2, 3, 4)


def _positive(fn):
    # keeps log/div/power arguments away from zero
    return lambda a, *rest: fn(T.exp(a * 0.5), *rest)


def _span_layout():
    index = np.array([[[0, 1, 0], [2, 0, 0], [3, 4, 5]], [[0, 0, 0], [1, 2, 0], [4, 0, 0]]])
    valid = np.array([[[1, 1, 0], [1, 0, 0], [1, 1, 1]], [[1, 0, 0], [1, 1, 0], [1, 0, 0]]], dtype=bool)
    return index, valid


_MASK = np.array([[True, True, True, False], [True, True, True, True]])
_TARGETS = np.array([[0, 2, -100, 1], [3, 3, 0, -100]])


def _module_check(build, run, seeds=SEEDS):
    """Check ``run(module, inputs)`` w.r.t. its inputs and every parameter."""
    worst = None
    for seed in seeds:
        rng = np.random.default_rng(seed)
        module, inputs = build(rng)
        tensors = list(inputs) + list(module.parameters())
        probe = {}

        def scalar():
            out = run(module, inputs)
            if "w" not in probe:
                probe["w"] = np.random.default_rng(seed + 1000).normal(size=out.shape)
            return (out * Tensor(probe["w"])).sum()

        report = grad_check(scalar, tensors)
        if worst is None or report.max_relative_error > worst.max_relative_error:
            worst = report
    return worst


def _tiny_encoder_config():
    return EncoderConfig(vocab_size=6, layer_count=1, head_count=2, model_dim=4, feed_forward_dim=4, max_position=6)


_IDS = np.array([[0, 4, 5, 1, 3, 1], [0, 5, 1, 4, 1, 2]])
_SEGMENTS = np.array([[0, 0, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1]])
_ATTENTION = np.array([[1, 1, 1, 1, 1, 1], [1, 1, 1, 1, 1, 0]], dtype=bool)


class _Batch:
    """Minimal stand-in for :class:`semreader.data.Batch` with fixed toy tensors."""

    input_ids = _IDS
    segment_ids = _SEGMENTS
    attention_mask = _ATTENTION
    word_index = np.array([[[1, 2], [3, 0], [4, 0]], [[1, 0], [3, 0], [4, 0]]])
    word_valid = np.array([[[1, 1], [1, 0], [1, 0]], [[1, 0], [1, 0], [1, 0]]], dtype=bool)
    word_mask = np.array([[True, True, True], [True, True, True]])
    label_ids = np.array([[[1, 3, 4], [0, 0, 0]], [[1, 5, 1], [1, 1, 2]]])
    unanswerable = np.array([0, 1])
    span_mask = np.array([[0, 0, 0, 0, 1, 0], [0, 0, 0, 1, 1, 0]], dtype=bool)
    start_positions = np.array([4, 0])
    end_positions = np.array([4, 0])


def _sketchy(rng):
    semantic = SemanticConfig(label_embedding_dim=2, gru_hidden_dim=2, m_max=2, fused_semantic_dim=2)
    roles = ("PRED", "ARG1")
    return SketchyReader(_tiny_encoder_config(), semantic, LabelInventory(roles), rng), []


def _semantic(rng):
    config = SemanticConfig(label_embedding_dim=2, gru_hidden_dim=2, m_max=2, fused_semantic_dim=3)
    module = SemanticIntegration(3, 6, config, rng)
    return module, [Tensor(rng.normal(size=(2, 6, 3)))]


def _kernel_checks():
    index, valid = _span_layout()
    ids = np.array([[0, 3, 3], [5, 1, 0]])
    return {
        "add": lambda: check_op(T.add, [(3, 4), (4,)]),
        "sub": lambda: check_op(T.sub, [(3, 4), (3, 1)]),
        "mul": lambda: check_op(T.mul, [(2, 3, 4), (3, 4)]),
        "div": lambda: check_op(lambda a, b: T.div(a, T.exp(b)), [(3, 4), (3, 4)]),
        "neg": lambda: check_op(T.neg, [(5,)]),
        "power": lambda: check_op(_positive(lambda a: T.power(a, 2.5)), [(3, 4)]),
        "exp": lambda: check_op(T.exp, [(3, 4)]),
        "log": lambda: check_op(_positive(T.log), [(3, 4)]),
        "tanh": lambda: check_op(T.tanh, [(3, 4)]),
        "sigmoid": lambda: check_op(T.sigmoid, [(3, 4)]),
        "relu": lambda: check_op(T.relu, [(3, 4)]),
        "gelu": lambda: check_op(T.gelu, [(3, 4)]),
        "matmul": lambda: check_op(T.matmul, [(2, 3, 4), (4, 5)]),
        "sum": lambda: check_op(lambda a: T.tsum(a, axis=1, keepdims=True), [(3, 4, 2)]),
        "mean": lambda: check_op(lambda a: T.mean(a, axis=(0, 2)), [(3, 4, 2)]),
        "reshape": lambda: check_op(lambda a: T.reshape(a, (4, 6)), [(2, 3, 4)]),
        "transpose": lambda: check_op(lambda a: T.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
        "swapaxes": lambda: check_op(lambda a: T.swapaxes(a, 0, 2), [(2, 3, 4)]),
        "getitem": lambda: check_op(lambda a: a[np.array([0, 2, 0]), 1:], [(3, 4)]),
        "concat": lambda: check_op(lambda a, b: T.concat([a, b], axis=-1), [(2, 3), (2, 5)]),
        "stack": lambda: check_op(lambda a, b: T.stack([a, b], axis=1), [(2, 3), (2, 3)]),
        "masked_fill": lambda: check_op(lambda a: T.masked_fill(a, _MASK, -7.0), [(2, 4)]),
        "softmax": lambda: check_op(T.softmax, [(3, 5)]),
        "log_softmax": lambda: check_op(T.log_softmax, [(3, 5)]),
        "layer_norm": lambda: check_op(T.layer_norm, [(3, 6), (6,), (6,)]),
        "embedding": lambda: check_op(lambda table: T.embedding(table, ids), [(6, 4)]),
        "conv1d": lambda: check_op(T.conv1d, [(2, 5, 3), (3, 3, 4)]),
        "span_max": lambda: check_op(lambda x: T.span_max(x, index, valid), [(2, 6, 4)]),
        "cross_entropy": lambda: check_op(lambda a: T.cross_entropy(a, _TARGETS), [(2, 4, 5)]),
        "dropout": lambda: check_op(lambda a: T.dropout(a, 0.3, np.random.default_rng(7)), [(3, 4)]),
    }


def _composite_checks():
    mask = np.array([[True, True, True, True, False], [True, True, True, True, True]])
    return {
        "Linear": lambda: _module_check(
            lambda rng: (Linear(4, 3, rng), [Tensor(rng.normal(size=(2, 4)))]),
            lambda m, xs: m(xs[0])),
        "LayerNorm": lambda: _module_check(
            lambda rng: (LayerNorm(5), [Tensor(rng.normal(size=(3, 5)))]),
            lambda m, xs: m(xs[0])),
        "Conv1d": lambda: _module_check(
            lambda rng: (Conv1d(3, 2, 3, rng), [Tensor(rng.normal(size=(2, 4, 3)))]),
            lambda m, xs: m(xs[0])),
        "GRU": lambda: _module_check(
            lambda rng: (GRU(3, 4, rng), [Tensor(rng.normal(size=(2, 5, 3)))]),
            lambda m, xs: m(xs[0], mask)),
        "GRU-reverse": lambda: _module_check(
            lambda rng: (GRU(3, 4, rng), [Tensor(rng.normal(size=(2, 5, 3)))]),
            lambda m, xs: m(xs[0], mask, reverse=True)),
        "BiGRU": lambda: _module_check(
            lambda rng: (BiGRU(3, 2, rng), [Tensor(rng.normal(size=(2, 5, 3)))]),
            lambda m, xs: m(xs[0], mask)),
        "MultiHeadSelfAttention": lambda: _module_check(
            lambda rng: (MultiHeadSelfAttention(4, 2, rng), [Tensor(rng.normal(size=(2, 5, 4)))]),
            lambda m, xs: m(xs[0], mask)),
        "FeedForward": lambda: _module_check(
            lambda rng: (FeedForward(4, 6, rng), [Tensor(rng.normal(size=(2, 3, 4)))]),
            lambda m, xs: m(xs[0])),
        "EncoderBlock": lambda: _module_check(
            lambda rng: (EncoderBlock(_tiny_encoder_config(), rng), [Tensor(rng.normal(size=(2, 5, 4)))]),
            lambda m, xs: m(xs[0], mask)),
        "Encoder": lambda: _module_check(
            lambda rng: (Encoder(_tiny_encoder_config(), rng), []),
            lambda m, xs: m(_IDS, _SEGMENTS, _ATTENTION)),
        "SemanticIntegration": lambda: _module_check(
            _semantic,
            lambda m, xs: m(xs[0], _Batch.word_index, _Batch.word_valid, _Batch.label_ids, _Batch.word_mask)),
        "SketchyReader.loss": lambda: _module_check(_sketchy, lambda m, xs: m.loss(_Batch)),
        "IntensiveReader.loss": lambda: _module_check(
            lambda rng: (IntensiveReader(_tiny_encoder_config(), rng), []),
            lambda m, xs: m.loss(_Batch)),
    }


def registered_checks():
    """Name -> zero-argument callable returning the worst report over seeds."""
    return {**_kernel_checks(), **_composite_checks()}


def run_all(tolerance=1e-4):
    """Run every registered check; returns ``[(name, report, passed)]``."""
    results = []
    for name, check in registered_checks().items():
        report = check()
        results.append((name, report, report.passed(tolerance)))
    return results
