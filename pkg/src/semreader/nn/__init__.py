"""Minimal differentiable numeric kernel (float64, reverse mode)."""
from .gradcheck import GradCheckReport, check_op, grad_check
from .layers import (
    BiGRU,
    Conv1d,
    Dropout,
    Embedding,
    FeedForward,
    GRU,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
)
from .optim import AdamW, OptimizerConfig, average_gradients
from .tensor import (
    Tensor,
    add,
    concat,
    conv1d,
    cross_entropy,
    detect_anomaly,
    embedding,
    gelu,
    layer_norm,
    log_softmax,
    masked_fill,
    matmul,
    mul,
    no_grad,
    sigmoid,
    softmax,
    span_max,
    stack,
    tanh,
)

__all__ = [
    "AdamW", "BiGRU", "Conv1d", "Dropout", "Embedding", "FeedForward", "GRU", "GradCheckReport",
    "LayerNorm", "Linear", "Module", "MultiHeadSelfAttention", "OptimizerConfig", "Tensor", "add",
    "average_gradients", "check_op", "concat", "conv1d", "cross_entropy", "detect_anomaly", "embedding",
    "gelu", "grad_check", "layer_norm", "log_softmax", "masked_fill", "matmul", "mul", "no_grad",
    "sigmoid", "softmax", "span_max", "stack", "tanh",
]
