"""Small BERT-style transformer encoder trained from scratch."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .nn import tensor as T
from .nn.layers import Dropout, Embedding, FeedForward, LayerNorm, Module, MultiHeadSelfAttention


@dataclass
class EncoderConfig:
    vocab_size: int
    layer_count: int = 2
    head_count: int = 2
    model_dim: int = 32
    feed_forward_dim: int = 64
    max_position: int = 512
    segment_count: int = 2
    dropout: float = 0.0
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.model_dim % self.head_count:
            raise ConfigurationError(
                f"model_dim {self.model_dim} is not divisible by head_count {self.head_count}")
        if self.layer_count < 0 or self.vocab_size < 1 or self.max_position < 1:
            raise ConfigurationError("layer_count >= 0, vocab_size >= 1, max_position >= 1 required")

    def to_dict(self):
        return asdict(self)


class EncoderBlock(Module):
    """Post-LN block: x = LN(x + attn(x)); x = LN(x + ffn(x))."""

    def __init__(self, config, rng):
        self.attention = MultiHeadSelfAttention(config.model_dim, config.head_count, rng)
        self.attention_norm = LayerNorm(config.model_dim, config.layer_norm_eps)
        self.feed_forward = FeedForward(config.model_dim, config.feed_forward_dim, rng)
        self.output_norm = LayerNorm(config.model_dim, config.layer_norm_eps)
        self.dropout = Dropout(config.dropout, rng)

    def forward(self, x, mask):
        x = self.attention_norm(x + self.dropout(self.attention(x, mask)))
        return self.output_norm(x + self.dropout(self.feed_forward(x)))


class Encoder(Module):
    def __init__(self, config, rng):
        self.config = config
        self.token_embedding = Embedding(config.vocab_size, config.model_dim, rng)
        self.position_embedding = Embedding(config.max_position, config.model_dim, rng)
        self.segment_embedding = Embedding(config.segment_count, config.model_dim, rng)
        self.embedding_norm = LayerNorm(config.model_dim, config.layer_norm_eps)
        self.embedding_dropout = Dropout(config.dropout, rng)
        self.blocks = [EncoderBlock(config, rng) for _ in range(config.layer_count)]

    def forward(self, input_ids, segment_ids, attention_mask):
        """Contextual states ``[B, n, d]`` for integer inputs of shape ``[B, n]``."""
        input_ids = np.asarray(input_ids)
        n = input_ids.shape[-1]
        if n > self.config.max_position:
            raise IndexError(f"sequence length {n} exceeds max_position {self.config.max_position}")
        x = (self.token_embedding(input_ids)
             + self.position_embedding(np.arange(n))
             + self.segment_embedding(segment_ids))
        x = self.embedding_dropout(self.embedding_norm(x))
        for block in self.blocks:
            x = block(x, attention_mask)
        return x


def encode(pair, encoder):
    """Encode one TokenizedPair; returns ``[n, d]``."""
    out = encoder(np.asarray([pair.subword_ids]), np.asarray([pair.segment_ids]),
                  np.asarray([pair.attention_mask], dtype=bool))
    return T.reshape(out, out.shape[1:])
