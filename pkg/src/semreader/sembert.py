"""Semantic integration: SRL label frames fused with word-level contextual states.

Contextual path: subword states -> same-padded convolution -> per-word max.
Semantic path: per-frame label ids -> lookup table -> shared BiGRU ->
concatenate the frame slots per word -> affine map. The two per-word
vectors are concatenated, contextual part first.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DataError
from .nn import tensor as T
from .nn.layers import BiGRU, Conv1d, Embedding, Linear, Module


@dataclass
class SemanticConfig:
    label_embedding_dim: int = 8
    gru_hidden_dim: int = 8
    m_max: int = 3
    fused_semantic_dim: int = 16
    conv_width: int = 3

    def __post_init__(self):
        if self.m_max < 1:
            raise ConfigurationError("m_max must be >= 1")
        if min(self.label_embedding_dim, self.gru_hidden_dim, self.fused_semantic_dim) < 1:
            raise ConfigurationError("semantic dimensions must be >= 1")
        if self.conv_width % 2 == 0:
            raise ConfigurationError(f"conv_width must be odd, got {self.conv_width}")

    def to_dict(self):
        return asdict(self)


def frame_label_ids(record, pair, inventory, m_max):
    """Label-id matrix ``[m_max, W]`` aligned with ``pair``'s words.

    Question and context frames are laid side by side slot by slot in word
    order (question first). A side without a frame in some slot is filled
    with PAD, as are unused slots. Labels of truncated words are dropped.
    """
    q_count = len(pair.question_words)
    c_count = len(pair.context_words)
    q_frames = record["question_frames"][:m_max]
    c_frames = record["context_frames"][:m_max]
    for f in q_frames:
        if len(f["labels"]) < q_count:
            raise DataError(f"question frame has {len(f['labels'])} labels for {q_count} words")
    for f in c_frames:
        if len(f["labels"]) != pair.context_word_total:
            raise DataError(f"context frame has {len(f['labels'])} labels for {pair.context_word_total} words")
    ids = np.full((m_max, q_count + c_count), inventory.pad_id, dtype=np.int64)
    for slot, f in enumerate(q_frames):
        ids[slot, :q_count] = inventory.ids(f["labels"][:q_count])
    for slot, f in enumerate(c_frames):
        ids[slot, q_count:] = inventory.ids(f["labels"][:c_count])
    return ids


class SemanticIntegration(Module):
    def __init__(self, context_dim, label_count, config, rng):
        self.config = config
        self.conv = Conv1d(context_dim, context_dim, config.conv_width, rng)
        self.label_embedding = Embedding(label_count, config.label_embedding_dim, rng)
        self.label_embedding.weight.data[0] = 0.0
        # multiplies the table so the PAD row stays exactly zero and receives no gradient
        self._row_keep = np.ones((label_count, 1))
        self._row_keep[0] = 0.0
        self.bigru = BiGRU(config.label_embedding_dim, config.gru_hidden_dim, rng)
        self.fusion = Linear(config.m_max * 2 * config.gru_hidden_dim, config.fused_semantic_dim, rng)

    @property
    def output_dim(self):
        return self.conv.kernel.shape[2] + self.config.fused_semantic_dim

    def subword_to_word(self, states, word_index, word_valid):
        """``[B, n, d]`` subword states -> ``[B, W, d]`` word vectors."""
        return T.span_max(self.conv(states), word_index, word_valid)

    def embed_label_sequences(self, label_ids):
        """``[B, m, W]`` label ids -> ``[B, m, W, e]`` embeddings (PAD row is zero)."""
        table = self.label_embedding.weight * self._row_keep
        return T.embedding(table, label_ids)

    def encode_labels(self, embedded, word_mask):
        """Shared BiGRU over every frame slot: ``[B, m, W, e]`` -> ``[B, m, W, 2h]``."""
        B, m, W, e = embedded.shape
        flat = T.reshape(embedded, (B * m, W, e))
        mask = np.repeat(np.asarray(word_mask, dtype=bool), m, axis=0)
        out = self.bigru(flat, mask)
        return T.reshape(out, (B, m, W, out.shape[-1]))

    def fuse(self, encoded):
        """Concatenate the ``m`` slot vectors per word, then map to ``d_sem``."""
        B, m, W, two_h = encoded.shape
        if m != self.config.m_max:
            raise ContractError(f"expected {self.config.m_max} frame slots, got {m}")
        per_word = T.reshape(T.transpose(encoded, (0, 2, 1, 3)), (B, W, m * two_h))
        return self.fusion(per_word)

    def forward(self, states, word_index, word_valid, label_ids, word_mask):
        context = self.subword_to_word(states, word_index, word_valid)
        semantic = self.fuse(self.encode_labels(self.embed_label_sequences(label_ids), word_mask))
        return integrate(context, semantic)


def integrate(context, semantic):
    """Per-word concatenation ``[..., W, d_ctx + d_sem]``, contextual part first."""
    if context.shape[:-1] != semantic.shape[:-1]:
        raise ContractError(f"word counts differ: {context.shape} vs {semantic.shape}")
    return T.concat([context, semantic], axis=-1)


def spans_to_index(word_spans):
    """``(index, valid)`` arrays ``[1, W, S]`` for a single sequence's spans."""
    S = max(e - s for s, e in word_spans)
    index = np.zeros((1, len(word_spans), S), dtype=np.int64)
    valid = np.zeros((1, len(word_spans), S), dtype=bool)
    for w, (s, e) in enumerate(word_spans):
        if e <= s:
            raise IndexError(f"empty span {(s, e)}")
        index[0, w, :e - s] = np.arange(s, e)
        valid[0, w, :e - s] = True
    return index, valid


def subword_to_word(states, word_spans, conv):
    """Single-sequence form: ``[n, d]`` states and a span list -> ``[W, d]``."""
    n = states.shape[0]
    for s, e in word_spans:
        if s < 0 or e > n:
            raise IndexError(f"span {(s, e)} out of range for {n} positions")
    index, valid = spans_to_index(word_spans)
    x = T.reshape(states, (1,) + states.shape)
    out = T.span_max(conv(x), index, valid)
    return T.reshape(out, out.shape[1:])
