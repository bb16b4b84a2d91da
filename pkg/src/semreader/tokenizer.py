"""Word-aligned WordPiece-style tokenizer.

Words come from whitespace splitting with punctuation broken out into
separate words. Each word is segmented by greedy longest match; pieces
after the first carry the ``##`` continuation marker. Every word maps to a
contiguous run of subword positions (its span), which is what lets the
semantic path pool subword states back to words.
"""
from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError, InputError
from .io_utils import atomic_write_text

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
SPECIALS = (CLS, SEP, PAD, UNK)
CONTINUATION = "##"


def _is_punctuation(ch):
    return unicodedata.category(ch).startswith("P")


def split_words(text):
    """Split into ``(word, start_char)`` pairs; punctuation becomes its own word."""
    words = []
    current_start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if current_start is not None:
                words.append((text[current_start:i], current_start))
                current_start = None
        elif _is_punctuation(ch):
            if current_start is not None:
                words.append((text[current_start:i], current_start))
                current_start = None
            words.append((ch, i))
        elif current_start is None:
            current_start = i
    if current_start is not None:
        words.append((text[current_start:], current_start))
    return words


class Vocabulary:
    """Token list with dense ids; specials occupy ids 0..3."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise ConfigurationError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("vocabulary tokens must be unique")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}

    cls_id, sep_id, pad_id, unk_id = 0, 1, 2, 3

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token):
        return self.index.get(token, self.unk_id)

    def save(self, path):
        atomic_write_text(path, "".join(tok + "\n" for tok in self.tokens))

    @classmethod
    def load(cls, path):
        text = Path(path).read_text(encoding="utf-8")
        return cls(line for line in text.split("\n")[:-1])


def build_vocab(corpus, min_frequency=1, max_size=30000):
    """Vocabulary of frequent whole words plus single-character fallback pieces.

    Words with count >= ``min_frequency`` are added by descending frequency
    (ties lexicographic) until ``max_size`` is reached. Every character seen
    in the corpus is present both as an initial piece and as a ``##``
    continuation piece, so any word over the corpus alphabet segments
    without UNK.
    """
    if isinstance(corpus, str):
        corpus = [corpus]
    counts = Counter(word for text in corpus for word, _ in split_words(text))
    if not counts:
        raise InputError("cannot build a vocabulary from an empty corpus")
    alphabet = sorted({ch for word in counts for ch in word})
    fallback = alphabet + [CONTINUATION + ch for ch in alphabet]
    if max_size < len(SPECIALS) + len(fallback):
        raise ConfigurationError(
            f"max_size {max_size} cannot hold {len(SPECIALS)} specials and "
            f"{len(fallback)} character pieces")
    tokens = list(SPECIALS) + fallback
    present = set(tokens)
    ranked = sorted((w for w, c in counts.items() if c >= min_frequency and w not in present),
                    key=lambda w: (-counts[w], w))
    tokens.extend(ranked[:max_size - len(tokens)])
    return Vocabulary(tokens)


def wordpiece(word, vocab):
    """Greedy longest-match segmentation of one word; ``[UNK]`` if impossible."""
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while end > start:
            candidate = word[start:end] if start == 0 else CONTINUATION + word[start:end]
            if candidate in vocab:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def encode_words(words, vocab):
    """Subword tokens and half-open word spans for pre-split words."""
    tokens, spans = [], []
    for word in words:
        pieces = wordpiece(word, vocab)
        spans.append((len(tokens), len(tokens) + len(pieces)))
        tokens.extend(pieces)
    return tokens, spans


def encode_text(text, vocab):
    return encode_words([w for w, _ in split_words(text)], vocab)


@dataclass
class TokenizedPair:
    """``[CLS] question [SEP] context [SEP] [PAD]*`` with word alignment.

    ``word_spans`` hold one half-open subword range per surviving word,
    question words first; ``context_word_offset`` is the index of the first
    context word in that list. ``context_char_spans`` give ``(start, end)``
    character offsets in the original context for each surviving context
    word.
    """

    subword_ids: list
    segment_ids: list
    attention_mask: list
    word_spans: list
    context_word_offset: int
    context_char_spans: list
    question_words: list = field(default_factory=list)
    context_words: list = field(default_factory=list)
    context_word_total: int = 0

    def __len__(self):
        return len(self.subword_ids)

    @property
    def word_count(self):
        return len(self.word_spans)

    @property
    def context_truncated(self):
        return len(self.context_char_spans) < self.context_word_total

    def subword_to_word(self):
        """Per subword position, the word index it belongs to (-1 for specials/PAD)."""
        owner = [-1] * len(self.subword_ids)
        for w, (s, e) in enumerate(self.word_spans):
            for i in range(s, e):
                owner[i] = w
        return owner

    def context_positions(self):
        """Subword positions belonging to context words."""
        if self.context_word_offset >= len(self.word_spans):
            return range(0)
        return range(self.word_spans[self.context_word_offset][0], self.word_spans[-1][1])


def encode_pair(question, context, vocab, max_seq_length=512, max_query_length=64,
                pad_to_max_length=False):
    if max_seq_length < 8:
        raise ConfigurationError(f"max_seq_length must be >= 8, got {max_seq_length}")
    q_words = split_words(question)
    c_words = split_words(context)
    if not q_words:
        raise InputError("empty question")
    if not c_words:
        raise InputError("empty context")
    q_words = q_words[:max_query_length]
    q_pieces = [wordpiece(w, vocab) for w, _ in q_words]
    c_pieces = [wordpiece(w, vocab) for w, _ in c_words]

    # keep at least the first context word: drop trailing question words if needed
    first_context = len(c_pieces[0])
    while q_words and 3 + sum(map(len, q_pieces)) + first_context > max_seq_length:
        q_words.pop()
        q_pieces.pop()
    if not q_words or 3 + sum(map(len, q_pieces)) + first_context > max_seq_length:
        raise InputError("max_seq_length too small for one question word and one context word")

    ids = [vocab.cls_id]
    segments = [0]
    spans = []
    for pieces in q_pieces:
        spans.append((len(ids), len(ids) + len(pieces)))
        ids.extend(vocab.id(p) for p in pieces)
        segments.extend([0] * len(pieces))
    ids.append(vocab.sep_id)
    segments.append(0)

    budget = max_seq_length - len(ids) - 1
    kept = 0
    for pieces in c_pieces:
        if len(pieces) > budget:
            break
        spans.append((len(ids), len(ids) + len(pieces)))
        ids.extend(vocab.id(p) for p in pieces)
        segments.extend([1] * len(pieces))
        budget -= len(pieces)
        kept += 1
    ids.append(vocab.sep_id)
    segments.append(1)
    mask = [True] * len(ids)
    if pad_to_max_length:
        extra = max_seq_length - len(ids)
        ids.extend([vocab.pad_id] * extra)
        segments.extend([0] * extra)
        mask.extend([False] * extra)

    return TokenizedPair(
        subword_ids=ids,
        segment_ids=segments,
        attention_mask=mask,
        word_spans=spans,
        context_word_offset=len(q_words),
        context_char_spans=[(s, s + len(w)) for w, s in c_words[:kept]],
        question_words=[w for w, _ in q_words],
        context_words=[w for w, _ in c_words[:kept]],
        context_word_total=len(c_words),
    )
