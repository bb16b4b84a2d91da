"""Two-stage BIO semantic role tagger, k-fold harness and MRC annotation.

Stage 1 flags predicate words with a binary head over encoder word states.
Stage 2 tags every word once per predicate, feeding the word states
concatenated with a predicate-indicator embedding to a label head.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import Encoder, EncoderConfig
from .errors import ConfigurationError, ContractError, InputError, InventoryError
from .io_utils import dump_jsonl, read_jsonl
from .nn import tensor as T
from .nn.layers import Embedding, Linear, Module
from .nn.optim import AdamW, OptimizerConfig, average_gradients
from .nn.tensor import no_grad
from .tokenizer import encode_words, split_words

log = logging.getLogger(__name__)

PAD_LABEL = "[PAD]"
OUTSIDE = "O"
PREDICATE_ROLE = "PRED"
DEFAULT_ROLES = ("PRED", "ARG0", "ARG1", "ARG2", "ARGM-LOC", "ARGM-TMP")


class LabelInventory:
    """BIO tag set: PAD (id 0), O (id 1), then B-/I- pairs per role."""

    def __init__(self, roles=DEFAULT_ROLES):
        roles = list(roles)
        if len(set(roles)) != len(roles) or not roles:
            raise ConfigurationError("roles must be a non-empty list of unique names")
        self.roles = roles
        self.labels = [PAD_LABEL, OUTSIDE]
        for role in roles:
            self.labels += [f"B-{role}", f"I-{role}"]
        self.index = {lab: i for i, lab in enumerate(self.labels)}

    pad_id = 0
    outside_id = 1

    def __len__(self):
        return len(self.labels)

    def id(self, label):
        try:
            return self.index[label]
        except KeyError:
            raise InventoryError(f"label {label!r} is not in the inventory") from None

    def ids(self, labels):
        return [self.id(lab) for lab in labels]


@dataclass
class SrlFrame:
    """One predicate-argument structure. ``predicate == -1`` marks the all-O fallback frame."""

    predicate: int
    labels: list

    def validate(self, word_count=None):
        if word_count is not None and len(self.labels) != word_count:
            raise InputError(f"frame has {len(self.labels)} labels for {word_count} words")
        if self.predicate == -1:
            if any(lab != OUTSIDE for lab in self.labels):
                raise InputError("fallback frame (predicate -1) must be all O")
        elif not 0 <= self.predicate < len(self.labels) or self.labels[self.predicate] != f"B-{PREDICATE_ROLE}":
            raise InputError(f"predicate word {self.predicate} is not labelled B-{PREDICATE_ROLE}")
        previous = OUTSIDE
        for lab in self.labels:
            if lab.startswith("I-") and previous[2:] != lab[2:]:
                raise InputError(f"{lab} follows {previous}")
            previous = lab
        return self

    def to_dict(self):
        return {"predicate": self.predicate, "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, obj):
        return cls(int(obj["predicate"]), list(obj["labels"]))


@dataclass
class AnnotatedSentence:
    words: list
    frames: list = field(default_factory=list)

    def validate(self):
        preds = [f.predicate for f in self.frames]
        if preds != sorted(preds) or len(set(preds)) != len(preds):
            raise InputError("frames must be sorted by distinct predicate index")
        for f in self.frames:
            f.validate(len(self.words))
        return self

    def to_dict(self):
        return {"tokens": list(self.words), "frames": [f.to_dict() for f in self.frames]}

    @classmethod
    def from_dict(cls, obj):
        return cls(list(obj["tokens"]), [SrlFrame.from_dict(f) for f in obj.get("frames", [])])


def fallback_frame(word_count):
    return SrlFrame(-1, [OUTSIDE] * word_count)


def repair_bio(labels):
    """Demote orphan I- tags (after O or another role) to B-."""
    fixed = []
    previous = OUTSIDE
    for lab in labels:
        if lab.startswith("I-") and previous[2:] != lab[2:]:
            lab = "B-" + lab[2:]
        fixed.append(lab)
        previous = lab
    return fixed


def decode_spans(labels):
    """``(role, start, end)`` spans with inclusive ``end``."""
    spans = []
    role = None
    start = 0
    for i, lab in enumerate(labels):
        if lab.startswith("I-") and role == lab[2:]:
            continue
        if role is not None:
            spans.append((role, start, i - 1))
            role = None
        if lab.startswith("B-") or lab.startswith("I-"):
            role, start = lab[2:], i
    if role is not None:
        spans.append((role, start, len(labels) - 1))
    return spans


def load_srl_jsonl(path):
    return [AnnotatedSentence.from_dict(obj).validate() for obj in read_jsonl(path)]


def write_srl_jsonl(path, sentences):
    dump_jsonl(path, [s.to_dict() for s in sentences])


def kfold_split(n, k, seed=0):
    """``k`` disjoint folds covering ``range(n)``; sizes differ by at most one."""
    if k < 1 or k > n:
        raise ConfigurationError(f"need 1 <= k <= n, got k={k}, n={n}")
    order = np.random.default_rng(seed).permutation(n)
    return [sorted(int(i) for i in fold) for fold in np.array_split(order, k)]


@dataclass
class SpanScore:
    precision: float
    recall: float
    f1: float


def _span_set(sentences):
    spans = set()
    for s_idx, sent in enumerate(sentences):
        for frame in sent.frames:
            for role, start, end in decode_spans(frame.labels):
                if role != PREDICATE_ROLE:
                    spans.add((s_idx, frame.predicate, role, start, end))
    return spans


def span_prf(gold, predicted):
    """Exact-match span precision/recall/F1 in percent.

    Predicate spans are excluded; argument spans are keyed by sentence,
    frame predicate, role and boundaries.
    """
    if len(gold) != len(predicted):
        raise InputError(f"{len(gold)} gold sentences vs {len(predicted)} predicted")
    for g, p in zip(gold, predicted):
        if len(g.words) != len(p.words):
            raise InputError("gold and predicted sentences differ in word count")
    g_spans = _span_set(gold)
    p_spans = _span_set(predicted)
    if not g_spans and not p_spans:
        return SpanScore(100.0, 100.0, 100.0)
    matched = len(g_spans & p_spans)
    precision = 100.0 * matched / len(p_spans) if p_spans else 0.0
    recall = 100.0 * matched / len(g_spans) if g_spans else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SpanScore(precision, recall, f1)


@dataclass
class SrlConfig:
    k: int = 10
    epochs: int = 40
    learning_rate: float = 1e-5
    weight_decay: float = 0.1
    batch_size: int = 4
    gradient_accumulation_steps: int = 1
    seed: int = 0
    layer_count: int = 2
    head_count: int = 2
    model_dim: int = 32
    feed_forward_dim: int = 64
    max_position: int = 128
    indicator_dim: int = 8

    def encoder_config(self, vocab_size):
        return EncoderConfig(vocab_size=vocab_size, layer_count=self.layer_count, head_count=self.head_count,
                             model_dim=self.model_dim, feed_forward_dim=self.feed_forward_dim,
                             max_position=self.max_position)


class SrlTagger(Module):
    def __init__(self, vocab, inventory, encoder_config, rng, indicator_dim=8):
        self.vocab = vocab
        self.inventory = inventory
        self.encoder = Encoder(encoder_config, rng)
        d = encoder_config.model_dim
        self.predicate_head = Linear(d, 2, rng)
        self.indicator = Embedding(2, indicator_dim, rng)
        self.argument_head = Linear(d + indicator_dim, len(inventory), rng)

    def word_states(self, sentences):
        """First-subword encoder states per word: ``([B, W, d], word_mask [B, W])``."""
        encoded = []
        for words in sentences:
            pieces, spans = encode_words(words, self.vocab)
            ids = [self.vocab.cls_id] + [self.vocab.id(p) for p in pieces] + [self.vocab.sep_id]
            encoded.append((ids, [s + 1 for s, _ in spans]))
        B = len(sentences)
        n = max(len(ids) for ids, _ in encoded)
        W = max(len(first) for _, first in encoded)
        input_ids = np.full((B, n), self.vocab.pad_id)
        attention = np.zeros((B, n), dtype=bool)
        first_index = np.zeros((B, W), dtype=np.int64)
        word_mask = np.zeros((B, W), dtype=bool)
        for b, (ids, first) in enumerate(encoded):
            input_ids[b, :len(ids)] = ids
            attention[b, :len(ids)] = True
            first_index[b, :len(first)] = first
            word_mask[b, :len(first)] = True
        states = self.encoder(input_ids, np.zeros_like(input_ids), attention)
        return states[np.arange(B)[:, None], first_index], word_mask

    def predicate_logits(self, states):
        return self.predicate_head(states)

    def argument_logits(self, states, sentence_index, predicates):
        rows = states[np.asarray(sentence_index)]
        F, W = rows.shape[0], rows.shape[1]
        indicator = np.zeros((F, W), dtype=np.int64)
        indicator[np.arange(F), np.asarray(predicates)] = 1
        return self.argument_head(T.concat([rows, self.indicator(indicator)], axis=-1))

    def loss(self, sentences):
        states, word_mask = self.word_states([s.words for s in sentences])
        pred_targets = np.where(word_mask, 0, -100)
        items, arg_targets = [], []
        W = word_mask.shape[1]
        for b, sent in enumerate(sentences):
            for frame in sent.frames:
                if frame.predicate < 0:
                    continue
                pred_targets[b, frame.predicate] = 1
                items.append((b, frame.predicate))
                ids = self.inventory.ids(frame.labels)
                arg_targets.append(ids + [-100] * (W - len(ids)))
        loss = T.cross_entropy(self.predicate_logits(states), pred_targets)
        if items:
            logits = self.argument_logits(states, [b for b, _ in items], [p for _, p in items])
            loss = loss + T.cross_entropy(logits, np.asarray(arg_targets))
        return loss


def save_tagger(path, tagger):
    meta = {"encoder": tagger.encoder.config.to_dict(), "roles": list(tagger.inventory.roles),
            "indicator_dim": int(tagger.indicator.weight.shape[1])}
    save_checkpoint(path, tagger.state_dict(), meta)


def load_tagger(path, vocab):
    """Rebuild a tagger from :func:`save_tagger` output; ``vocab`` must be the training vocabulary."""
    arrays, meta = load_checkpoint(path)
    enc = EncoderConfig(**meta["encoder"])
    if enc.vocab_size != len(vocab):
        raise ConfigurationError(f"tagger expects a {enc.vocab_size}-token vocabulary, got {len(vocab)}")
    tagger = SrlTagger(vocab, LabelInventory(tuple(meta["roles"])), enc, np.random.default_rng(0),
                       meta["indicator_dim"])
    tagger.load_state_dict(arrays)
    return tagger.eval()


def tag_sentences(sentences, tagger):
    """Tag a list of word lists; returns AnnotatedSentence per input."""
    if not sentences:
        return []
    for words in sentences:
        if not words:
            raise InputError("cannot tag an empty sentence")
    with no_grad():
        states, word_mask = tagger.word_states(sentences)
        is_pred = tagger.predicate_logits(states).data.argmax(axis=-1).astype(bool) & word_mask
        items = [(b, int(p)) for b in range(len(sentences)) for p in np.flatnonzero(is_pred[b])]
        tags = None
        if items:
            logits = tagger.argument_logits(states, [b for b, _ in items], [p for _, p in items]).data
            logits[..., LabelInventory.pad_id] = -np.inf
            tags = logits.argmax(axis=-1)
    result = [AnnotatedSentence(list(words), []) for words in sentences]
    for row, (b, p) in enumerate(items):
        W = len(sentences[b])
        labels = [tagger.inventory.labels[t] for t in tags[row, :W]]
        labels[p] = f"B-{PREDICATE_ROLE}"
        result[b].frames.append(SrlFrame(p, repair_bio(labels)))
    return result


def tag_sentence(words, tagger):
    return tag_sentences([list(words)], tagger)[0]


def train_tagger(sentences, vocab, config, inventory=None, seed=None):
    """Train one tagger on ``sentences`` (AnnotatedSentence list)."""
    if not sentences:
        raise InputError("empty SRL training set")
    inventory = inventory or LabelInventory()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    tagger = SrlTagger(vocab, inventory, config.encoder_config(len(vocab)), rng, config.indicator_dim)
    params = tagger.named_parameters()
    opt = AdamW(params, OptimizerConfig(learning_rate=config.learning_rate, weight_decay=config.weight_decay,
                                        gradient_accumulation_steps=config.gradient_accumulation_steps))
    accumulate = config.gradient_accumulation_steps
    order_rng = np.random.default_rng(seed + 1)
    tagger.train()
    for _ in range(config.epochs):
        order = order_rng.permutation(len(sentences))
        batches = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        opt.zero_grad()
        pending = 0
        for batch in batches:
            tagger.loss([sentences[i] for i in batch]).backward()
            pending += 1
            if pending == accumulate:
                average_gradients(params.values(), pending)
                opt.step()
                opt.zero_grad()
                pending = 0
        if pending:
            average_gradients(params.values(), pending)
            opt.step()
    tagger.eval()
    return tagger


@dataclass
class KFoldResult:
    taggers: list
    folds: list
    scores: list

    @property
    def average(self):
        n = len(self.scores)
        return SpanScore(sum(s.precision for s in self.scores) / n,
                         sum(s.recall for s in self.scores) / n,
                         sum(s.f1 for s in self.scores) / n)

    def table(self):
        lines = [f"{'':<10}{'Precision (%)':>15}{'Recall (%)':>13}{'F1-score (%)':>15}"]
        for i, s in enumerate(self.scores, 1):
            lines.append(f"{'Fold ' + str(i):<10}{s.precision:>15.3f}{s.recall:>13.3f}{s.f1:>15.3f}")
        a = self.average
        lines.append(f"{'Average':<10}{a.precision:>15.3f}{a.recall:>13.3f}{a.f1:>15.3f}")
        return "\n".join(lines)

    def to_dict(self):
        a = self.average
        return {
            "folds": [{"fold": i + 1, "size": len(f), "precision": s.precision, "recall": s.recall, "f1": s.f1}
                      for i, (f, s) in enumerate(zip(self.folds, self.scores))],
            "average": {"precision": a.precision, "recall": a.recall, "f1": a.f1},
        }


def train_srl_kfold(dataset, vocab, config, inventory=None):
    """Train ``k`` taggers, each held out on one fold; report span P/R/F1 per fold."""
    if not dataset:
        raise InputError("empty SRL dataset")
    inventory = inventory or LabelInventory()
    folds = kfold_split(len(dataset), config.k, config.seed)
    taggers, scores = [], []
    for i, held_out in enumerate(folds):
        held = set(held_out)
        train = [s for j, s in enumerate(dataset) if j not in held]
        test = [dataset[j] for j in held_out]
        tagger = train_tagger(train or test, vocab, config, inventory, seed=config.seed + 101 * i)
        predicted = tag_sentences([s.words for s in test], tagger)
        score = span_prf(test, predicted)
        log.info("fold %d: P=%.3f R=%.3f F1=%.3f", i + 1, score.precision, score.recall, score.f1)
        taggers.append(tagger)
        scores.append(score)
    return KFoldResult(taggers, folds, scores)


def pool_frames(annotations, m_max):
    """Merge several taggers' frames for one sentence.

    Deduplicate by (predicate, labels), order by predicate index (stable in
    tagger order), keep the first ``m_max``; an empty result becomes one
    all-O fallback frame.
    """
    if m_max < 1:
        raise ConfigurationError("m_max must be >= 1")
    seen = set()
    frames = []
    word_count = len(annotations[0].words)
    for sent in annotations:
        for frame in sent.frames:
            key = (frame.predicate, tuple(frame.labels))
            if key not in seen:
                seen.add(key)
                frames.append(frame)
    frames.sort(key=lambda f: f.predicate)
    return frames[:m_max] or [fallback_frame(word_count)]


def annotate_mrc_dataset(examples, taggers, m_max=3, path=None):
    """Tag every question and context with all taggers and pool the frames.

    Returns ``{qa_id: {"question_frames": [...], "context_frames": [...]}}``
    and writes it as JSONL when ``path`` is given.
    """
    if not taggers:
        raise ContractError("annotation needs at least one trained tagger")
    texts = []
    for ex in examples:
        texts.extend([ex.question, ex.context])
    unique = list(dict.fromkeys(texts))
    words = [[w for w, _ in split_words(t)] for t in unique]
    tagged = [tag_sentences(words, tagger) for tagger in taggers]
    pooled = {text: pool_frames([per_tagger[i] for per_tagger in tagged], m_max)
              for i, text in enumerate(unique)}
    result = {}
    for ex in examples:
        result[ex.qa_id] = {
            "question_frames": [f.to_dict() for f in pooled[ex.question]],
            "context_frames": [f.to_dict() for f in pooled[ex.context]],
        }
    if path is not None:
        write_annotations(path, result)
    return result


def write_annotations(path, annotations):
    try:
        dump_jsonl(path, [{"id": qa_id, **rec} for qa_id, rec in annotations.items()])
    except OSError as exc:
        raise OSError(f"cannot write annotations to {path}: {exc}") from exc


def load_annotations(path):
    try:
        rows = read_jsonl(path)
    except OSError as exc:
        raise OSError(f"cannot read annotations from {path}: {exc}") from exc
    return {row["id"]: {"question_frames": row["question_frames"], "context_frames": row["context_frames"]}
            for row in rows}


# separable synthetic SRL data: every word's tag is a function of its identity
SEPARABLE_LEXICON = {
    "PRED": ["ăn", "đọc", "viết", "mua", "xem"],
    "ARG0": ["tôi", "anh", "chị", "bạn"],
    "ARG1": ["cơm", "sách", "thư", "áo"],
    "ARGM-LOC": ["nhà", "trường", "chợ"],
    "ARGM-TMP": ["sáng", "tối", "đêm"],
    "O": ["thì", "là", "và", "rất"],
}


def gen_srl_fixture(n_sentences=40, seed=0):
    """Sentences whose gold tags are fully determined by word identity."""
    rng = np.random.default_rng(seed)
    lex = SEPARABLE_LEXICON
    sentences = []
    for _ in range(n_sentences):
        slots = [("ARG0", rng.choice(lex["ARG0"])), ("PRED", rng.choice(lex["PRED"])),
                 ("ARG1", rng.choice(lex["ARG1"]))]
        for role in ("ARGM-LOC", "ARGM-TMP", "O"):
            if rng.random() < 0.5:
                slots.insert(int(rng.integers(0, len(slots) + 1)), (role, rng.choice(lex[role])))
        words = [str(w) for _, w in slots]
        labels = [OUTSIDE if role == "O" else f"B-{role}" for role, _ in slots]
        predicate = [r for r, _ in slots].index("PRED")
        sentences.append(AnnotatedSentence(words, [SrlFrame(predicate, labels)]).validate())
    return sentences
