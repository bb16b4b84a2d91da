"""Retrospective reader: sketchy classifier, intensive span reader, rear verification.

Score conventions:

* ``score_ext = logit_unanswerable - logit_answerable`` (sketchy module)
* ``score_diff = score_null - score_has`` where ``score_null`` is the CLS
  start+end logit sum and ``score_has`` the best span's (intensive module)
* ``v = beta1 * score_diff + beta2 * score_ext``; the question is judged
  unanswerable iff ``v > delta``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import featurize, iterate_batches
from .encoder import Encoder, EncoderConfig
from .errors import ConfigurationError, ContractError, DataError, NumericDomainError
from .metrics import exact_match, token_f1
from .nn import tensor as T
from .nn.layers import Linear, Module
from .nn.optim import AdamW, OptimizerConfig, average_gradients
from .nn.tensor import no_grad
from .sembert import SemanticConfig, SemanticIntegration
from .srl import LabelInventory

log = logging.getLogger(__name__)

ANSWERABLE, UNANSWERABLE = 0, 1


@dataclass
class SketchyOutput:
    logits: tuple

    @property
    def score_ext(self):
        return self.logits[UNANSWERABLE] - self.logits[ANSWERABLE]


@dataclass
class IntensiveOutput:
    start_logits: np.ndarray
    end_logits: np.ndarray
    best_span: tuple
    score_has: float
    score_null: float

    @property
    def score_diff(self):
        return self.score_null - self.score_has


@dataclass
class Verdict:
    qa_id: str
    answer_text: str
    v: float
    score_diff: float
    score_ext: float
    beta1: float
    beta2: float
    delta: float

    def to_dict(self):
        return asdict(self)


@dataclass
class ReaderTrainConfig:
    kind: str = "sketchy"
    learning_rate: float = 5e-6
    batch_size: int = 64
    gradient_accumulation_steps: int = 8
    epochs: int = 2
    max_answer_length: int = 30
    weight_decay: float = 0.01
    max_seq_length: int = 512
    max_query_length: int = 64
    max_steps: int = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sketchy", "intensive"):
            raise ConfigurationError(f"unknown module kind {self.kind!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.max_answer_length < 1:
            raise ConfigurationError("batch_size >= 1, epochs >= 0, max_answer_length >= 1 required")

    @classmethod
    def sketchy(cls, **overrides):
        return cls(**{"kind": "sketchy", "learning_rate": 5e-6, "batch_size": 64,
                      "gradient_accumulation_steps": 8, **overrides})

    @classmethod
    def intensive(cls, **overrides):
        return cls(**{"kind": "intensive", "learning_rate": 2e-5, "batch_size": 64,
                      "gradient_accumulation_steps": 1, **overrides})

    def optimizer_config(self):
        return OptimizerConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                               gradient_accumulation_steps=self.gradient_accumulation_steps)


class SketchyReader(Module):
    """Answerability classifier over the semantic-augmented encoder."""

    kind = "sketchy"

    def __init__(self, encoder_config, semantic_config, inventory, rng):
        self.encoder_config = encoder_config
        self.semantic_config = semantic_config
        self.inventory = inventory
        self.encoder = Encoder(encoder_config, rng)
        self.semantic = SemanticIntegration(encoder_config.model_dim, len(inventory), semantic_config, rng)
        self.head = Linear(self.semantic.output_dim, 2, rng)

    def forward(self, batch):
        if batch.label_ids is None:
            raise DataError("sketchy module needs SRL label ids")
        states = self.encoder(batch.input_ids, batch.segment_ids, batch.attention_mask)
        joint = self.semantic(states, batch.word_index, batch.word_valid, batch.label_ids, batch.word_mask)
        # first word of the joint representation (first question word)
        return self.head(joint[:, 0, :])

    def loss(self, batch):
        return T.cross_entropy(self.forward(batch), batch.unanswerable)

    def meta(self):
        return {"kind": self.kind, "encoder": self.encoder_config.to_dict(),
                "semantic": self.semantic_config.to_dict(), "roles": list(self.inventory.roles)}


class IntensiveReader(Module):
    """Span predictor over a plain encoder; CLS carries the null score."""

    kind = "intensive"

    def __init__(self, encoder_config, rng):
        self.encoder_config = encoder_config
        self.encoder = Encoder(encoder_config, rng)
        self.span_head = Linear(encoder_config.model_dim, 2, rng)

    def forward(self, batch):
        states = self.encoder(batch.input_ids, batch.segment_ids, batch.attention_mask)
        logits = self.span_head(states)
        return logits[:, :, 0], logits[:, :, 1]

    def loss(self, batch):
        start, end = self.forward(batch)
        allowed = batch.span_mask.copy()
        allowed[:, 0] = True
        start = T.masked_fill(start, ~allowed, T.MASK_VALUE)
        end = T.masked_fill(end, ~allowed, T.MASK_VALUE)
        return T.cross_entropy(start, batch.start_positions) + T.cross_entropy(end, batch.end_positions)

    def meta(self):
        return {"kind": self.kind, "encoder": self.encoder_config.to_dict()}


def save_reader(path, model):
    save_checkpoint(path, model.state_dict(), model.meta())


def load_reader(path):
    arrays, meta = load_checkpoint(path)
    rng = np.random.default_rng(0)
    enc = EncoderConfig(**meta["encoder"])
    if meta["kind"] == "sketchy":
        model = SketchyReader(enc, SemanticConfig(**meta["semantic"]), LabelInventory(meta["roles"]), rng)
    else:
        model = IntensiveReader(enc, rng)
    model.load_state_dict(arrays)
    return model.eval()


def best_span(start_logits, end_logits, valid_mask, max_answer_length):
    """Argmax of ``start[i] + end[j]`` over valid ``i <= j < i + max_answer_length``.

    Ties go to the smallest ``i``, then the smallest ``j``.
    """
    start = np.asarray(start_logits, dtype=np.float64)
    end = np.asarray(end_logits, dtype=np.float64)
    valid = np.asarray(valid_mask, dtype=bool)
    if not valid.any():
        raise ContractError("best_span needs at least one valid position")
    n = start.shape[0]
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    allowed = (j >= i) & (j - i < max_answer_length) & valid[:, None] & valid[None, :]
    scores = np.where(allowed, start[:, None] + end[None, :], -np.inf)
    flat = int(np.argmax(scores))  # first maximum in row-major order
    return flat // n, flat % n


def sketchy_outputs(logits):
    return [SketchyOutput((float(a), float(u))) for a, u in np.asarray(logits)]


def intensive_outputs(batch, start_logits, end_logits, max_answer_length):
    outputs = []
    for b in range(len(batch)):
        s, e = start_logits[b], end_logits[b]
        i, j = best_span(s, e, batch.span_mask[b], max_answer_length)
        outputs.append(IntensiveOutput(s, e, (i, j), float(s[i] + e[j]), float(s[0] + e[0])))
    return outputs


def rear_verify(score_diff, score_ext, beta1, beta2, delta):
    """Return ``(v, unanswerable)``."""
    for name, x in (("score_diff", score_diff), ("score_ext", score_ext)):
        if not math.isfinite(x):
            raise NumericDomainError(f"{name} is not finite: {x}")
    v = beta1 * score_diff + beta2 * score_ext
    return v, bool(v > delta)


def span_text(feature, span):
    pair = feature.pair
    owner = pair.subword_to_word()
    first = owner[span[0]] - pair.context_word_offset
    last = owner[span[1]] - pair.context_word_offset
    start = pair.context_char_spans[first][0]
    end = pair.context_char_spans[last][1]
    return feature.example.context[start:end]


@dataclass
class VerifierInput:
    qa_id: str
    score_diff: float
    score_ext: float
    span_text: str
    golds: list = field(default_factory=list)
    is_impossible: bool = False


def score_features(sketchy, intensive, features, batch_size=64, max_answer_length=30):
    """Run both modules over ``features`` (frozen weights) in input order."""
    items = []
    with no_grad():
        for batch in iterate_batches(features, batch_size):
            ext = sketchy_outputs(sketchy(batch).data)
            start, end = intensive(batch)
            spans = intensive_outputs(batch, start.data, end.data, max_answer_length)
            for f, so, io in zip(batch.features, ext, spans):
                items.append(VerifierInput(f.qa_id, io.score_diff, so.score_ext, span_text(f, io.best_span),
                                           [a.text for a in f.example.answers], f.example.is_impossible))
    return items


def _grid_scores(items, beta1, beta2, delta):
    em = f1 = 0.0
    for it in items:
        _, unanswerable = rear_verify(it.score_diff, it.score_ext, beta1, beta2, delta)
        pred = "" if unanswerable else it.span_text
        em += exact_match(pred, it.golds, it.is_impossible)
        f1 += token_f1(pred, it.golds, it.is_impossible)
    n = len(items)
    return 100.0 * f1 / n, 100.0 * em / n


@dataclass
class VerifierParams:
    beta1: float
    beta2: float
    delta: float
    f1: float = float("nan")
    exact_match: float = float("nan")

    def to_dict(self):
        return {"beta1": self.beta1, "beta2": self.beta2, "delta": self.delta}


DEFAULT_BETA_GRID = [(round(b, 2), round(1.0 - b, 2)) for b in np.linspace(0.0, 1.0, 11)]
DEFAULT_DELTA_GRID = [round(float(d), 2) for d in np.linspace(-10.0, 10.0, 81)]


def tune_verifier(items, beta_grid=None, delta_grid=None):
    """Exhaustive grid search maximising token F1 on ``items``.

    Ties: higher EM, then smaller delta, then earlier beta in the grid.
    """
    beta_grid = DEFAULT_BETA_GRID if beta_grid is None else list(beta_grid)
    delta_grid = DEFAULT_DELTA_GRID if delta_grid is None else list(delta_grid)
    if not beta_grid or not delta_grid:
        raise ConfigurationError("verifier grids must be non-empty")
    if not items:
        raise ContractError("tuning needs a non-empty dev set")
    best = None
    best_key = None
    for beta1, beta2 in beta_grid:
        for delta in delta_grid:
            f1, em = _grid_scores(items, beta1, beta2, delta)
            key = (f1, em, -delta)
            if best_key is None or key > best_key:
                best_key = key
                best = VerifierParams(float(beta1), float(beta2), float(delta), f1, em)
    return best


@dataclass
class TrainResult:
    losses: list
    steps: int


def fit(model, features, config, callback=None):
    """Train ``model`` in place on pre-featurized examples.

    Gradients of ``gradient_accumulation_steps`` micro-batches are summed,
    divided by the count, then applied; a partial group at the end of an
    epoch is flushed the same way. ``losses`` holds the mean micro-batch
    loss of every optimizer step.
    """
    require_labels = config.kind == "sketchy"
    if require_labels and any(f.label_ids is None for f in features):
        raise DataError("sketchy training needs SRL annotations for every example")
    params = model.named_parameters()
    opt = AdamW(params, config.optimizer_config())
    rng = np.random.default_rng(config.seed)
    accumulate = config.gradient_accumulation_steps
    losses, pending, pending_loss, steps = [], 0, 0.0, 0
    model.train()

    def flush():
        nonlocal pending, pending_loss, steps
        average_gradients(params.values(), pending)
        opt.step()
        opt.zero_grad()
        losses.append(pending_loss / pending)
        steps += 1
        if callback is not None:
            callback(steps, losses[-1])
        pending, pending_loss = 0, 0.0

    opt.zero_grad()
    for _ in range(config.epochs):
        for batch in iterate_batches(features, config.batch_size, rng, require_labels):
            loss = model.loss(batch)
            loss.backward()
            pending += 1
            pending_loss += loss.item()
            if pending == accumulate:
                flush()
                if config.max_steps is not None and steps >= config.max_steps:
                    model.eval()
                    return TrainResult(losses, steps)
        if pending:
            flush()
            if config.max_steps is not None and steps >= config.max_steps:
                break
    model.eval()
    return TrainResult(losses, steps)


def build_model(kind, encoder_config, semantic_config=None, inventory=None, seed=0):
    rng = np.random.default_rng(seed)
    if kind == "sketchy":
        return SketchyReader(encoder_config, semantic_config or SemanticConfig(), inventory or LabelInventory(), rng)
    if kind == "intensive":
        return IntensiveReader(encoder_config, rng)
    raise ConfigurationError(f"unknown module kind {kind!r}")


def train_module(kind, examples, vocab, config, encoder_config, annotations=None, semantic_config=None,
                 inventory=None, callback=None):
    """Featurize, build and train one module. Returns ``(model, TrainResult)``."""
    if kind != config.kind:
        raise ConfigurationError(f"config is for {config.kind!r}, not {kind!r}")
    if kind == "sketchy" and annotations is None:
        raise DataError("sketchy module needs SRL annotations")
    semantic_config = semantic_config or SemanticConfig()
    inventory = inventory or LabelInventory()
    features = featurize(examples, vocab, config.max_seq_length, config.max_query_length,
                         annotations if kind == "sketchy" else None, inventory, semantic_config.m_max)
    model = build_model(kind, encoder_config, semantic_config, inventory, seed=config.seed)
    return model, fit(model, features, config, callback)


def predict(examples, vocab, sketchy, intensive, verifier, annotations, max_seq_length=512,
            max_query_length=64, max_answer_length=30, batch_size=64):
    """Verdicts in dataset order, one per QA id."""
    features = featurize(examples, vocab, max_seq_length, max_query_length, annotations,
                         sketchy.inventory, sketchy.semantic_config.m_max, require_annotations=True)
    verdicts = []
    for it in score_features(sketchy, intensive, features, batch_size, max_answer_length):
        v, unanswerable = rear_verify(it.score_diff, it.score_ext, verifier.beta1, verifier.beta2, verifier.delta)
        verdicts.append(Verdict(it.qa_id, "" if unanswerable else it.span_text, v, it.score_diff, it.score_ext,
                                verifier.beta1, verifier.beta2, verifier.delta))
    return verdicts


def predictions_dict(verdicts):
    return {v.qa_id: v.answer_text for v in verdicts}
