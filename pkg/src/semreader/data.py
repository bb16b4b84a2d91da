"""SQuAD-2.0 ingestion, dataset statistics, batching and synthetic fixtures."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, SquadFormatError
from .io_utils import dump_json
from .sembert import frame_label_ids
from .srl import OUTSIDE, LabelInventory, SrlFrame, fallback_frame
from .tokenizer import Vocabulary, encode_pair, split_words

log = logging.getLogger(__name__)


@dataclass
class Answer:
    text: str
    answer_start: int


@dataclass
class MrcExample:
    qa_id: str
    title: str
    context: str
    question: str
    is_impossible: bool
    answers: list = field(default_factory=list)
    plausible_answers: list = field(default_factory=list)
    flagged: bool = False


@dataclass
class DatasetStats:
    articles: int
    passages: int
    questions: int
    unanswerable: int

    def as_tuple(self):
        return (self.articles, self.passages, self.questions, self.unanswerable)

    def to_dict(self):
        return {"articles": self.articles, "passages": self.passages,
                "questions": self.questions, "unanswerable": self.unanswerable}


def _field(obj, key, path, kind):
    if not isinstance(obj, dict):
        raise SquadFormatError(path, "expected an object")
    if key not in obj:
        raise SquadFormatError(f"{path}.{key}", "missing required field")
    value = obj[key]
    if not isinstance(value, kind):
        raise SquadFormatError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def _parse_answer(raw, context, path, qa_id):
    text = _field(raw, "text", path, str)
    start = _field(raw, "answer_start", path, int)
    if context[start:start + len(text)] == text:
        return Answer(text, start), True
    found = context.find(text)
    if found < 0:
        log.warning("%s: answer %r not found in context of %s", path, text, qa_id)
        return Answer(text, start), False
    # prefer the occurrence closest to the stated offset
    best = found
    while found >= 0:
        if abs(found - start) < abs(best - start):
            best = found
        found = context.find(text, found + 1)
    log.warning("%s: answer_start %d repaired to %d for %s", path, start, best, qa_id)
    return Answer(text, best), True


def parse_squad_v2(obj):
    data = _field(obj, "data", "$", list)
    examples = []
    for a, article in enumerate(data):
        apath = f"$.data[{a}]"
        title = _field(article, "title", apath, str)
        for p, para in enumerate(_field(article, "paragraphs", apath, list)):
            ppath = f"{apath}.paragraphs[{p}]"
            context = _field(para, "context", ppath, str)
            for q, qa in enumerate(_field(para, "qas", ppath, list)):
                qpath = f"{ppath}.qas[{q}]"
                qa_id = _field(qa, "id", qpath, str)
                question = _field(qa, "question", qpath, str)
                impossible = _field(qa, "is_impossible", qpath, bool)
                raw_answers = _field(qa, "answers", qpath, list)
                if impossible and raw_answers:
                    raise SquadFormatError(f"{qpath}.answers", "unanswerable question carries answers")
                answers = []
                ok = True
                for i, raw in enumerate(raw_answers):
                    ans, good = _parse_answer(raw, context, f"{qpath}.answers[{i}]", qa_id)
                    answers.append(ans)
                    ok = ok and good
                plausible = qa.get("plausible_answers", [])
                examples.append(MrcExample(qa_id, title, context, question, impossible, answers,
                                           plausible, flagged=not ok))
    return examples


def load_squad_v2(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SquadFormatError("$", f"invalid JSON in {path}: {exc}") from exc
    return parse_squad_v2(obj)


def to_squad_v2(examples, version="v2.0"):
    """Group examples by title, then by context, into the SQuAD-2.0 layout."""
    articles = {}
    for ex in examples:
        paragraphs = articles.setdefault(ex.title, {})
        qas = paragraphs.setdefault(ex.context, [])
        qa = {"id": ex.qa_id, "question": ex.question, "is_impossible": ex.is_impossible,
              "answers": [{"text": a.text, "answer_start": a.answer_start} for a in ex.answers]}
        if ex.plausible_answers:
            qa["plausible_answers"] = ex.plausible_answers
        qas.append(qa)
    return {"version": version, "data": [
        {"title": title, "paragraphs": [{"context": c, "qas": qas} for c, qas in paras.items()]}
        for title, paras in articles.items()]}


def save_squad_v2(path, examples):
    dump_json(path, to_squad_v2(examples), indent=1)


def dataset_stats(examples):
    titles = {ex.title for ex in examples}
    passages = {(ex.title, ex.context) for ex in examples}
    return DatasetStats(len(titles), len(passages), len(examples), sum(ex.is_impossible for ex in examples))


@dataclass
class Feature:
    """One tokenized example with its training targets."""

    example: MrcExample
    pair: object
    start_position: int
    end_position: int
    reachable: bool
    label_ids: np.ndarray = None

    @property
    def qa_id(self):
        return self.example.qa_id


def answer_positions(example, pair):
    """Subword ``(start, end)`` of the first gold answer, or None if unreachable."""
    if example.is_impossible or not example.answers:
        return None
    ans = example.answers[0]
    start_char, end_char = ans.answer_start, ans.answer_start + len(ans.text)
    words = [i for i, (s, e) in enumerate(pair.context_char_spans) if e > start_char and s < end_char]
    if not words:
        return None
    last_word = words[-1]
    # answer runs past the truncation point
    if last_word == len(pair.context_char_spans) - 1 and pair.context_char_spans[-1][1] < end_char:
        return None
    off = pair.context_word_offset
    return pair.word_spans[off + words[0]][0], pair.word_spans[off + last_word][1] - 1


def featurize(examples, vocab, max_seq_length=512, max_query_length=64, annotations=None,
              inventory=None, m_max=3, require_annotations=False):
    inventory = inventory or LabelInventory()
    features = []
    seen = set()
    for ex in examples:
        if ex.qa_id in seen:
            raise DataError(f"duplicate qa id {ex.qa_id!r}")
        seen.add(ex.qa_id)
        pair = encode_pair(ex.question, ex.context, vocab, max_seq_length, max_query_length)
        span = answer_positions(ex, pair)
        labels = None
        if annotations is not None or require_annotations:
            record = (annotations or {}).get(ex.qa_id)
            if record is None:
                raise DataError(f"no SRL annotation for qa id {ex.qa_id!r}")
            labels = frame_label_ids(record, pair, inventory, m_max)
        start, end = span if span is not None else (0, 0)
        features.append(Feature(ex, pair, start, end, span is not None, labels))
    return features


@dataclass
class Batch:
    features: list
    input_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    word_index: np.ndarray
    word_valid: np.ndarray
    word_mask: np.ndarray
    span_mask: np.ndarray
    start_positions: np.ndarray
    end_positions: np.ndarray
    unanswerable: np.ndarray
    label_ids: np.ndarray = None

    def __len__(self):
        return len(self.features)


def collate(features, require_labels=False):
    """Pad a list of features to the longest member."""
    B = len(features)
    pairs = [f.pair for f in features]
    n = max(len(p) for p in pairs)
    W = max(p.word_count for p in pairs)
    S = max(e - s for p in pairs for s, e in p.word_spans)
    pad_id = Vocabulary.pad_id
    input_ids = np.full((B, n), pad_id, dtype=np.int64)
    segment_ids = np.zeros((B, n), dtype=np.int64)
    attention = np.zeros((B, n), dtype=bool)
    word_index = np.zeros((B, W, S), dtype=np.int64)
    word_valid = np.zeros((B, W, S), dtype=bool)
    word_mask = np.zeros((B, W), dtype=bool)
    span_mask = np.zeros((B, n), dtype=bool)
    for b, p in enumerate(pairs):
        k = len(p)
        input_ids[b, :k] = p.subword_ids
        segment_ids[b, :k] = p.segment_ids
        attention[b, :k] = p.attention_mask
        for w, (s, e) in enumerate(p.word_spans):
            word_index[b, w, :e - s] = np.arange(s, e)
            word_valid[b, w, :e - s] = True
        # padded word slots point at position 0 so pooling stays defined
        word_valid[b, p.word_count:, 0] = True
        word_mask[b, :p.word_count] = True
        ctx = p.context_positions()
        span_mask[b, ctx.start:ctx.stop] = True
    label_ids = None
    if require_labels or all(f.label_ids is not None for f in features):
        if any(f.label_ids is None for f in features):
            raise DataError("batch needs SRL label ids for every example")
        m = features[0].label_ids.shape[0]
        label_ids = np.zeros((B, m, W), dtype=np.int64)
        for b, f in enumerate(features):
            label_ids[b, :, :f.label_ids.shape[1]] = f.label_ids
    return Batch(
        features=list(features),
        input_ids=input_ids,
        segment_ids=segment_ids,
        attention_mask=attention,
        word_index=word_index,
        word_valid=word_valid,
        word_mask=word_mask,
        span_mask=span_mask,
        start_positions=np.array([f.start_position for f in features], dtype=np.int64),
        end_positions=np.array([f.end_position for f in features], dtype=np.int64),
        unanswerable=np.array([int(f.example.is_impossible) for f in features], dtype=np.int64),
        label_ids=label_ids,
    )


def iterate_batches(features, batch_size, rng=None, require_labels=False):
    """Yield collated batches; shuffled when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(features)) if rng is not None else np.arange(len(features))
    for i in range(0, len(order), batch_size):
        yield collate([features[j] for j in order[i:i + batch_size]], require_labels)


def make_batches(examples, vocab, batch_size, seed=0, annotations=None, shuffle=True, **featurize_kwargs):
    """Featurize ``examples`` and yield one epoch of seeded-shuffled batches."""
    features = featurize(examples, vocab, annotations=annotations, **featurize_kwargs)
    rng = np.random.default_rng(seed) if shuffle else None
    return iterate_batches(features, batch_size, rng, require_labels=annotations is not None)


# synthetic fixtures

_ONSETS = ["b", "c", "d", "đ", "g", "h", "k", "l", "m", "n", "ph", "s", "t", "th", "tr", "v", "x"]
_RHYMES = ["a", "ai", "an", "ao", "ăn", "âm", "e", "ê", "i", "o", "ô", "ơ", "u", "ư", "uy", "anh", "ông", "inh"]
QUESTION_TEMPLATE = "{target} nằm ở đâu ?"
_TEMPLATE_WORDS = {"nằm", "ở", "đâu"}


def fixture_lexicon(size):
    words = [o + r for o in _ONSETS for r in _RHYMES]
    words = [w for w in words if w not in _TEMPLATE_WORDS]
    if size > len(words):
        raise ValueError(f"fixture vocabulary is limited to {len(words)} words")
    return words[:size]


@dataclass
class FixtureConfig:
    size: int = 64
    unanswerable_fraction: float = 0.5
    vocab_size: int = 60
    context_min: int = 6
    context_max: int = 10
    seed: int = 0
    # "lexical": unanswerable questions name a word absent from the context.
    # "frames": the named word is always present; only the ARG1 frame reveals answerability.
    signal: str = "lexical"
    id_prefix: str = "fx"


def gen_fixture(config=None, **overrides):
    """Random-word reading fixture plus matching SRL annotations.

    Returns ``(examples, annotations)`` where annotations use the same
    JSONL record schema the SRL annotator writes.
    """
    cfg = config or FixtureConfig()
    if overrides:
        cfg = FixtureConfig(**{**cfg.__dict__, **overrides})
    if not 0.0 <= cfg.unanswerable_fraction <= 1.0:
        raise ValueError("unanswerable_fraction must be in [0, 1]")
    if cfg.signal not in ("lexical", "frames"):
        raise ValueError(f"unknown fixture signal {cfg.signal!r}")
    rng = np.random.default_rng(cfg.seed)
    lexicon = fixture_lexicon(cfg.vocab_size)
    n_impossible = int(round(cfg.size * cfg.unanswerable_fraction))
    impossible = np.zeros(cfg.size, dtype=bool)
    impossible[rng.permutation(cfg.size)[:n_impossible]] = True

    examples, annotations = [], {}
    for i in range(cfg.size):
        length = int(rng.integers(cfg.context_min, cfg.context_max + 1))
        chosen = [lexicon[j] for j in rng.choice(len(lexicon), size=length, replace=False)]
        context = " ".join(chosen) + " ."
        offsets = [w_start for _, w_start in split_words(context)]
        qa_id = f"{cfg.id_prefix}-{cfg.seed}-{i:04d}"
        title = f"bài {i // 8}"
        labels = [OUTSIDE] * (length + 1)
        if impossible[i]:
            if cfg.signal == "lexical":
                absent = [w for w in lexicon if w not in chosen]
                target = absent[int(rng.integers(len(absent)))]
            else:
                target = chosen[int(rng.integers(length))]
            pred, arg = rng.choice(length, size=2, replace=False)
            labels[arg] = "B-ARG0"
            answers = []
        else:
            pos = int(rng.integers(length))
            target = chosen[pos]
            pred = int(rng.choice([j for j in range(length) if j != pos]))
            arg = pos
            labels[arg] = "B-ARG1"
            answers = [Answer(target, offsets[pos])]
        labels[int(pred)] = "B-PRED"
        question = QUESTION_TEMPLATE.format(target=target)
        examples.append(MrcExample(qa_id, title, context, question, bool(impossible[i]), answers))
        q_words = len(split_words(question))
        annotations[qa_id] = {
            "question_frames": [fallback_frame(q_words).to_dict()],
            "context_frames": [SrlFrame(int(pred), labels).validate().to_dict()],
        }
    return examples, annotations


def ablate_annotations(annotations):
    """Replace every frame by a single all-O frame (semantic ablation)."""
    out = {}
    for qa_id, rec in annotations.items():
        out[qa_id] = {key: [fallback_frame(len(rec[key][0]["labels"])).to_dict()]
                      for key in ("question_frames", "context_frames")}
    return out
