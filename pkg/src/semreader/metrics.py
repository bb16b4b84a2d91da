"""Answer scoring (EM, token F1), answerability metrics and a paired t-test.

Scoring follows the SQuAD-2.0 scorer family: multiset token overlap, max
over gold answers, and an empty prediction meaning "no answer". Any
non-empty prediction on an unanswerable question scores zero.
"""
from __future__ import annotations

import math
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError, InputError, NumericDomainError

_ASCII_PUNCT = set(string.punctuation)


def _is_punct(ch):
    return ch in _ASCII_PUNCT or unicodedata.category(ch).startswith("P")


def normalize_answer(text):
    """Lowercase, drop punctuation, split on whitespace.

    No article removal: the SQuAD article list is English-only.
    """
    text = unicodedata.normalize("NFC", text.lower())
    text = "".join(" " if _is_punct(ch) else ch for ch in text)
    return text.split()


def exact_match(prediction, golds, is_impossible):
    pred = normalize_answer(prediction)
    if is_impossible:
        return int(not pred)
    return int(any(pred == normalize_answer(g) for g in golds))


def _f1_tokens(pred, gold):
    if not pred or not gold:
        return float(pred == gold)
    common = Counter(pred) & Counter(gold)
    matched = sum(common.values())
    if matched == 0:
        return 0.0
    precision = matched / len(pred)
    recall = matched / len(gold)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction, golds, is_impossible):
    pred = normalize_answer(prediction)
    if is_impossible:
        return float(not pred)
    if not golds:
        return 0.0
    return max(_f1_tokens(pred, normalize_answer(g)) for g in golds)


@dataclass
class EvalReport:
    exact_match: float
    f1: float
    total: int
    per_question: dict = field(default_factory=dict)
    has_answer: dict = field(default_factory=dict)
    no_answer: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "exact_match": self.exact_match,
            "f1": self.f1,
            "total": self.total,
            "has_answer": self.has_answer,
            "no_answer": self.no_answer,
        }


class PredictionMismatchError(DataError):
    def __init__(self, missing, extra):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(f"prediction ids do not match dataset: missing={self.missing} extra={self.extra}")


def _split_summary(ems, f1s):
    if not ems:
        return {"exact_match": 0.0, "f1": 0.0, "total": 0}
    return {"exact_match": 100.0 * sum(ems) / len(ems), "f1": 100.0 * sum(f1s) / len(f1s), "total": len(ems)}


def evaluate_predictions(predictions, examples):
    """Score ``{qa_id: answer}`` against MrcExample-like records.

    Missing or extra ids raise :class:`PredictionMismatchError`; nothing is
    silently scored as zero.
    """
    ids = [ex.qa_id for ex in examples]
    missing = set(ids) - set(predictions)
    extra = set(predictions) - set(ids)
    if missing or extra:
        raise PredictionMismatchError(missing, extra)
    per_question = {}
    has = ([], [])
    no = ([], [])
    for ex in examples:
        golds = [a.text for a in ex.answers]
        em = exact_match(predictions[ex.qa_id], golds, ex.is_impossible)
        f1 = token_f1(predictions[ex.qa_id], golds, ex.is_impossible)
        per_question[ex.qa_id] = {"exact_match": em, "f1": f1}
        bucket = no if ex.is_impossible else has
        bucket[0].append(em)
        bucket[1].append(f1)
    total = len(examples)
    ems = [v["exact_match"] for v in per_question.values()]
    f1s = [v["f1"] for v in per_question.values()]
    return EvalReport(
        exact_match=100.0 * sum(ems) / total if total else 0.0,
        f1=100.0 * sum(f1s) / total if total else 0.0,
        total=total,
        per_question=per_question,
        has_answer=_split_summary(*has),
        no_answer=_split_summary(*no),
    )


def confusion_counts(predicted, gold):
    """(tp, fp, fn, tn) with True (unanswerable) as the positive class."""
    if len(predicted) != len(gold):
        raise InputError(f"length mismatch: {len(predicted)} predictions vs {len(gold)} labels")
    tp = fp = fn = tn = 0
    for p, g in zip(predicted, gold):
        p, g = bool(p), bool(g)
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def classifier_metrics(predicted, gold):
    """Accuracy % and F1 % for answerability, unanswerable = positive."""
    tp, fp, fn, tn = confusion_counts(predicted, gold)
    total = tp + fp + fn + tn
    accuracy = 100.0 * (tp + tn) / total if total else 0.0
    denom = 2 * tp + fp + fn
    f1 = 100.0 * 2 * tp / denom if denom else 100.0
    return accuracy, f1


def _betacf(a, b, x, max_iter=300, tol=3e-16):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise NumericDomainError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


class TTestResult(NamedTuple):
    t: float
    df: int
    p: float


def paired_t_test(scores_a, scores_b):
    """Two-sided paired t-test on per-item scores."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise InputError("paired t-test needs at least 2 pairs")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise NumericDomainError("paired differences have zero variance; t is undefined")
    t = float(d.mean()) / (sd / math.sqrt(n))
    df = n - 1
    return TTestResult(t, df, student_t_two_sided_p(t, df))
