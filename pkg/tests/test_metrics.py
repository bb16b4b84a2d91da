import math
import unicodedata
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import gammaln

from semreader.data import Answer, MrcExample
from semreader.errors import InputError, NumericDomainError
from semreader.metrics import (
    PredictionMismatchError,
    classifier_metrics,
    evaluate_predictions,
    exact_match,
    normalize_answer,
    paired_t_test,
    regularized_incomplete_beta,
    student_t_two_sided_p,
    token_f1,
)

# (prediction, golds, impossible, EM, F1), scored by hand
HAND = [
    ("Hà Nội", ["Hà Nội"], False, 1, 1.0),
    ("hà nội", ["Hà Nội"], False, 1, 1.0),
    ("Hà Nội.", ["Hà Nội"], False, 1, 1.0),
    ("  Hà   Nội ", ["Hà Nội"], False, 1, 1.0),
    ("Hà", ["Hà Nội"], False, 0, 2 / 3),
    ("thủ đô Hà Nội", ["Hà Nội"], False, 0, 2 / 3),
    ("Huế", ["Hà Nội"], False, 0, 0.0),
    ("", ["Hà Nội"], False, 0, 0.0),
    ("Huế", ["Hà Nội", "Huế"], False, 1, 1.0),
    ("cố đô Huế", ["Huế", "cố đô"], False, 0, 0.8),
    ("a a b", ["a b b"], False, 0, 2 / 3),
    ("a a", ["a"], False, 0, 2 / 3),
    ("x y z w", ["y z"], False, 0, 2 / 3),
    ("năm 1945", ["1945"], False, 0, 2 / 3),
    ("(1945)", ["1945"], False, 1, 1.0),
    ("“Việt Nam”", ["Việt Nam"], False, 1, 1.0),
    ("the city", ["city"], False, 0, 2 / 3),  # no English article stripping
    ("", [], True, 1, 1.0),
    ("...", [], True, 1, 1.0),
    ("Hà Nội", [], True, 0, 0.0),  # a span on an unanswerable question scores zero
    ("không", [], True, 0, 0.0),
    ("Hà Nội", ["Hà Nội"], True, 0, 0.0),
    ("", ["Hà Nội"], True, 1, 1.0),
    ("Sài Gòn", [], False, 0, 0.0),
]


@pytest.mark.parametrize("pred,golds,impossible,em,f1", HAND)
def test_hand_scored_fixture(pred, golds, impossible, em, f1):
    assert exact_match(pred, golds, impossible) == em
    assert math.isclose(token_f1(pred, golds, impossible), f1, rel_tol=1e-12)


def test_normalize_examples():
    assert normalize_answer("Xin chào, THẾ giới!") == ["xin", "chào", "thế", "giới"]
    assert normalize_answer(" - ") == []
    # decomposed and composed forms compare equal
    assert normalize_answer("Việt") == normalize_answer("Việt")


def _bag_f1(pred, gold):
    """Brute force: count matched tokens one occurrence at a time."""
    remaining = list(gold)
    matched = 0
    for tok in pred:
        if tok in remaining:
            remaining.remove(tok)
            matched += 1
    if not pred or not gold:
        return float(pred == gold)
    if matched == 0:
        return 0.0
    p, r = matched / len(pred), matched / len(gold)
    return 2 * p * r / (p + r)


_tok = st.sampled_from(["a", "b", "c", "đ", "ê", "f"])


@settings(max_examples=200, deadline=None)
@given(st.lists(_tok, max_size=8), st.lists(_tok, max_size=8))
def test_token_f1_matches_bag_oracle(pred, gold):
    assert math.isclose(token_f1(" ".join(pred), [" ".join(gold)], False), _bag_f1(pred, gold), rel_tol=1e-12)


def test_token_f1_bag_oracle_200_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pred = list(rng.choice(list("abcde"), size=int(rng.integers(0, 7))))
        gold = list(rng.choice(list("abcde"), size=int(rng.integers(1, 7))))
        got = token_f1(" ".join(pred), [" ".join(gold)], False)
        assert math.isclose(got, _bag_f1(pred, gold), rel_tol=1e-12)
        assert Counter(pred) != Counter(gold) or got == 1.0


def _ex(qa_id, answers, impossible=False):
    return MrcExample(qa_id, "t", "ctx", "q", impossible, [Answer(a, 0) for a in answers])


def test_evaluate_predictions_hand_report():
    examples = [_ex("1", ["Hà Nội"]), _ex("2", ["Huế"]), _ex("3", ["cố đô Huế"]),
                _ex("4", [], True), _ex("5", [], True), _ex("6", ["a b"])]
    preds = {"1": "Hà Nội", "2": "", "3": "Huế", "4": "", "5": "Huế", "6": "b a"}
    report = evaluate_predictions(preds, examples)
    # EM: 1,0,0,1,0,0 ; F1: 1,0,0.5,1,0,1
    assert report.exact_match == pytest.approx(100 * 2 / 6)
    assert report.f1 == pytest.approx(100 * 3.5 / 6)
    assert report.total == 6
    assert report.has_answer == {"exact_match": 25.0, "f1": pytest.approx(62.5), "total": 4}
    assert report.no_answer == {"exact_match": 50.0, "f1": 50.0, "total": 2}
    assert report.per_question["3"] == {"exact_match": 0, "f1": 0.5}


def test_evaluate_predictions_id_mismatch():
    examples = [_ex("1", ["x"]), _ex("2", ["y"])]
    with pytest.raises(PredictionMismatchError) as err:
        evaluate_predictions({"1": "x", "3": "z"}, examples)
    assert err.value.missing == ["2"] and err.value.extra == ["3"]


def test_classifier_metrics_examples():
    assert classifier_metrics([1, 1, 0, 0], [1, 0, 0, 1]) == (50.0, 50.0)
    assert classifier_metrics([0, 0], [0, 0]) == (100.0, 100.0)
    assert classifier_metrics([1, 1, 1], [1, 1, 0]) == pytest.approx((200 / 3, 80.0))
    with pytest.raises(InputError):
        classifier_metrics([1], [1, 0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30))
def test_accuracy_complement(pairs):
    pred, gold = zip(*pairs)
    acc, _ = classifier_metrics(pred, gold)
    flipped, _ = classifier_metrics([not p for p in pred], gold)
    assert math.isclose(acc + flipped, 100.0)


def _t_density(x, df):
    logc = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(logc - (df + 1) / 2 * math.log1p(x * x / df))


def _quad_p(t, df):
    tail, _ = integrate.quad(_t_density, abs(t), np.inf, args=(df,), epsabs=1e-13, epsrel=1e-12)
    return 2 * tail


def test_paired_t_test_reference_example():
    res = paired_t_test([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert res.t == pytest.approx(3.4641016, abs=1e-6) and res.df == 2
    assert abs(res.p - _quad_p(res.t, 2)) < 1e-3
    assert res.p == pytest.approx(0.0742, abs=1e-4)


@pytest.mark.parametrize("seed", range(8))
def test_t_p_value_matches_integration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    a, b = rng.normal(size=n), rng.normal(0.3, size=n)
    res = paired_t_test(a, b)
    assert abs(res.p - _quad_p(res.t, res.df)) < 1e-8


def test_t_test_symmetry_and_errors():
    a, b = [3.0, 1.0, 4.0, 1.0, 5.0], [2.0, 7.0, 1.0, 8.0, 2.0]
    fwd, back = paired_t_test(a, b), paired_t_test(b, a)
    assert fwd.t == -back.t and fwd.p == back.p
    with pytest.raises(NumericDomainError):
        paired_t_test([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])
    with pytest.raises(InputError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(InputError):
        paired_t_test([1.0, 2.0], [2.0])


def test_p_value_monotone_in_t():
    ps = [student_t_two_sided_p(t, 5) for t in np.linspace(0, 10, 41)]
    assert ps[0] == pytest.approx(1.0) and all(b < a for a, b in zip(ps, ps[1:]))


def test_incomplete_beta_edges():
    assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
    assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
    # I_x(1, 1) = x
    assert regularized_incomplete_beta(1.0, 1.0, 0.3) == pytest.approx(0.3, abs=1e-14)
