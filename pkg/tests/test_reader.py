import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semreader.data import featurize, gen_fixture, iterate_batches
from semreader.encoder import EncoderConfig
from semreader.errors import ConfigurationError, ContractError, DataError, NumericDomainError
from semreader.metrics import exact_match, token_f1
from semreader.reader import (
    IntensiveOutput,
    ReaderTrainConfig,
    SketchyOutput,
    VerifierInput,
    VerifierParams,
    best_span,
    build_model,
    fit,
    load_reader,
    predict,
    rear_verify,
    save_reader,
    tune_verifier,
)
from semreader.tokenizer import build_vocab

TINY = dict(layer_count=1, head_count=2, model_dim=8, feed_forward_dim=8, max_position=32)


@pytest.fixture(scope="module")
def tiny():
    examples, ann = gen_fixture(size=6, seed=3, vocab_size=20, context_min=4, context_max=6)
    vocab = build_vocab([e.context for e in examples] + [e.question for e in examples])
    return examples, ann, vocab, EncoderConfig(vocab_size=len(vocab), **TINY)


def test_score_ext_examples():
    assert SketchyOutput((1.0, 3.5)).score_ext == 2.5
    assert SketchyOutput((0.7, 0.7)).score_ext == 0.0


def test_zero_head_gives_zero_logits(tiny):
    examples, ann, vocab, enc = tiny
    model = build_model("sketchy", enc)
    model.head.weight.data[...] = 0.0
    model.head.bias.data[...] = 0.0
    feats = featurize(examples, vocab, 32, 64, ann)
    logits = model(next(iterate_batches(feats, 6))).data
    assert not logits.any()


def test_best_span_examples():
    assert best_span([0.0, 2.0], [0.0, 1.0], [False, True], 30) == (1, 1)
    start = [0.0, 1.0, 3.0, 2.0]
    end = [0.0, 0.0, 1.0, 5.0]
    valid = [False, True, True, True]
    i, j = best_span(start, end, valid, 30)
    assert (i, j) == (2, 3)
    out = IntensiveOutput(np.array(start), np.array(end), (i, j), start[i] + end[j], start[0] + end[0])
    assert out.score_has == 8.0 and out.score_diff == -8.0
    # a single-token cap keeps the answer on the diagonal
    assert best_span(start, end, valid, 1) == (3, 3)
    assert best_span(np.zeros(5), np.zeros(5), [False, True, True, True, False], 30) == (1, 1)
    with pytest.raises(ContractError):
        best_span([1.0], [1.0], [False], 30)


def _brute_best_span(start, end, valid, max_len):
    best, arg = -math.inf, None
    for i, j in itertools.product(range(len(start)), repeat=2):
        if valid[i] and valid[j] and i <= j < i + max_len and start[i] + end[j] > best:
            best, arg = start[i] + end[j], (i, j)
    return arg


@pytest.mark.parametrize("seed", range(100))
def test_best_span_matches_quadratic_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 16))
    start, end = rng.normal(size=n), rng.normal(size=n)
    if seed % 4 == 0:  # ties on a coarse grid
        start, end = np.round(start), np.round(end)
    valid = rng.random(n) < 0.7
    valid[int(rng.integers(n))] = True
    max_len = int(rng.integers(1, 6))
    assert best_span(start, end, valid, max_len) == _brute_best_span(start, end, valid, max_len)


def test_rear_verify_examples():
    assert rear_verify(2.0, -1.0, 1.0, 1.0, 0.0) == (1.0, True)
    assert rear_verify(-4.0, 2.0, 0.5, 0.5, 0.0) == (-1.0, False)
    assert rear_verify(1.0, 1.0, 0.5, 0.5, 1.0) == (1.0, False)  # the threshold itself is answerable
    with pytest.raises(NumericDomainError):
        rear_verify(float("nan"), 0.0, 1.0, 1.0, 0.0)
    with pytest.raises(NumericDomainError):
        rear_verify(0.0, float("inf"), 1.0, 1.0, 0.0)


_finite = st.floats(-1e3, 1e3, allow_nan=False)
_weight = st.floats(0.0, 10.0, allow_nan=False)


@settings(max_examples=1000, deadline=None)
@given(_finite, _finite, _weight, _weight, _finite, st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_rear_verify_monotone(diff, ext, b1, b2, delta, bump_diff, bump_ext):
    _, before = rear_verify(diff, ext, b1, b2, delta)
    _, after = rear_verify(diff + bump_diff, ext + bump_ext, b1, b2, delta)
    assert after or not before
    _, higher = rear_verify(diff, ext, b1, b2, delta + bump_diff)
    assert before or not higher


def _items(seed, n=12):
    rng = np.random.default_rng(seed)
    items = []
    for k in range(n):
        impossible = bool(rng.random() < 0.5)
        golds = [] if impossible else [f"từ {k}"]
        text = f"từ {k}" if rng.random() < 0.6 else f"khác {k}"
        items.append(VerifierInput(f"q{k}", float(rng.normal(scale=3)), float(rng.normal(scale=3)),
                                   text, golds, impossible))
    return items


def _exhaustive(items, betas, deltas):
    scored = []
    for order, ((b1, b2), d) in enumerate(itertools.product(betas, deltas)):
        em = f1 = 0.0
        for it in items:
            v = b1 * it.score_diff + b2 * it.score_ext
            pred = "" if v > d else it.span_text
            em += exact_match(pred, it.golds, it.is_impossible)
            f1 += token_f1(pred, it.golds, it.is_impossible)
        scored.append(((100 * f1 / len(items), 100 * em / len(items), -d, -order), (b1, b2, d)))
    return max(scored)[1]


@pytest.mark.parametrize("seed", range(10))
def test_tune_verifier_equals_exhaustive_reevaluation(seed):
    items = _items(seed)
    betas = [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0), (0.3, 0.7)]
    deltas = [-3.0, -1.0, 0.0, 0.5, 2.0, 4.0]
    best = tune_verifier(items, betas, deltas)
    assert (best.beta1, best.beta2, best.delta) == _exhaustive(items, betas, deltas)


def test_tune_verifier_singleton_and_separable():
    items = _items(0)
    one = tune_verifier(items, [(0.5, 0.5)], [1.0])
    assert (one.beta1, one.beta2, one.delta) == (0.5, 0.5, 1.0)
    sep = [VerifierInput("a", 5.0, 5.0, "x", [], True), VerifierInput("b", -5.0, -5.0, "y", ["y"], False)]
    best = tune_verifier(sep, [(0.5, 0.5)], [-6.0, -1.0, 0.0, 1.0, 6.0])
    assert best.delta == -1.0 and best.f1 == 100.0 and best.exact_match == 100.0
    with pytest.raises(ConfigurationError):
        tune_verifier(items, [], [0.0])
    with pytest.raises(ContractError):
        tune_verifier([], [(0.5, 0.5)], [0.0])


def test_train_config_defaults():
    s, i = ReaderTrainConfig.sketchy(), ReaderTrainConfig.intensive()
    assert (s.learning_rate, s.batch_size, s.gradient_accumulation_steps) == (5e-6, 64, 8)
    assert (i.learning_rate, i.batch_size) == (2e-5, 64)
    assert s.max_query_length == i.max_query_length == 64
    with pytest.raises(ConfigurationError):
        ReaderTrainConfig(kind="other")


def test_single_example_loss_decreases(tiny):
    examples, _, vocab, enc = tiny
    feats = featurize(examples[:1], vocab, 32, 64)
    model = build_model("intensive", enc, seed=1)
    cfg = ReaderTrainConfig.intensive(learning_rate=1e-2, batch_size=1, epochs=50, weight_decay=0.0,
                                      max_seq_length=32)
    result = fit(model, feats, cfg)
    assert result.steps == 50
    assert all(b <= a + 1e-9 for a, b in zip(result.losses, result.losses[1:]))
    assert result.losses[-1] < 0.1 * result.losses[0]


def test_zero_epochs_leaves_parameters(tiny):
    examples, ann, vocab, enc = tiny
    feats = featurize(examples, vocab, 32, 64, ann)
    model = build_model("sketchy", enc)
    before = {k: v.data.copy() for k, v in model.named_parameters().items()}
    assert fit(model, feats, ReaderTrainConfig.sketchy(epochs=0)).steps == 0
    assert all(np.array_equal(before[k], v.data) for k, v in model.named_parameters().items())


def test_sketchy_requires_annotations(tiny):
    examples, _, vocab, enc = tiny
    with pytest.raises(DataError):
        fit(build_model("sketchy", enc), featurize(examples, vocab, 32, 64), ReaderTrainConfig.sketchy())


def test_predict_total_and_verdicts_consistent(tiny):
    examples, ann, vocab, enc = tiny
    sk, it = build_model("sketchy", enc, seed=1), build_model("intensive", enc, seed=2)
    verdicts = predict(examples, vocab, sk, it, VerifierParams(0.5, 0.5, 0.0), ann, max_seq_length=32)
    assert [v.qa_id for v in verdicts] == [e.qa_id for e in examples]
    for v in verdicts:
        assert v.v == pytest.approx(0.5 * v.score_diff + 0.5 * v.score_ext, abs=1e-12)
        assert (v.answer_text == "") == (v.v > v.delta)
    # zero weights with a negative threshold reject everything
    silent = predict(examples, vocab, sk, it, VerifierParams(0.0, 0.0, -1.0), ann, max_seq_length=32)
    assert all(v.answer_text == "" for v in silent)
    # with delta above every score, answers are context substrings
    loud = predict(examples, vocab, sk, it, VerifierParams(0.0, 0.0, 1.0), ann, max_seq_length=32)
    for v, ex in zip(loud, examples):
        assert v.answer_text and v.answer_text in ex.context


def test_reader_checkpoint_round_trip(tmp_path, tiny):
    examples, ann, vocab, enc = tiny
    for kind in ("sketchy", "intensive"):
        model = build_model(kind, enc, seed=4)
        save_reader(tmp_path / f"{kind}.ckpt", model)
        again = load_reader(tmp_path / f"{kind}.ckpt")
        batch = next(iterate_batches(featurize(examples, vocab, 32, 64, ann), 6))
        a, b = model.eval()(batch), again(batch)
        a, b = (a,) if not isinstance(a, tuple) else a, (b,) if not isinstance(b, tuple) else b
        for x, y in zip(a, b):
            assert np.array_equal(x.data, y.data)
