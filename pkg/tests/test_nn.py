import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from semreader.errors import ConfigurationError, ContractError, DimensionError, NumericDomainError
from semreader.nn import tensor as T
from semreader.nn.layers import GRU, BiGRU, Conv1d, Linear, MultiHeadSelfAttention
from semreader.nn.optim import AdamW, OptimizerConfig, average_gradients
from semreader.nn.tensor import Tensor, detect_anomaly, no_grad


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_matmul_identity_and_hand_values():
    m = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(T.matmul(Tensor(np.eye(3)), Tensor(m)).data, m)
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    assert out.data.tolist() == [[17.0], [39.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_softmax_symmetric_and_rows_sum_to_one():
    assert np.allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    x = np.random.default_rng(0).normal(size=(5, 7)) * 30
    assert np.all(np.abs(T.softmax(Tensor(x)).data.sum(-1) - 1.0) < 1e-12)


def test_softmax_and_layer_norm_reject_non_finite():
    with pytest.raises(NumericDomainError):
        T.softmax(Tensor([1.0, np.nan]))
    with pytest.raises(NumericDomainError):
        T.layer_norm(Tensor([[1.0, np.inf, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 6), elements=st.floats(-1e3, 1e3)))
def test_layer_norm_rows_centered(x):
    for row in x:
        if np.ptp(row) < 1e-3:
            return
    y = T.layer_norm(Tensor(x)).data
    assert np.all(np.abs(y.mean(-1)) < 1e-9)
    assert np.allclose(y.var(-1), 1.0, atol=1e-6)


def test_embedding_lookup_and_errors():
    table = np.arange(6.0).reshape(3, 2)
    assert T.embedding(Tensor(table), [2, 0]).data.tolist() == [[4.0, 5.0], [0.0, 1.0]]
    assert T.embedding(Tensor(table), np.zeros(0, dtype=int)).shape == (0, 2)
    with pytest.raises(IndexError, match="7"):
        T.embedding(Tensor(table), [0, 7])


def test_embedding_repeated_id_accumulates():
    table = leaf(np.zeros((3, 2)))
    g = np.array([[1.0, 2.0], [3.0, 4.0]])
    T.embedding(table, [1, 1]).backward(g)
    assert table.grad.tolist() == [[0, 0], [4.0, 6.0], [0, 0]]


def test_embedding_gradient_mass_conserved():
    rng = np.random.default_rng(3)
    table = leaf(rng.normal(size=(5, 3)))
    ids = rng.integers(0, 5, size=(4, 6))
    g = rng.normal(size=(4, 6, 3))
    T.embedding(table, ids).backward(g)
    assert math.isclose(table.grad.sum(), g.sum(), rel_tol=1e-12)


def test_conv1d_examples():
    x = Tensor(np.array([[1.0], [2.0], [3.0]]))
    assert T.conv1d(x, Tensor(np.ones((3, 1, 1)))).data.ravel().tolist() == [3.0, 6.0, 5.0]
    y = np.random.default_rng(1).normal(size=(4, 3))
    assert np.array_equal(T.conv1d(Tensor(y), Tensor(np.eye(3)[None])).data, y)
    assert not T.conv1d(Tensor(np.zeros((4, 3))), Tensor(np.ones((3, 3, 2)))).data.any()
    with pytest.raises(ConfigurationError):
        T.conv1d(x, Tensor(np.ones((2, 1, 1))))


def test_span_max_routes_gradient_to_argmax():
    x = leaf([[[1.0, -1.0], [0.0, 5.0], [2.0, 2.0]]])
    out = T.span_max(x, [[[0, 1], [2, 0]]], [[[True, True], [True, False]]])
    assert out.data.tolist() == [[[1.0, 5.0], [2.0, 2.0]]]
    out.backward(np.ones((1, 2, 2)))
    assert x.grad.tolist() == [[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]]


def _numpy_gru(x, W, U, b, reverse=False):
    """Plain-loop reference GRU over a single sequence."""
    h = U.shape[0]
    state = np.zeros(h)
    out = np.zeros((x.shape[0], h))
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    steps = range(x.shape[0] - 1, -1, -1) if reverse else range(x.shape[0])
    for t in steps:
        r = sig(x[t] @ W[:, :h] + state @ U[:, :h] + b[:h])
        z = sig(x[t] @ W[:, h:2 * h] + state @ U[:, h:2 * h] + b[h:2 * h])
        cand = np.tanh(x[t] @ W[:, 2 * h:] + (r * state) @ U[:, 2 * h:] + b[2 * h:])
        state = (1 - z) * state + z * cand
        out[t] = state
    return out


def test_gru_matches_reference_loop():
    rng = np.random.default_rng(0)
    gru = GRU(3, 4, rng)
    x = rng.normal(size=(5, 3))
    for reverse in (False, True):
        got = gru(Tensor(x[None]), reverse=reverse).data[0]
        want = _numpy_gru(x, gru.W.data, gru.U.data, gru.b.data, reverse)
        assert np.allclose(got, want, atol=1e-13)


def test_bigru_zero_parameters_give_zero_states():
    bigru = BiGRU(3, 2, np.random.default_rng(0))
    for p in bigru.parameters():
        p.data[...] = 0.0
    out = bigru(Tensor(np.random.default_rng(1).normal(size=(6, 3))))
    assert out.shape == (6, 4)
    assert not out.data.any()


def test_bigru_reverse_symmetry_and_length_one():
    rng = np.random.default_rng(2)
    bigru = BiGRU(3, 4, rng)
    bigru.backward_cell.W.data = bigru.forward_cell.W.data.copy()
    bigru.backward_cell.U.data = bigru.forward_cell.U.data.copy()
    bigru.backward_cell.b.data = bigru.forward_cell.b.data.copy()
    x = rng.normal(size=(5, 3))
    out = bigru(Tensor(x)).data
    fwd_on_reversed = bigru.forward_cell(Tensor(x[::-1].copy()[None])).data[0]
    assert np.allclose(out[:, 4:], fwd_on_reversed[::-1], atol=1e-14)
    single = bigru(Tensor(x[:1])).data
    assert np.allclose(single[0, :4], single[0, 4:])


def test_gru_mask_carries_state_over_padding():
    rng = np.random.default_rng(4)
    gru = GRU(2, 3, rng)
    x = rng.normal(size=(1, 5, 2))
    mask = np.array([[True, True, True, False, False]])
    out = gru(Tensor(x), mask).data
    assert np.array_equal(out[0, 3], out[0, 2]) and np.array_equal(out[0, 4], out[0, 2])
    back = gru(Tensor(x), mask, reverse=True).data
    short = gru(Tensor(x[:, :3]), reverse=True).data
    assert np.allclose(back[0, :3], short[0], atol=1e-14)


def test_attention_head_divisibility():
    with pytest.raises(ConfigurationError):
        MultiHeadSelfAttention(6, 4, np.random.default_rng(0))


def test_attention_uniform_over_unmasked_when_keys_equal():
    rng = np.random.default_rng(0)
    att = MultiHeadSelfAttention(4, 2, rng)
    x = np.tile(rng.normal(size=4), (5, 1))
    mask = np.array([True, True, True, False, False])
    v = att.value(Tensor(x)).data
    out = att(Tensor(x), mask).data
    want = att.output(Tensor(v[:3].mean(0, keepdims=True))).data
    assert np.allclose(out, np.repeat(want, 5, 0), atol=1e-12)


def test_attention_single_token_identity_projections():
    att = MultiHeadSelfAttention(4, 2, np.random.default_rng(0))
    for lin in (att.query, att.key, att.value, att.output):
        lin.weight.data = np.eye(4)
        lin.bias.data = np.zeros(4)
    x = np.array([[0.3, -1.0, 2.0, 0.5]])
    assert np.allclose(att(Tensor(x)).data, x)


def test_attention_masked_content_is_invisible():
    rng = np.random.default_rng(5)
    att = MultiHeadSelfAttention(4, 2, rng)
    x = rng.normal(size=(6, 4))
    mask = np.array([True, True, False, True, False, True])
    y = x.copy()
    y[~mask] = rng.normal(size=(2, 4)) * 100
    a, b = att(Tensor(x), mask).data, att(Tensor(y), mask).data
    assert np.array_equal(a[mask], b[mask])


def test_cross_entropy_values():
    assert math.isclose(T.cross_entropy(Tensor([0.0, 0.0]), 0).item(), math.log(2), rel_tol=1e-15)
    # -log sigmoid(20)
    assert math.isclose(T.cross_entropy(Tensor([10.0, -10.0]), 0).item(), math.log1p(math.exp(-20)), rel_tol=1e-9)
    assert T.cross_entropy(Tensor([300.0, -300.0]), 0).item() < 1e-200
    with pytest.raises(IndexError):
        T.cross_entropy(Tensor([0.0, 1.0]), 2)


def test_cross_entropy_ignore_index_and_batch_mean():
    logits = np.array([[2.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    loss = T.cross_entropy(Tensor(logits), [0, 1, -100]).item()
    ref = -np.mean([np.log(np.exp(2) / (np.exp(2) + 1)), np.log(np.exp(1) / (np.exp(1) + 1))])
    assert math.isclose(loss, ref, rel_tol=1e-14)


def test_backward_basic_calculus():
    x = leaf(3.0)
    (x * x).backward()
    assert x.grad == 6.0
    v = leaf([0.2, -1.0, 3.0])
    T.softmax(v).sum().backward()
    assert np.all(np.abs(v.grad) < 1e-15)


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        (leaf([1.0, 2.0]) * 2).backward()


def test_backward_deterministic_and_unreachable_zero():
    rng = np.random.default_rng(0)
    a, b, unused = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2))), leaf(np.ones(2))
    grads = []
    for _ in range(2):
        a.grad = b.grad = unused.grad = None
        T.tanh(a @ b).sum().backward()
        grads.append((a.grad.copy(), b.grad.copy()))
    assert np.array_equal(grads[0][0], grads[1][0]) and np.array_equal(grads[0][1], grads[1][1])
    assert unused.grad is None or not unused.grad.any()


def test_no_grad_records_nothing():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = (x * 3).sum()
    assert not y.requires_grad


def test_detect_anomaly_names_op():
    with np.errstate(invalid="ignore"), detect_anomaly(), pytest.raises(NumericDomainError, match="log"):
        T.log(leaf([-1.0]))


def test_adamw_hand_step():
    p = leaf([1.0])
    p.grad = np.array([1.0])
    AdamW({"p": p}, OptimizerConfig(learning_rate=0.1)).step()
    assert math.isclose(p.data[0], 0.9, rel_tol=1e-7)


def test_adamw_decay_only_and_null_steps():
    p = leaf([2.0, -4.0])
    p.grad = np.zeros(2)
    AdamW({"p": p}, OptimizerConfig(learning_rate=0.1, weight_decay=0.5)).step()
    assert np.allclose(p.data, [2.0 * 0.95, -4.0 * 0.95], rtol=1e-15)

    q = leaf([1.5, 2.5])
    q.grad = np.array([3.0, -1.0])
    AdamW({"q": q}, OptimizerConfig(learning_rate=0.0, weight_decay=0.3)).step()
    assert q.data.tolist() == [1.5, 2.5]

    r = leaf([1.5, 2.5])
    r.grad = np.zeros(2)
    AdamW({"r": r}, OptimizerConfig(learning_rate=0.1)).step()
    assert r.data.tolist() == [1.5, 2.5]


def test_adamw_config_bounds():
    with pytest.raises(ConfigurationError):
        OptimizerConfig(beta1=1.0)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(gradient_accumulation_steps=0)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(learning_rate=-1e-3)


def test_gradient_accumulation_equals_full_batch_mean():
    rng = np.random.default_rng(7)
    lin = Linear(3, 2, rng)
    x = rng.normal(size=(8, 3))
    y = rng.integers(0, 2, size=8)
    T.cross_entropy(lin(Tensor(x)), y).backward()
    full = {k: p.grad.copy() for k, p in lin.named_parameters().items()}
    lin.zero_grad()
    for part in np.split(np.arange(8), 4):
        T.cross_entropy(lin(Tensor(x[part])), y[part]).backward()
    average_gradients(lin.parameters(), 4)
    for k, p in lin.named_parameters().items():
        assert np.allclose(p.grad, full[k], atol=1e-15)


def test_module_state_dict_round_trip():
    rng = np.random.default_rng(0)
    conv = Conv1d(3, 2, 3, rng)
    other = Conv1d(3, 2, 3, np.random.default_rng(9))
    other.load_state_dict(conv.state_dict())
    assert np.array_equal(other.kernel.data, conv.kernel.data)
