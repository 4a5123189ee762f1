import numpy as np
import pytest

from sssgen import tensor as T
from sssgen.lstm import LstmCellParams, LstmParams, bilstm_forward, context_encode, lstm_step
from sssgen.tensor import grad_check


def sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_cell(cell, x_t, h_prev, c_prev):
    """Independent numpy recomputation of one cell step."""
    xh = np.concatenate([x_t, h_prev])
    i = sigmoid_np(xh @ cell.weights["i"].values + cell.biases["i"].values)
    f = sigmoid_np(xh @ cell.weights["f"].values + cell.biases["f"].values)
    o = sigmoid_np(xh @ cell.weights["o"].values + cell.biases["o"].values)
    g = np.tanh(xh @ cell.weights["g"].values + cell.biases["g"].values)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


class StubProvider:
    def __init__(self, table):
        self.table = {tok: np.asarray(vec, dtype=float) for tok, vec in table.items()}

    def embed_tokens(self, tokens):
        return T.constant(np.stack([self.table[t] for t in tokens]))


def test_single_step_equals_cell_on_zero_state():
    rng = np.random.default_rng(0)
    params = LstmParams.init(rng, 3, 4)
    x = rng.normal(size=(1, 3))
    out = bilstm_forward(T.constant(x), params).values
    zeros = np.zeros(4)
    h_f, _ = np_cell(params.fwd, x[0], zeros, zeros)
    h_b, _ = np_cell(params.bwd, x[0], zeros, zeros)
    assert out.shape == (1, 8)
    assert np.allclose(out[0, :4], h_f, atol=1e-12)
    assert np.allclose(out[0, 4:], h_b, atol=1e-12)


def test_zero_parameters_give_zero_states():
    rng = np.random.default_rng(1)
    params = LstmParams.init(rng, 2, 3)
    for cell in (params.fwd, params.bwd):
        for gate in cell.GATES:
            cell.weights[gate] = T.parameter(np.zeros((5, 3)))
            cell.biases[gate] = T.parameter(np.zeros(3))
    out = bilstm_forward(T.constant(np.random.default_rng(2).normal(size=(4, 2))), params)
    assert np.array_equal(out.values, np.zeros((4, 6)))


def test_directional_causality():
    rng = np.random.default_rng(3)
    params = LstmParams.init(rng, 3, 5)
    x = rng.normal(size=(3, 3))
    base = bilstm_forward(T.constant(x), params).values
    h = params.hidden

    bumped_last = x.copy()
    bumped_last[2] += 0.7
    out = bilstm_forward(T.constant(bumped_last), params).values
    # forward half at positions 0..1 must not see position 2
    assert np.array_equal(out[:2, :h], base[:2, :h])
    assert np.max(np.abs(out[2, :h] - base[2, :h])) > 1e-8

    bumped_first = x.copy()
    bumped_first[0] += 0.7
    out = bilstm_forward(T.constant(bumped_first), params).values
    # backward half at positions 1..2 must not see position 0
    assert np.array_equal(out[1:, h:], base[1:, h:])
    assert np.max(np.abs(out[0, h:] - base[0, h:])) > 1e-8


def test_hidden_states_are_bounded():
    rng = np.random.default_rng(4)
    params = LstmParams.init(rng, 2, 4)
    x = rng.normal(size=(30, 2)) * 50.0
    out = bilstm_forward(T.constant(x), params).values
    assert np.all(out > -1.0)
    assert np.all(out < 1.0)


def test_single_token_context():
    rng = np.random.default_rng(5)
    cell = LstmCellParams.init(rng, 3, 4)
    provider = StubProvider({"hello": rng.normal(size=3)})
    states = context_encode(["hello"], provider, cell).values
    assert states.shape == (1, 4)
    want, _ = np_cell(cell, provider.table["hello"], np.zeros(4), np.zeros(4))
    assert np.allclose(states[0], want, atol=1e-12)


def test_identical_prefixes_share_prefix_states():
    rng = np.random.default_rng(6)
    cell = LstmCellParams.init(rng, 2, 3)
    table = {t: rng.normal(size=2) for t in ("a", "b", "c", "d")}
    provider = StubProvider(table)
    s1 = context_encode(["a", "b", "c"], provider, cell).values
    s2 = context_encode(["a", "b", "d"], provider, cell).values
    assert np.array_equal(s1[:2], s2[:2])


def test_empty_context_is_an_error():
    cell = LstmCellParams.init(np.random.default_rng(7), 2, 3)
    with pytest.raises(ValueError, match="start-of-chat"):
        context_encode([], StubProvider({}), cell)


def test_context_encode_gradients():
    rng = np.random.default_rng(8)
    cell = LstmCellParams.init(rng, 2, 3)
    table = {t: rng.normal(size=2) for t in ("a", "b")}
    provider = StubProvider(table)
    weights = T.constant(rng.normal(size=(2, 3)))
    named = {
        "w_i": cell.weights["i"],
        "w_g": cell.weights["g"],
        "b_f": cell.biases["f"],
    }

    def f(plist):
        cell.weights["i"], cell.weights["g"], cell.biases["f"] = plist
        states = context_encode(["a", "b"], provider, cell)
        return T.sum_rows(T.sum_rows(T.mul(states, weights)))

    report = grad_check(f, named, step=1e-5, tol=1e-3)
    assert report.passed, report.per_param


def test_bilstm_gradients():
    rng = np.random.default_rng(9)
    params = LstmParams.init(rng, 2, 3)
    x = T.parameter(rng.normal(size=(3, 2)))
    weights = T.constant(rng.normal(size=(3, 6)))
    named = {
        "x": x,
        "fwd_w_o": params.fwd.weights["o"],
        "bwd_w_g": params.bwd.weights["g"],
        "bwd_b_i": params.bwd.biases["i"],
    }

    def f(plist):
        xx, params.fwd.weights["o"], params.bwd.weights["g"], params.bwd.biases["i"] = plist
        out = bilstm_forward(xx, params)
        return T.sum_rows(T.sum_rows(T.mul(out, weights)))

    report = grad_check(f, named, step=1e-5, tol=1e-3)
    assert report.passed, report.per_param
