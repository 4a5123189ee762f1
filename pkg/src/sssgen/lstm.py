"""LSTM sequence encoders: a bidirectional pass over the document and a
unidirectional pass over the conversation context.

Cells are the standard formulation with concatenated [x; h] inputs and
zero initial states. Hidden states stay strictly inside (-1, 1) because
h = o * tanh(c) with a sigmoid output gate.
"""

import numpy as np

from . import tensor as T
from .gcn import glorot


class LstmCellParams:
    """One direction's gate weights; each matrix is (input+hidden, hidden)."""

    GATES = ("i", "f", "o", "g")

    def __init__(self, weights, biases, hidden):
        self.weights = weights  # gate -> Tensor (input+hidden, hidden)
        self.biases = biases  # gate -> Tensor (hidden,)
        self.hidden = hidden

    @classmethod
    def init(cls, rng, input_size, hidden):
        weights = {}
        biases = {}
        for gate in cls.GATES:
            weights[gate] = T.parameter(glorot(rng, (input_size + hidden, hidden)))
            # forget gate starts open so early gradients reach back in time
            init_b = np.ones(hidden) if gate == "f" else np.zeros(hidden)
            biases[gate] = T.parameter(init_b)
        return cls(weights, biases, hidden)

    def named_tensors(self, prefix):
        for gate in self.GATES:
            yield f"{prefix}.w_{gate}", self.weights[gate]
        for gate in self.GATES:
            yield f"{prefix}.b_{gate}", self.biases[gate]


class LstmParams:
    """Bidirectional pair; both directions share their shapes."""

    def __init__(self, fwd, bwd):
        if fwd.hidden != bwd.hidden:
            raise ValueError("direction hidden sizes differ")
        self.fwd = fwd
        self.bwd = bwd
        self.hidden = fwd.hidden

    @classmethod
    def init(cls, rng, input_size, hidden):
        return cls(
            LstmCellParams.init(rng, input_size, hidden),
            LstmCellParams.init(rng, input_size, hidden),
        )

    def named_tensors(self, prefix):
        yield from self.fwd.named_tensors(f"{prefix}.fwd")
        yield from self.bwd.named_tensors(f"{prefix}.bwd")


def lstm_step(cell, x_t, h_prev, c_prev):
    """One cell update; x_t is (d,), states are (hidden,)."""
    xh = T.concat([x_t, h_prev])
    i = T.sigmoid(T.add(T.matmul(xh, cell.weights["i"]), cell.biases["i"]))
    f = T.sigmoid(T.add(T.matmul(xh, cell.weights["f"]), cell.biases["f"]))
    o = T.sigmoid(T.add(T.matmul(xh, cell.weights["o"]), cell.biases["o"]))
    g = T.tanh(T.add(T.matmul(xh, cell.weights["g"]), cell.biases["g"]))
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def _run_direction(cell, rows):
    h = T.zeros(cell.hidden)
    c = T.zeros(cell.hidden)
    states = []
    for x_t in rows:
        h, c = lstm_step(cell, x_t, h, c)
        states.append(h)
    return states


def _rows(x):
    n = x.shape[0]
    return [T.gather_rows(x, t) for t in range(n)]


def bilstm_forward(x, params):
    """Bidirectional encoding of x (n, d) -> (n, 2*hidden)."""
    if x.values.ndim != 2 or x.shape[0] < 1:
        raise T.ShapeMismatch(f"bilstm_forward needs a nonempty (n, d) input, got {x.shape}")
    rows = _rows(x)
    forward = _run_direction(params.fwd, rows)
    backward = list(reversed(_run_direction(params.bwd, list(reversed(rows)))))
    return T.stack_rows([T.concat([f, b]) for f, b in zip(forward, backward)])


def context_encode(context_tokens, provider, cell):
    """Unidirectional states over the concatenated context utterances."""
    if len(context_tokens) == 0:
        raise ValueError("context is empty; supply a start-of-chat placeholder token")
    x = provider.embed_tokens(context_tokens)
    return T.stack_rows(_run_direction(cell, _rows(x)))
