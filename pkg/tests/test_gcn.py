import json

import numpy as np
import pytest

from sssgen import tensor as T
from sssgen.gcn import GcnLayerParams, MgcnParams, edge_gate, gcn_layer, mgcn_forward, resolve_views
from sssgen.graphs import LabelSpace, parse_record
from sssgen.tensor import Tape, grad_check


def sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


def record_from_edges(n, dep=(), coref=(), ent=()):
    obj = {
        "doc_tokens": [f"t{i}" for i in range(n)],
        "context_tokens": ["c"],
        "response_tokens": ["t0"],
        "graphs": {"dep": [list(e) for e in dep],
                   "coref": [list(e) for e in coref],
                   "ent": [list(e) for e in ent]},
    }
    return parse_record(json.dumps(obj))


def np_params(params, kind):
    """Pull one kind's parameter arrays out for the numpy oracle."""
    return {
        "w_in": params.w_in.values,
        "w_out": params.w_out.values,
        "gw_in": params.gate_w_in.values[:, 0],
        "gw_out": params.gate_w_out.values[:, 0],
        "b_in": params.bias[(kind, "in")].values,
        "b_out": params.bias[(kind, "out")].values,
        "gb_in": params.gate_bias[(kind, "in")].values[:, 0],
        "gb_out": params.gate_bias[(kind, "out")].values[:, 0],
    }


def dense_oracle_layer(h, edges, p):
    """Dense-adjacency reference: gated adjacency per direction times the
    transformed node matrix, plus per-edge gated biases."""
    n, m = h.shape
    a_in = np.zeros((n, n))
    a_out = np.zeros((n, n))
    bias_in = np.zeros((n, m))
    bias_out = np.zeros((n, m))
    for s, t, lab in edges:
        g = sigmoid_np(h[s] @ p["gw_in"] + p["gb_in"][lab])
        a_in[t, s] += g
        bias_in[t] += g * p["b_in"][lab]
        g2 = sigmoid_np(h[t] @ p["gw_out"] + p["gb_out"][lab])
        a_out[s, t] += g2
        bias_out[s] += g2 * p["b_out"][lab]
    return a_in @ (h @ p["w_in"]) + bias_in + a_out @ (h @ p["w_out"]) + bias_out


def dense_oracle_mgcn(h0, per_kind_edges, params, k):
    h = h0
    for hop in params.hops:
        total = h @ hop.w_self.values
        for kind, edges in per_kind_edges.items():
            total = total + dense_oracle_layer(h, edges, np_params(hop, kind))
        h = np.maximum(total, 0.0)
    return h


# ---------------------------------------------------------------------------
# edge gate


def label_space_for(record):
    return LabelSpace.build([record])


def test_edge_gate_at_zero():
    params = GcnLayerParams.init(np.random.default_rng(0), 4, {"dep": 2})
    g = edge_gate(T.constant(np.zeros(4)), "in", "dep", 0, params)
    assert g.item() == 0.5


def test_edge_gate_saturates():
    params = GcnLayerParams.init(np.random.default_rng(0), 4, {"dep": 2})
    table = params.gate_bias[("dep", "in")].values.copy()
    table[1, 0] = 20.0
    params.gate_bias[("dep", "in")] = T.parameter(table)
    g = edge_gate(T.constant(np.zeros(4)), "in", "dep", 1, params)
    assert abs(g.item() - 1.0) < 1e-8


def test_edge_gate_matches_scalar_formula():
    rng = np.random.default_rng(9)
    params = GcnLayerParams.init(rng, 6, {"dep": 3})
    for key in params.gate_bias:
        params.gate_bias[key] = T.parameter(rng.normal(size=(3, 1)))
    for direction in ("in", "out"):
        for lab in range(3):
            h_u = rng.normal(size=6)
            got = edge_gate(T.constant(h_u), direction, "dep", lab, params).item()
            gw = (params.gate_w_in if direction == "in" else params.gate_w_out).values[:, 0]
            want = sigmoid_np(h_u @ gw + params.gate_bias[("dep", direction)].values[lab, 0])
            assert abs(got - want) < 1e-12
            assert 0.0 < got < 1.0


def test_edge_gate_unknown_label_errors():
    params = GcnLayerParams.init(np.random.default_rng(0), 4, {"dep": 2})
    with pytest.raises(KeyError):
        edge_gate(T.constant(np.zeros(4)), "in", "dep", 5, params)


# ---------------------------------------------------------------------------
# single layer


def test_layer_with_no_edges_is_zero():
    params = GcnLayerParams.init(np.random.default_rng(1), 3, {"dep": 1})
    h = T.constant(np.random.default_rng(2).normal(size=(4, 3)))
    out = gcn_layer(h, [[], [], [], []], "dep", params)
    assert np.array_equal(out.values, np.zeros((4, 3)))


def test_layer_two_node_hand_computation():
    # one edge 0 -> 1; identity weights, zero biases, gates forced to 1
    m = 3
    params = GcnLayerParams.init(np.random.default_rng(3), m, {"dep": 1})
    params.w_in = T.parameter(np.eye(m))
    params.w_out = T.parameter(np.eye(m))
    params.gate_w_in = T.parameter(np.zeros((m, 1)))
    params.gate_w_out = T.parameter(np.zeros((m, 1)))
    params.gate_bias[("dep", "in")] = T.parameter(np.full((1, 1), 50.0))
    params.gate_bias[("dep", "out")] = T.parameter(np.full((1, 1), 50.0))
    h = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    views = [[(1, "out", 0)], [(0, "in", 0)]]
    out = gcn_layer(T.constant(h), views, "dep", params).values
    # node 1 receives h[0] through W_in, node 0 receives h[1] through W_out
    assert np.allclose(out[1], h[0], atol=1e-12)
    assert np.allclose(out[0], h[1], atol=1e-12)


def test_layer_matches_dense_oracle():
    rng = np.random.default_rng(11)
    record = record_from_edges(
        6,
        dep=[[0, 1, "a"], [1, 2, "b"], [2, 3, "a"], [5, 0, "c"], [3, 4, "b"], [0, 2, "a"]],
    )
    space = label_space_for(record)
    params = GcnLayerParams.init(rng, 5, {"dep": space.size("dep")})
    for key in params.bias:
        params.bias[key] = T.parameter(rng.normal(size=params.bias[key].shape) * 0.3)
    for key in params.gate_bias:
        params.gate_bias[key] = T.parameter(rng.normal(size=params.gate_bias[key].shape) * 0.3)
    h = rng.normal(size=(6, 5))
    views = resolve_views(record.graphs, space, ("dep",))["dep"]
    got = gcn_layer(T.constant(h), views, "dep", params).values
    edges = [
        (e.source, e.target, space.id_for("dep", record.graphs.label_string(e)))
        for e in record.graphs.edges["dep"]
    ]
    want = dense_oracle_layer(h, edges, np_params(params, "dep"))
    assert np.max(np.abs(got - want)) < 1e-9


def test_layer_permutation_invariance():
    rng = np.random.default_rng(13)
    record = record_from_edges(
        5, dep=[[0, 1, "a"], [2, 1, "b"], [3, 1, "a"], [4, 1, "c"], [1, 0, "b"]]
    )
    space = label_space_for(record)
    params = GcnLayerParams.init(rng, 4, {"dep": space.size("dep")})
    h = T.constant(rng.normal(size=(5, 4)))
    views = resolve_views(record.graphs, space, ("dep",))["dep"]
    base = gcn_layer(h, views, "dep", params).values
    shuffled = [list(entries) for entries in views]
    for entries in shuffled:
        rng.shuffle(entries)
    again = gcn_layer(h, shuffled, "dep", params).values
    assert np.max(np.abs(base - again)) < 1e-12


# ---------------------------------------------------------------------------
# multi-graph stack


def test_mgcn_self_only_path():
    rng = np.random.default_rng(17)
    record = record_from_edges(4)
    space = label_space_for(record)
    params = MgcnParams.init(rng, 3, {"dep": space.size("dep")}, k=1)
    params.hops[0].w_self = T.parameter(np.eye(3))
    h0 = rng.normal(size=(4, 3))
    out = mgcn_forward(T.constant(h0), record.graphs, 1, params, space, kinds=("dep",))
    assert np.allclose(out.values, np.maximum(h0, 0.0), atol=1e-15)


def reference_single_relation_gcn(h0, views, hop, kind):
    """Per-node loop over the neighborhood, identity activation, separate
    self transform applied by the caller's hop loop."""
    n, m = h0.shape
    out = np.zeros((n, m))
    for v, entries in enumerate(views):
        for u, direction, lab in entries:
            w = hop.w_in.values if direction == "in" else hop.w_out.values
            gw = (hop.gate_w_in if direction == "in" else hop.gate_w_out).values[:, 0]
            b = hop.bias[(kind, direction)].values[lab]
            gb = hop.gate_bias[(kind, direction)].values[lab, 0]
            gate = sigmoid_np(h0[u] @ gw + gb)
            out[v] += gate * (h0[u] @ w + b)
    return out


def test_mgcn_single_relation_matches_reference():
    rng = np.random.default_rng(19)
    record = record_from_edges(5, dep=[[0, 1, "a"], [1, 2, "b"], [3, 2, "a"], [4, 0, "a"]])
    space = label_space_for(record)
    params = MgcnParams.init(rng, 4, {"dep": space.size("dep")}, k=1)
    hop = params.hops[0]
    for key in hop.bias:
        hop.bias[key] = T.parameter(rng.normal(size=hop.bias[key].shape) * 0.2)
    h0 = rng.normal(size=(5, 4))
    views = resolve_views(record.graphs, space, ("dep",))["dep"]
    got = mgcn_forward(T.constant(h0), record.graphs, 1, params, space, kinds=("dep",)).values
    want = np.maximum(h0 @ hop.w_self.values + reference_single_relation_gcn(h0, views, hop, "dep"), 0.0)
    assert np.max(np.abs(got - want)) < 1e-12


def test_mgcn_receptive_field_is_k_hops():
    rng = np.random.default_rng(23)
    record = record_from_edges(4, dep=[[0, 1, "a"], [1, 2, "a"], [2, 3, "a"]])
    space = label_space_for(record)
    params = MgcnParams.init(rng, 3, {"dep": space.size("dep")}, k=2)
    h0 = rng.normal(size=(4, 3))

    def run(h):
        return mgcn_forward(T.constant(h), record.graphs, 2, params, space, kinds=("dep",)).values

    base = run(h0)
    two_away = h0.copy()
    two_away[2] += 0.5
    assert np.max(np.abs(run(two_away)[0] - base[0])) > 1e-8
    three_away = h0.copy()
    three_away[3] += 0.5
    assert np.max(np.abs(run(three_away)[0] - base[0])) < 1e-15


def test_mgcn_matches_dense_oracle_on_random_multigraphs():
    rng = np.random.default_rng(29)
    for trial in range(10):
        n = int(rng.integers(3, 9))
        kinds = ("dep", "coref", "ent")[: int(rng.integers(1, 4))]
        edge_lists = {}
        for kind in kinds:
            edges = []
            seen = set()
            for _ in range(int(rng.integers(0, 2 * n))):
                s, t = int(rng.integers(0, n)), int(rng.integers(0, n))
                lab = f"l{int(rng.integers(0, 3))}"
                if s == t or (s, t, lab) in seen:
                    continue
                seen.add((s, t, lab))
                edges.append([s, t, lab])
            edge_lists[kind] = edges
        record = record_from_edges(n, **edge_lists)
        space = LabelSpace.build([record])
        k = int(rng.integers(1, 4))
        params = MgcnParams.init(rng, 4, {kind: space.size(kind) for kind in kinds}, k=k)
        for hop in params.hops:
            for key in hop.bias:
                hop.bias[key] = T.parameter(rng.normal(size=hop.bias[key].shape) * 0.2)
            for key in hop.gate_bias:
                hop.gate_bias[key] = T.parameter(rng.normal(size=hop.gate_bias[key].shape) * 0.2)
        h0 = rng.normal(size=(n, 4)) * 0.7
        got = mgcn_forward(T.constant(h0), record.graphs, k, params, space, kinds=kinds).values
        per_kind = {
            kind: [
                (e.source, e.target, space.id_for(kind, record.graphs.label_string(e)))
                for e in record.graphs.edges[kind]
            ]
            for kind in kinds
        }
        want = dense_oracle_mgcn(h0, per_kind, params, k)
        assert np.max(np.abs(got - want)) < 1e-9


def test_mgcn_rejects_bad_hop_count():
    rng = np.random.default_rng(31)
    record = record_from_edges(3, dep=[[0, 1, "a"]])
    space = label_space_for(record)
    params = MgcnParams.init(rng, 3, {"dep": space.size("dep")}, k=2)
    with pytest.raises(ValueError):
        mgcn_forward(T.constant(np.zeros((3, 3))), record.graphs, 0, params, space)
    with pytest.raises(ValueError):
        mgcn_forward(T.constant(np.zeros((3, 3))), record.graphs, 1, params, space)


def test_mgcn_gradients_match_finite_differences():
    rng = np.random.default_rng(37)
    record = record_from_edges(4, dep=[[0, 1, "a"], [1, 2, "b"], [2, 3, "a"], [3, 0, "b"]])
    space = label_space_for(record)
    params = MgcnParams.init(rng, 3, {"dep": space.size("dep")}, k=2)
    h0 = T.parameter(rng.normal(size=(4, 3)) * 0.5)
    resolved = resolve_views(record.graphs, space, ("dep",))
    hop = params.hops[0]
    named = {
        "h0": h0,
        "w_in": hop.w_in,
        "w_self": hop.w_self,
        "gate_w_in": hop.gate_w_in,
        "bias_in": hop.bias[("dep", "in")],
        "gate_bias_out": hop.gate_bias[("dep", "out")],
    }
    weights = T.constant(rng.normal(size=(4, 3)))

    def f(plist):
        h, w_in, w_self, gate_w_in, bias_in, gate_bias_out = plist
        hop.w_in = w_in
        hop.w_self = w_self
        hop.gate_w_in = gate_w_in
        hop.bias[("dep", "in")] = bias_in
        hop.gate_bias[("dep", "out")] = gate_bias_out
        out = mgcn_forward(h, resolved, 2, params)
        return T.sum_rows(T.sum_rows(T.mul(out, weights)))

    report = grad_check(f, named, step=1e-5, tol=1e-3)
    assert report.passed, report.per_param
