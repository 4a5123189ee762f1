"""Graph convolution with direction-specific weights and edge gating.

One layer aggregates, for each node, gated messages from its labeled
neighborhood: incoming edges use W_in, reversed (outgoing) edges use
W_out, and each (kind, label, direction) has its own additive bias. The
gate is a per-edge sigmoid conditioned on the message source's current
embedding. A node's own state is transformed separately (W_self) by the
multi-graph stack, never by the per-kind layer.

The multi-graph stack runs one such convolution per relation kind per
hop, adds the self transform, and applies ReLU.
"""

import numpy as np

from . import tensor as T
from .graphs import RELATION_KINDS, all_views

DIRECTIONS = ("in", "out")


def glorot(rng, shape):
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class GcnLayerParams:
    """One hop's parameters, spanning all relation kinds.

    W_in / W_out / W_self are shared across kinds; bias tables are keyed
    by (kind, direction) with one row per label id.
    """

    def __init__(self, w_in, w_out, w_self, gate_w_in, gate_w_out, bias, gate_bias):
        self.w_in = w_in
        self.w_out = w_out
        self.w_self = w_self
        self.gate_w_in = gate_w_in
        self.gate_w_out = gate_w_out
        self.bias = bias  # (kind, direction) -> Tensor (labels, m)
        self.gate_bias = gate_bias  # (kind, direction) -> Tensor (labels, 1)

    @classmethod
    def init(cls, rng, size, label_sizes):
        """label_sizes: kind -> number of label ids for that kind."""
        bias = {}
        gate_bias = {}
        for kind in label_sizes:
            for direction in DIRECTIONS:
                bias[(kind, direction)] = T.zeros((label_sizes[kind], size), requires_grad=True)
                gate_bias[(kind, direction)] = T.zeros((label_sizes[kind], 1), requires_grad=True)
        return cls(
            w_in=T.parameter(glorot(rng, (size, size))),
            w_out=T.parameter(glorot(rng, (size, size))),
            w_self=T.parameter(glorot(rng, (size, size))),
            gate_w_in=T.parameter(glorot(rng, (size, 1))),
            gate_w_out=T.parameter(glorot(rng, (size, 1))),
            bias=bias,
            gate_bias=gate_bias,
        )

    def weight(self, direction):
        return self.w_in if direction == "in" else self.w_out

    def gate_weight(self, direction):
        return self.gate_w_in if direction == "in" else self.gate_w_out

    def named_tensors(self, prefix):
        yield f"{prefix}.w_in", self.w_in
        yield f"{prefix}.w_out", self.w_out
        yield f"{prefix}.w_self", self.w_self
        yield f"{prefix}.gate_w_in", self.gate_w_in
        yield f"{prefix}.gate_w_out", self.gate_w_out
        for (kind, direction), t in sorted(self.bias.items()):
            yield f"{prefix}.bias.{kind}.{direction}", t
        for (kind, direction), t in sorted(self.gate_bias.items()):
            yield f"{prefix}.gate_bias.{kind}.{direction}", t


class MgcnParams:
    """Per-hop layer parameters; hops do not share weights."""

    def __init__(self, hops):
        if not hops:
            raise ValueError("at least one hop is required")
        self.hops = hops

    @property
    def k(self):
        return len(self.hops)

    @classmethod
    def init(cls, rng, size, label_sizes, k):
        return cls([GcnLayerParams.init(rng, size, label_sizes) for _ in range(k)])

    def named_tensors(self, prefix):
        for i, hop in enumerate(self.hops):
            yield from hop.named_tensors(f"{prefix}.hop{i}")


def edge_gate(h_u, direction, kind, label, params):
    """Scalar gate in (0, 1) for one edge, viewed from the message source."""
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    table = params.gate_bias.get((kind, direction))
    if table is None or not 0 <= label < table.shape[0]:
        raise KeyError(f"no gate bias for kind={kind!r} label id {label}")
    logit = T.matmul(h_u, params.gate_weight(direction))  # (1,)
    logit = T.add(logit, T.gather_rows(table, label))
    return T.sum_rows(T.sigmoid(logit))


def _view_arrays(views):
    """Flatten per-node views into per-direction (sources, targets, labels)."""
    arrays = {d: ([], [], []) for d in DIRECTIONS}
    for node, entries in enumerate(views):
        for neighbor, direction, label in entries:
            src, dst, lab = arrays[direction]
            src.append(neighbor)
            dst.append(node)
            lab.append(label)
    return arrays


def gcn_layer(h, views, kind, params):
    """Gated aggregation over one relation kind; (n, m) -> (n, m).

    ``views`` maps each node to its (neighbor, direction, label) list with
    labels already resolved to this run's label ids. Isolated nodes get a
    zero row; the self transform is applied by the caller.
    """
    n, m = h.shape
    if len(views) != n:
        raise T.ShapeMismatch(f"{len(views)} views for {n} nodes")
    total = None
    ones_row = T.ones((1, m))
    for direction, (src, dst, lab) in _view_arrays(views).items():
        if not src:
            continue
        h_src = T.gather_rows(h, src)  # (E, m)
        messages = T.add(
            T.matmul(h_src, params.weight(direction)),
            T.gather_rows(params.bias[(kind, direction)], lab),
        )
        gate_logits = T.add(
            T.matmul(h_src, params.gate_weight(direction)),  # (E, 1)
            T.gather_rows(params.gate_bias[(kind, direction)], lab),
        )
        gates = T.sigmoid(gate_logits)
        gated = T.mul(messages, T.matmul(gates, ones_row))
        scatter = np.zeros((n, len(src)))
        scatter[dst, np.arange(len(src))] = 1.0
        contribution = T.matmul(T.constant(scatter), gated)
        total = contribution if total is None else T.add(total, contribution)
    if total is None:
        return T.zeros((n, m))
    return total


def resolve_views(graph, label_space, kinds):
    """Per-kind neighborhood views with labels mapped into the run's
    label space (unknown labels fall into the overflow bucket)."""
    resolved = {}
    for kind in kinds:
        views = all_views(graph, kind)
        labels = graph.labels.get(kind, ())
        resolved[kind] = [
            [(u, d, label_space.id_for(kind, labels[lab])) for u, d, lab in entries]
            for entries in views
        ]
    return resolved


def mgcn_forward(h0, graph, k, params, label_space=None, kinds=None):
    """k hops of multi-graph convolution starting from h0 (n, m).

    ``graph`` is either a LabeledMultiGraph (resolved here; requires
    label_space) or a pre-resolved {kind: views} dict. Each hop computes
    ReLU(h W_self + sum over kinds of the gated convolution).
    """
    if k < 1:
        raise ValueError("hop count must be >= 1")
    if k != params.k:
        raise ValueError(f"k={k} but params define {params.k} hops")
    if isinstance(graph, dict):
        resolved = graph
    else:
        if label_space is None:
            raise ValueError("label_space is required to resolve a LabeledMultiGraph")
        if kinds is None:
            kinds = tuple(kind for kind in RELATION_KINDS if graph.edges.get(kind))
        resolved = resolve_views(graph, label_space, kinds)
    h = h0
    for hop in params.hops:
        total = T.matmul(h, hop.w_self)
        for kind, views in resolved.items():
            total = T.add(total, gcn_layer(h, views, kind, hop))
        h = T.relu(total)
    return h
