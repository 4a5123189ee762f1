"""Named gradient-integrity checks: each builds a small fixed instance
and compares analytic gradients against central finite differences
(step 1e-5, tolerance 1e-3 unless stated)."""

import json

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig
from .gcn import GcnLayerParams, MgcnParams, gcn_layer, mgcn_forward, resolve_views
from .graphs import LabelSpace, parse_record
from .lstm import LstmParams, bilstm_forward
from .model import Model, ModelConfig
from .synth import SynthSpec, gen_synthetic_corpus
from .tensor import grad_check

STEP = 1e-5
TOL = 1e-3


def _four_node_record():
    return parse_record(json.dumps({
        "doc_tokens": ["a", "b", "c", "d"],
        "context_tokens": ["q"],
        "response_tokens": ["b", "c"],
        "graphs": {
            "dep": [[0, 1, "nsubj"], [1, 2, "obj"], [3, 1, "amod"]],
            "coref": [[0, 3, "coref"], [3, 0, "coref"]],
            "ent": [],
        },
    }))


def check_gcn_layer(step=STEP, tol=TOL):
    """One gated convolution layer over a 4-node graph."""
    rng = np.random.default_rng(101)
    record = _four_node_record()
    space = LabelSpace.build([record])
    params = GcnLayerParams.init(rng, 4, {"dep": space.size("dep")})
    views = resolve_views(record.graphs, space, ("dep",))["dep"]
    weights = T.constant(rng.normal(size=(4, 4)))
    named = {
        "h": T.parameter(rng.normal(size=(4, 4)) * 0.5),
        "w_in": params.w_in,
        "w_out": params.w_out,
        "gate_w_in": params.gate_w_in,
        "gate_w_out": params.gate_w_out,
        "bias_in": params.bias[("dep", "in")],
        "bias_out": params.bias[("dep", "out")],
        "gate_bias_in": params.gate_bias[("dep", "in")],
        "gate_bias_out": params.gate_bias[("dep", "out")],
    }

    def f(plist):
        (h, params.w_in, params.w_out, params.gate_w_in, params.gate_w_out,
         params.bias[("dep", "in")], params.bias[("dep", "out")],
         params.gate_bias[("dep", "in")], params.gate_bias[("dep", "out")]) = plist
        out = gcn_layer(h, views, "dep", params)
        return T.sum_rows(T.sum_rows(T.mul(out, weights)))

    return grad_check(f, named, step=step, tol=tol)


def check_mgcn(step=STEP, tol=TOL):
    """Two hops over two relation kinds, every hop parameter included."""
    rng = np.random.default_rng(102)
    record = _four_node_record()
    space = LabelSpace.build([record])
    sizes = {"dep": space.size("dep"), "coref": space.size("coref")}
    params = MgcnParams.init(rng, 3, sizes, k=2)
    resolved = resolve_views(record.graphs, space, ("dep", "coref"))
    weights = T.constant(rng.normal(size=(4, 3)))

    named = {"h0": T.parameter(rng.normal(size=(4, 3)) * 0.5)}
    setters = []
    for i, hop in enumerate(params.hops):
        for attr in ("w_in", "w_out", "w_self", "gate_w_in", "gate_w_out"):
            named[f"hop{i}.{attr}"] = getattr(hop, attr)
            setters.append((hop, attr, None))
        for key in sorted(hop.bias):
            named[f"hop{i}.bias.{key[0]}.{key[1]}"] = hop.bias[key]
            setters.append((hop, "bias", key))
        for key in sorted(hop.gate_bias):
            named[f"hop{i}.gate_bias.{key[0]}.{key[1]}"] = hop.gate_bias[key]
            setters.append((hop, "gate_bias", key))

    def f(plist):
        h0 = plist[0]
        for (owner, attr, key), tensor in zip(setters, plist[1:]):
            if key is None:
                setattr(owner, attr, tensor)
            else:
                getattr(owner, attr)[key] = tensor
        out = mgcn_forward(h0, resolved, 2, params)
        return T.sum_rows(T.sum_rows(T.mul(out, weights)))

    return grad_check(f, named, step=step, tol=tol)


def check_bilstm(step=STEP, tol=TOL):
    """Bidirectional LSTM over 4 positions, both directions' gates."""
    rng = np.random.default_rng(103)
    params = LstmParams.init(rng, 3, 3)
    weights = T.constant(rng.normal(size=(4, 6)))
    named = {"x": T.parameter(rng.normal(size=(4, 3)) * 0.5)}
    setters = []
    for direction, cell in (("fwd", params.fwd), ("bwd", params.bwd)):
        for gate in cell.GATES:
            named[f"{direction}.w_{gate}"] = cell.weights[gate]
            setters.append((cell.weights, gate))
            named[f"{direction}.b_{gate}"] = cell.biases[gate]
            setters.append((cell.biases, gate))

    def f(plist):
        for (table, gate), tensor in zip(setters, plist[1:]):
            table[gate] = tensor
        out = bilstm_forward(plist[0], params)
        return T.sum_rows(T.sum_rows(T.mul(out, weights)))

    return grad_check(f, named, step=step, tol=tol)


def _tiny_model():
    spec = SynthSpec(docs=10, vocab=20, seed=3, max_sentences=2,
                     min_sentence_len=2, max_sentence_len=3)
    records = gen_synthetic_corpus(spec)
    cfg = ModelConfig(
        encoder=EncoderConfig(
            mode="str_lstm", relations=("dep",), hops=1,
            embedding_dim=4, lstm_hidden=3, gcn_hidden=4,
        ),
        decoder_hidden=4, attn_hidden=3, max_vocab=24,
    )
    model = Model.build(cfg, records, seed=5)
    # a 6-token document with a 4-token target response
    record = parse_record(json.dumps({
        "doc_tokens": ["cue0", "w00", "w01", "oov900", "w02", "."],
        "context_tokens": ["ask", "cue0"],
        "response_tokens": ["w00", "w01", "oov900", "w02"],
        "graphs": {"dep": [[0, 1, "nsubj"], [1, 2, "obj"], [2, 4, "conj"], [4, 5, "det"]],
                   "coref": [], "ent": []},
    }))
    return model, record


def check_full_model(step=STEP, tol=TOL):
    """Teacher-forced loss of the whole encoder-decoder on a 6-token
    document, checked for every trainable parameter."""
    model, record = _tiny_model()

    def f(plist):
        for name, tensor in zip(model.params, plist):
            model.params[name] = tensor
        _rebind(model)
        loss, _, _ = model.example_loss(record)
        return loss

    return grad_check(f, model.params, step=step, tol=tol)


def _rebind(model):
    """Push the registry's tensors back into the module structures."""
    params = dict(model.params)

    def take(name):
        return params[name]

    model.token_emb.table = take("token_emb.table")
    enc = model.encoder_params
    if enc.graph_in_proj is not None:
        enc.graph_in_proj = take("encoder.graph_in_proj")
    if enc.mgcn is not None:
        for i, hop in enumerate(enc.mgcn.hops):
            prefix = f"encoder.mgcn.hop{i}"
            hop.w_in = take(f"{prefix}.w_in")
            hop.w_out = take(f"{prefix}.w_out")
            hop.w_self = take(f"{prefix}.w_self")
            hop.gate_w_in = take(f"{prefix}.gate_w_in")
            hop.gate_w_out = take(f"{prefix}.gate_w_out")
            for key in list(hop.bias):
                hop.bias[key] = take(f"{prefix}.bias.{key[0]}.{key[1]}")
            for key in list(hop.gate_bias):
                hop.gate_bias[key] = take(f"{prefix}.gate_bias.{key[0]}.{key[1]}")
    if enc.bilstm is not None:
        for direction, cell in (("fwd", enc.bilstm.fwd), ("bwd", enc.bilstm.bwd)):
            for gate in cell.GATES:
                cell.weights[gate] = take(f"encoder.bilstm.{direction}.w_{gate}")
                cell.biases[gate] = take(f"encoder.bilstm.{direction}.b_{gate}")
    if model.doc_bridge is not None:
        model.doc_bridge = take("doc_bridge")
    for gate in model.ctx_cell.GATES:
        model.ctx_cell.weights[gate] = take(f"ctx.w_{gate}")
        model.ctx_cell.biases[gate] = take(f"ctx.b_{gate}")
    dec = model.decoder_params
    for gate in dec.cell.GATES:
        dec.cell.weights[gate] = take(f"decoder.cell.w_{gate}")
        dec.cell.biases[gate] = take(f"decoder.cell.b_{gate}")
    for label, attn in (("ctx_attn", dec.ctx_attn), ("res_attn", dec.res_attn)):
        attn.w_mem = take(f"decoder.{label}.w_mem")
        for i in range(len(attn.queries)):
            attn.queries[i] = take(f"decoder.{label}.w_query{i}")
        attn.bias = take(f"decoder.{label}.bias")
        attn.v = take(f"decoder.{label}.v")
    dec.vocab_w_state = take("decoder.vocab_w_state")
    dec.vocab_w_doc = take("decoder.vocab_w_doc")
    dec.vocab_bias = take("decoder.vocab_bias")
    dec.pgen_w_doc = take("decoder.pgen_w_doc")
    dec.pgen_w_state = take("decoder.pgen_w_state")
    dec.pgen_w_input = take("decoder.pgen_w_input")
    dec.pgen_bias = take("decoder.pgen_bias")


SUITES = {
    "gcn": check_gcn_layer,
    "mgcn": check_mgcn,
    "bilstm": check_bilstm,
    "decoder": check_full_model,
}


def run_suites(names=None):
    """Run the named suites (all by default); returns name -> report."""
    names = list(SUITES) if not names else list(names)
    results = {}
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown gradcheck suite {name!r}; have {sorted(SUITES)}")
        results[name] = SUITES[name]()
    return results
