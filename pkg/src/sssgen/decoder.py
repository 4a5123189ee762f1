"""Attention decoder with a copy-or-generate output distribution.

Per step: advance the decoder LSTM on [previous-token embedding;
previous document summary], attend over the encoded conversation
context with the updated state, use that summary to attend over the
encoded document, then mix a fixed-vocabulary softmax with the document
attention weights through a generation gate. The mixture lives on the
extended vocabulary: fixed vocabulary plus the out-of-vocabulary word
types of the current document, so copied words keep their identity even
when they cannot be generated.

Feeding the previous step's document summary into the recurrence breaks
the cycle between the state update and the attentions; both attentions
then condition on the state that has already consumed the current input
token, which is what lets the copy pointer track a span position.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gcn import glorot
from .lstm import LstmCellParams, lstm_step


class AttentionParams:
    """Additive attention: score_i = v . tanh(W_mem mem_i + W_q1 q1 (+ W_q2 q2) + b)."""

    def __init__(self, w_mem, queries, bias, v):
        self.w_mem = w_mem  # (mem_width, attn)
        self.queries = queries  # list of Tensor (query_width, attn)
        self.bias = bias  # (attn,)
        self.v = v  # (attn,)

    @classmethod
    def init(cls, rng, mem_width, query_widths, attn):
        return cls(
            w_mem=T.parameter(glorot(rng, (mem_width, attn))),
            queries=[T.parameter(glorot(rng, (qw, attn))) for qw in query_widths],
            bias=T.zeros((attn,), requires_grad=True),
            v=T.parameter(glorot(rng, (attn, 1))[:, 0]),
        )

    def named_tensors(self, prefix):
        yield f"{prefix}.w_mem", self.w_mem
        for i, q in enumerate(self.queries):
            yield f"{prefix}.w_query{i}", q
        yield f"{prefix}.bias", self.bias
        yield f"{prefix}.v", self.v

    def scores(self, memory, query_vectors):
        pre = T.matmul(memory, self.w_mem)  # (M, attn)
        for w_q, q in zip(self.queries, query_vectors):
            pre = T.add(pre, T.matmul(q, w_q))  # bias-row broadcast over M
        pre = T.add(pre, self.bias)
        return T.matmul(T.tanh(pre), self.v)  # (M,)


def context_attention(h_ctx, state, params):
    """Summarize the context states against the decoder state.

    Returns (d_t, weights): the attention-weighted context vector and the
    softmax weights over positions.
    """
    scores = params.scores(h_ctx, [state])
    weights = T.softmax_masked(scores)
    return T.matmul(weights, h_ctx), weights


def resource_attention(h_doc, state, d_t, params, mask=None):
    """Attend over document tokens, aware of the current context summary.

    Returns (weights, c_t). ``mask`` zeroes padding positions; a fully
    masked document is an error.
    """
    scores = params.scores(h_doc, [state, d_t])
    weights = T.softmax_masked(scores, mask)
    return weights, T.matmul(weights, h_doc)


class ExtendedVocabMap:
    """Fixed vocabulary plus this document's out-of-vocabulary word types.

    Copy slots aggregate over token positions: the scatter matrix maps
    position i to the slot of the word at i.
    """

    def __init__(self, vocab, doc_tokens):
        self.vocab = vocab
        oov = []
        seen = {}
        for tok in doc_tokens:
            if tok not in vocab and tok not in seen:
                seen[tok] = len(vocab) + len(oov)
                oov.append(tok)
        self.oov_types = tuple(oov)
        self._oov_slots = seen
        scatter = np.zeros((len(doc_tokens), self.size))
        for i, tok in enumerate(doc_tokens):
            scatter[i, self.slot_for(tok)] = 1.0
        self.scatter = T.constant(scatter)

    @property
    def size(self):
        return len(self.vocab) + len(self.oov_types)

    def slot_for(self, token):
        """Slot of a token: its vocab id, its copy slot, or UNK."""
        slot = self._oov_slots.get(token)
        if slot is not None:
            return slot
        return self.vocab.id_for(token)

    def token_for(self, slot):
        if slot < len(self.vocab):
            return self.vocab.token(slot)
        return self.oov_types[slot - len(self.vocab)]


class ExtendedDistribution:
    """Probabilities over the extended vocabulary for one decode step."""

    def __init__(self, probs, extmap):
        values = probs.values
        if values.shape != (extmap.size,):
            raise T.ShapeMismatch(
                f"distribution shape {values.shape} != extended vocab {extmap.size}"
            )
        if values.min() < 0.0 or abs(values.sum() - 1.0) > 1e-9:
            raise ValueError("extended distribution is not normalized")
        self.probs = probs
        self.extmap = extmap

    def prob_of(self, token):
        """Probability of a token as a scalar tensor on the tape."""
        onehot = np.zeros(self.extmap.size)
        onehot[self.extmap.slot_for(token)] = 1.0
        return T.matmul(self.probs, T.constant(onehot))

    def argmax(self):
        """Highest-probability slot; ties go to the lowest slot index."""
        slot = int(np.argmax(self.probs.values))
        return slot, self.extmap.token_for(slot)


class DecoderParams:
    def __init__(self, cell, ctx_attn, res_attn, vocab_w_state, vocab_w_doc, vocab_bias,
                 pgen_w_doc, pgen_w_state, pgen_w_input, pgen_bias):
        self.cell = cell
        self.ctx_attn = ctx_attn
        self.res_attn = res_attn
        self.vocab_w_state = vocab_w_state
        self.vocab_w_doc = vocab_w_doc
        self.vocab_bias = vocab_bias
        self.pgen_w_doc = pgen_w_doc
        self.pgen_w_state = pgen_w_state
        self.pgen_w_input = pgen_w_input
        self.pgen_bias = pgen_bias

    @classmethod
    def init(cls, rng, emb_dim, doc_width, ctx_width, hidden, attn, vocab_size):
        return cls(
            cell=LstmCellParams.init(rng, emb_dim + doc_width, hidden),
            ctx_attn=AttentionParams.init(rng, ctx_width, [hidden], attn),
            res_attn=AttentionParams.init(rng, doc_width, [hidden, ctx_width], attn),
            vocab_w_state=T.parameter(glorot(rng, (hidden, vocab_size))),
            vocab_w_doc=T.parameter(glorot(rng, (doc_width, vocab_size))),
            vocab_bias=T.zeros((vocab_size,), requires_grad=True),
            pgen_w_doc=T.parameter(glorot(rng, (doc_width, 1))),
            pgen_w_state=T.parameter(glorot(rng, (hidden, 1))),
            pgen_w_input=T.parameter(glorot(rng, (emb_dim, 1))),
            pgen_bias=T.zeros((1,), requires_grad=True),
        )

    @property
    def hidden(self):
        return self.cell.hidden

    def named_tensors(self, prefix):
        yield from self.cell.named_tensors(f"{prefix}.cell")
        yield from self.ctx_attn.named_tensors(f"{prefix}.ctx_attn")
        yield from self.res_attn.named_tensors(f"{prefix}.res_attn")
        yield f"{prefix}.vocab_w_state", self.vocab_w_state
        yield f"{prefix}.vocab_w_doc", self.vocab_w_doc
        yield f"{prefix}.vocab_bias", self.vocab_bias
        yield f"{prefix}.pgen_w_doc", self.pgen_w_doc
        yield f"{prefix}.pgen_w_state", self.pgen_w_state
        yield f"{prefix}.pgen_w_input", self.pgen_w_input
        yield f"{prefix}.pgen_bias", self.pgen_bias


@dataclass
class DecoderState:
    h: object  # Tensor (hidden,)
    c: object  # Tensor (hidden,)
    attn_ctx: object  # Tensor (doc_width,): previous document summary

    @classmethod
    def initial(cls, hidden, doc_width):
        return cls(T.zeros(hidden), T.zeros(hidden), T.zeros(doc_width))


def _tile(scalar_1, size):
    """(1,) -> (size,), keeping the gradient path."""
    return T.matmul(T.ones((size, 1)), scalar_1)


def decode_step(state, x_t, h_ctx, h_doc, extmap, params, doc_mask=None,
                force_generate=False):
    """One decoder step.

    Returns (new_state, ExtendedDistribution, doc_attention_weights).
    ``force_generate`` pins the generation gate to 1, which removes all
    copy mass (used for the no-copy ablation).
    """
    h_new, c_new = lstm_step(
        params.cell, T.concat([x_t, state.attn_ctx]), state.h, state.c
    )
    d_t, _ = context_attention(h_ctx, h_new, params.ctx_attn)
    a_t, c_t = resource_attention(h_doc, h_new, d_t, params.res_attn, doc_mask)
    new_state = DecoderState(h_new, c_new, c_t)

    logits = T.add(
        T.add(T.matmul(h_new, params.vocab_w_state), T.matmul(c_t, params.vocab_w_doc)),
        params.vocab_bias,
    )
    p_vocab = T.softmax_masked(logits)

    n_oov = len(extmap.oov_types)
    p_vocab_ext = T.concat([p_vocab, T.zeros(n_oov)]) if n_oov else p_vocab

    if force_generate:
        return new_state, ExtendedDistribution(p_vocab_ext, extmap), a_t

    p_gen = T.sigmoid(
        T.add(
            T.add(
                T.add(T.matmul(c_t, params.pgen_w_doc), T.matmul(h_new, params.pgen_w_state)),
                T.matmul(x_t, params.pgen_w_input),
            ),
            params.pgen_bias,
        )
    )  # (1,)
    copy_dist = T.matmul(a_t, extmap.scatter)  # (extended,)
    probs = T.add(
        T.mul(_tile(p_gen, extmap.size), p_vocab_ext),
        T.mul(_tile(T.sub(T.ones((1,)), p_gen), extmap.size), copy_dist),
    )
    return new_state, ExtendedDistribution(probs, extmap), a_t


def greedy_decode(h_ctx, h_doc, extmap, params, embed_token, max_len=40,
                  doc_mask=None, force_generate=False):
    """Feed the argmax token back until end-of-sequence or max_len.

    ``embed_token`` maps a token string to its input embedding; copied
    out-of-vocabulary words re-embed as UNK on the next step. Ties in the
    distribution resolve to the lowest extended-vocabulary index.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    from .vocab import SOS, EOS

    state = DecoderState.initial(params.hidden, h_doc.shape[1])
    x_t = embed_token(SOS)
    output = []
    for _ in range(max_len):
        state, dist, _ = decode_step(
            state, x_t, h_ctx, h_doc, extmap, params,
            doc_mask=doc_mask, force_generate=force_generate,
        )
        _, token = dist.argmax()
        if token == EOS:
            break
        output.append(token)
        x_t = embed_token(token)
    return output
