"""Full encoder-decoder assembly: embeddings, document encoder, context
encoder, copy decoder, teacher-forced loss and greedy generation.

All trainable tensors live in one ordered registry (declaration order is
the checkpoint order). Parameter objects are stable for the lifetime of
the model; the optimizer swaps their value buffers between steps.
"""

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .decoder import (
    DecoderParams,
    DecoderState,
    ExtendedVocabMap,
    decode_step,
    greedy_decode,
)
from .encoder import EncoderConfig, EncoderParams, LookupEmbeddings, encode
from .gcn import glorot
from .graphs import LabelSpace
from .lstm import LstmCellParams, context_encode
from .vocab import EOS, SOS, Vocabulary


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_hidden: int = 256
    attn_hidden: int = 128
    max_vocab: int = 2000

    def to_json(self):
        return {
            "encoder": self.encoder.to_json(),
            "decoder_hidden": self.decoder_hidden,
            "attn_hidden": self.attn_hidden,
            "max_vocab": self.max_vocab,
        }

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        obj["encoder"] = EncoderConfig.from_json(obj.get("encoder", {}))
        return cls(**obj)

    def digest(self):
        canonical = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Model:
    """One trained system: configuration, vocabulary, label space, weights."""

    def __init__(self, cfg, vocab, label_space, seed=0):
        self.cfg = cfg
        self.vocab = vocab
        self.label_space = label_space
        self.seed = seed
        rng = np.random.default_rng(seed)
        enc = cfg.encoder

        self.token_emb = LookupEmbeddings.init(rng, vocab, enc.embedding_dim)
        self.doc_provider = self.token_emb  # swapped for frozen rows in file mode

        self.encoder_params = EncoderParams.init(rng, enc, label_space)

        # uniform decoder-side width: the pass-through mode projects raw
        # embeddings up to the width the recurrent modes produce
        if enc.mode == "sem":
            self.doc_bridge = T.parameter(
                glorot(rng, (enc.embedding_dim, 2 * enc.lstm_hidden))
            )
            self.doc_width = 2 * enc.lstm_hidden
        else:
            self.doc_bridge = None
            self.doc_width = enc.output_width

        self.ctx_cell = LstmCellParams.init(rng, enc.embedding_dim, enc.lstm_hidden)
        self.decoder_params = DecoderParams.init(
            rng,
            emb_dim=enc.embedding_dim,
            doc_width=self.doc_width,
            ctx_width=enc.lstm_hidden,
            hidden=cfg.decoder_hidden,
            attn=cfg.attn_hidden,
            vocab_size=len(vocab),
        )

        self.params = OrderedDict()
        for name, t in self._named_tensors():
            if name in self.params:
                raise ValueError(f"duplicate parameter name {name}")
            self.params[name] = t

    def _named_tensors(self):
        yield from self.token_emb.named_tensors("token_emb")
        if self.doc_bridge is not None:
            yield "doc_bridge", self.doc_bridge
        yield from self.encoder_params.named_tensors("encoder")
        yield from self.ctx_cell.named_tensors("ctx")
        yield from self.decoder_params.named_tensors("decoder")

    @classmethod
    def build(cls, cfg, train_records, seed=0, label_cap=32):
        vocab = Vocabulary.build(train_records, cfg.max_vocab)
        label_space = LabelSpace.build(train_records, cap=label_cap)
        return cls(cfg, vocab, label_space, seed=seed)

    def attach_doc_embeddings(self, provider):
        if self.cfg.encoder.embedding != "file":
            raise ValueError("model was not configured for file embeddings")
        if provider.dim != self.cfg.encoder.embedding_dim:
            raise ValueError(
                f"embedding file dimension {provider.dim} != configured "
                f"{self.cfg.encoder.embedding_dim}"
            )
        self.doc_provider = provider

    # ------------------------------------------------------------------
    # forward passes

    def embed_token(self, token):
        return T.gather_rows(self.token_emb.table, self.vocab.id_for(token))

    def _extmap(self, record):
        extmap = record._cache.get("extmap")
        if extmap is None or extmap.vocab is not self.vocab:
            extmap = ExtendedVocabMap(self.vocab, record.doc_tokens)
            record._cache["extmap"] = extmap
        return extmap

    def encode_record(self, record):
        """Encoded document (bridged to decoder width) and context states."""
        encoded = encode(
            record, self.cfg.encoder, self.encoder_params, self.doc_provider,
            self.label_space,
        )
        h_doc = encoded.h_final
        if self.doc_bridge is not None:
            h_doc = T.matmul(h_doc, self.doc_bridge)
        h_ctx = context_encode(record.context_tokens, self.token_emb, self.ctx_cell)
        return h_doc, h_ctx

    def example_loss(self, record, force_generate=False):
        """Teacher-forced mean NLL and token accuracy for one record.

        Returns (loss Tensor, steps, correct).
        """
        h_doc, h_ctx = self.encode_record(record)
        extmap = self._extmap(record)
        inputs = (SOS,) + tuple(record.response_tokens)
        targets = tuple(record.response_tokens) + (EOS,)

        state = DecoderState.initial(self.decoder_params.hidden, self.doc_width)
        step_losses = []
        correct = 0
        for input_tok, target_tok in zip(inputs, targets):
            x_t = self.embed_token(input_tok)
            state, dist, _ = decode_step(
                state, x_t, h_ctx, h_doc, extmap, self.decoder_params,
                force_generate=force_generate,
            )
            p = T.clamp_min(dist.prob_of(target_tok), 1e-12)
            step_losses.append(T.scale(T.log(p), -1.0))
            slot, _ = dist.argmax()
            if slot == extmap.slot_for(target_tok):
                correct += 1
        total = step_losses[0]
        for piece in step_losses[1:]:
            total = T.add(total, piece)
        loss = T.scale(total, 1.0 / len(step_losses))
        return loss, len(step_losses), correct

    def generate(self, record, max_len=40, force_generate=False):
        """Greedy response for one record; run outside any tape."""
        h_doc, h_ctx = self.encode_record(record)
        return greedy_decode(
            h_ctx, h_doc, self._extmap(record), self.decoder_params,
            self.embed_token, max_len=max_len, force_generate=force_generate,
        )
