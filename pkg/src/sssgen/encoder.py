"""Document encoder: composes the word-embedding, graph and sequence
layers into a per-token representation, in one of five modes.

  sem          embeddings pass straight through
  sem_seq      BiLSTM over the embeddings
  seq_gcn      BiLSTM first, graph stack on top
  str_lstm     graph stack first, BiLSTM on top
  par_gcn_lstm graph stack and BiLSTM side by side, summed

The two serial orders and the parallel sum cover every composition of
the structure and sequence layers over a shared semantic base.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .embfile import EmbeddingFileError, read_embedding_file
from .gcn import MgcnParams, glorot, mgcn_forward, resolve_views
from .graphs import RELATION_KINDS
from .lstm import LstmParams, bilstm_forward

MODES = ("sem", "sem_seq", "seq_gcn", "str_lstm", "par_gcn_lstm")
STRUCTURAL_MODES = ("seq_gcn", "str_lstm", "par_gcn_lstm")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "str_lstm"
    relations: tuple = ("dep",)
    hops: int = 1
    embedding: str = "lookup"  # "lookup" (trainable) or "file" (frozen rows)
    embedding_dim: int = 100
    lstm_hidden: int = 256
    gcn_hidden: int = None  # resolved per mode when unset

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown encoder mode {self.mode!r}")
        if self.mode in STRUCTURAL_MODES:
            if not self.relations:
                raise ConfigError("structural modes need a nonempty relation subset")
            unknown = set(self.relations) - set(RELATION_KINDS)
            if unknown:
                raise ConfigError(f"unknown relation kinds {sorted(unknown)}")
        if self.hops not in (1, 2, 3):
            raise ConfigError("hop count must be 1, 2 or 3")
        if self.embedding not in ("lookup", "file"):
            raise ConfigError(f"unknown embedding kind {self.embedding!r}")
        if self.mode == "par_gcn_lstm":
            wide = 2 * self.lstm_hidden
            if self.gcn_hidden is not None and self.gcn_hidden != wide:
                raise ConfigError(
                    f"parallel mode needs gcn_hidden == 2*lstm_hidden ({wide}), "
                    f"got {self.gcn_hidden}"
                )

    @property
    def graph_width(self):
        """Width the graph stack runs at; the wider default for seq_gcn
        keeps capacity after the BiLSTM, the parallel mode must match the
        BiLSTM output by construction."""
        if self.gcn_hidden is not None:
            return self.gcn_hidden
        if self.mode == "seq_gcn":
            return 512
        if self.mode == "par_gcn_lstm":
            return 2 * self.lstm_hidden
        return 128

    @property
    def output_width(self):
        """Width of h_final per mode."""
        if self.mode == "sem":
            return self.embedding_dim
        if self.mode == "seq_gcn":
            return self.graph_width
        return 2 * self.lstm_hidden

    def to_json(self):
        return {
            "mode": self.mode,
            "relations": list(self.relations),
            "hops": self.hops,
            "embedding": self.embedding,
            "embedding_dim": self.embedding_dim,
            "lstm_hidden": self.lstm_hidden,
            "gcn_hidden": self.gcn_hidden,
        }

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        obj["relations"] = tuple(obj.get("relations", ("dep",)))
        return cls(**obj)


@dataclass
class EncodedDocument:
    h_final: object  # Tensor (n, width)
    mask: np.ndarray  # (n,) 1.0 per real token


class LookupEmbeddings:
    """Trainable token table; OOV tokens share the trained UNK row."""

    def __init__(self, table, vocab):
        self.table = table  # Tensor (V, d)
        self.vocab = vocab

    @classmethod
    def init(cls, rng, vocab, dim):
        return cls(T.parameter(glorot(rng, (len(vocab), dim))), vocab)

    @property
    def dim(self):
        return self.table.shape[1]

    @property
    def trainable(self):
        return True

    def embed_tokens(self, tokens):
        return T.gather_rows(self.table, [self.vocab.id_for(t) for t in tokens])

    def doc_embeddings(self, record):
        return self.embed_tokens(record.doc_tokens)

    def named_tensors(self, prefix):
        yield f"{prefix}.table", self.table


class FileEmbeddings:
    """Frozen per-token rows from an embedding file; records point into
    the file through their embedding_ref."""

    def __init__(self, rows, file_name):
        self.rows = rows
        self.file_name = file_name

    @property
    def dim(self):
        return self.rows.shape[1]

    @property
    def trainable(self):
        return False

    def doc_embeddings(self, record):
        ref = record.embedding_ref
        if ref is None:
            raise EmbeddingFileError("record has no embedding_ref but embedding kind is 'file'")
        if os.path.basename(ref["file"]) != os.path.basename(self.file_name):
            raise EmbeddingFileError(
                f"record references {ref['file']!r}, loaded file is {self.file_name!r}"
            )
        start = ref["row_offset"]
        end = start + len(record.doc_tokens)
        if end > self.rows.shape[0]:
            raise EmbeddingFileError(
                f"embedding rows [{start}, {end}) out of range for {self.rows.shape[0]} rows"
            )
        return T.constant(self.rows[start:end])

    def named_tensors(self, prefix):
        return iter(())


def load_embeddings(path):
    """Open an embedding file as a frozen provider."""
    return FileEmbeddings(read_embedding_file(path), os.path.basename(path))


class EncoderParams:
    """Weights for one encoder configuration."""

    def __init__(self, cfg, mgcn=None, bilstm=None, graph_in_proj=None):
        self.cfg = cfg
        self.mgcn = mgcn
        self.bilstm = bilstm
        self.graph_in_proj = graph_in_proj  # Tensor (in_width, graph_width) or None

    @classmethod
    def init(cls, rng, cfg, label_space):
        mgcn = None
        bilstm = None
        graph_in_proj = None
        if cfg.mode in STRUCTURAL_MODES:
            label_sizes = {kind: label_space.size(kind) for kind in cfg.relations}
            mgcn = MgcnParams.init(rng, cfg.graph_width, label_sizes, cfg.hops)
            graph_in = 2 * cfg.lstm_hidden if cfg.mode == "seq_gcn" else cfg.embedding_dim
            if graph_in != cfg.graph_width:
                graph_in_proj = T.parameter(glorot(rng, (graph_in, cfg.graph_width)))
        if cfg.mode != "sem":
            lstm_in = cfg.graph_width if cfg.mode == "str_lstm" else cfg.embedding_dim
            bilstm = LstmParams.init(rng, lstm_in, cfg.lstm_hidden)
        return cls(cfg, mgcn, bilstm, graph_in_proj)

    def named_tensors(self, prefix):
        if self.graph_in_proj is not None:
            yield f"{prefix}.graph_in_proj", self.graph_in_proj
        if self.mgcn is not None:
            yield from self.mgcn.named_tensors(f"{prefix}.mgcn")
        if self.bilstm is not None:
            yield from self.bilstm.named_tensors(f"{prefix}.bilstm")


def _resolved_views(record, cfg, label_space):
    key = ("views", cfg.relations)
    cached = record._cache.get(key)
    if cached is None:
        cached = resolve_views(record.graphs, label_space, cfg.relations)
        record._cache[key] = cached
    return cached


def encode(record, cfg, params, provider, label_space=None):
    """Per-token document representation under the configured mode."""
    x = provider.doc_embeddings(record)
    n = x.shape[0]
    mask = np.ones(n)

    if cfg.mode == "sem":
        return EncodedDocument(x, mask)
    if cfg.mode == "sem_seq":
        return EncodedDocument(bilstm_forward(x, params.bilstm), mask)

    if label_space is None:
        raise ConfigError("structural modes need a label space")
    views = _resolved_views(record, cfg, label_space)

    def graph_stack(h):
        if params.graph_in_proj is not None:
            h = T.matmul(h, params.graph_in_proj)
        return mgcn_forward(h, views, cfg.hops, params.mgcn)

    if cfg.mode == "seq_gcn":
        return EncodedDocument(graph_stack(bilstm_forward(x, params.bilstm)), mask)
    if cfg.mode == "str_lstm":
        return EncodedDocument(bilstm_forward(graph_stack(x), params.bilstm), mask)
    # par_gcn_lstm: unweighted sum of the two branches
    h = T.add(graph_stack(x), bilstm_forward(x, params.bilstm))
    return EncodedDocument(h, mask)
