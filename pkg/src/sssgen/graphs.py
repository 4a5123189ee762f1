"""Data model for documents, conversations and their labeled multi-graphs.

A corpus file is UTF-8 JSON lines. Each line carries doc_tokens,
context_tokens, response_tokens, a graphs object with dep/coref/ent edge
arrays of [source, target, label], plus optional entity_spans and an
optional embedding_ref {file, row_offset}. Types are immutable after
parsing and safe to share across threads.
"""

import json
from dataclasses import dataclass, field

RELATION_KINDS = ("dep", "coref", "ent")

ENT_LABEL = "ent"


class CorpusFormatError(ValueError):
    """Malformed corpus line; message carries the 1-based line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class Edge:
    """Directed labeled edge between two token positions.

    Self-loops are never stored; the self contribution of a node is
    modeled by a separate transform in the encoder.
    """

    source: int
    target: int
    label: int
    kind: str


@dataclass(frozen=True)
class LabeledMultiGraph:
    """Per-document edge lists for each relation kind.

    Parallel edges between the same pair are allowed only when they
    differ in kind or label. ``labels[kind]`` maps label id -> string.
    """

    n_tokens: int
    edges: dict  # kind -> tuple[Edge]
    labels: dict  # kind -> tuple[str]

    def label_string(self, edge):
        return self.labels[edge.kind][edge.label]

    def kinds_present(self):
        return tuple(k for k in RELATION_KINDS if self.edges.get(k))


@dataclass(frozen=True)
class CorpusRecord:
    doc_tokens: tuple
    context_tokens: tuple
    response_tokens: tuple
    graphs: LabeledMultiGraph
    entity_spans: tuple = ()  # [start, end) token ranges
    embedding_ref: dict = None  # {"file": str, "row_offset": int}
    # forward/decode caches keyed by config; not part of the record's value
    _cache: dict = field(default_factory=dict, compare=False, repr=False)


def _require(cond, message, line_no):
    if not cond:
        raise CorpusFormatError(message, line_no)


def _build_graph(n_tokens, raw_graphs, line_no):
    edges = {}
    labels = {}
    seen = set()
    for kind in RELATION_KINDS:
        raw = raw_graphs.get(kind, [])
        _require(isinstance(raw, list), f"graphs.{kind} must be an array", line_no)
        vocab = []
        vocab_ids = {}
        kind_edges = []
        for item in raw:
            _require(
                isinstance(item, list) and len(item) == 3,
                f"graphs.{kind} entries must be [source, target, label]",
                line_no,
            )
            s, t, lab = item
            _require(
                isinstance(s, int) and isinstance(t, int) and isinstance(lab, str),
                f"graphs.{kind} entry types must be [int, int, str]",
                line_no,
            )
            _require(0 <= s < n_tokens and 0 <= t < n_tokens, "edge index out of range", line_no)
            _require(s != t, "self-loop edges are not allowed", line_no)
            key = (kind, s, t, lab)
            _require(key not in seen, f"duplicate {kind} edge {s}->{t} with label {lab!r}", line_no)
            seen.add(key)
            if lab not in vocab_ids:
                vocab_ids[lab] = len(vocab)
                vocab.append(lab)
            kind_edges.append(Edge(s, t, vocab_ids[lab], kind))
        edges[kind] = tuple(kind_edges)
        labels[kind] = tuple(vocab)
    return LabeledMultiGraph(n_tokens, edges, labels)


def parse_record(line, line_no=None):
    """Parse one corpus line into a validated CorpusRecord."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"invalid JSON ({exc.msg})", line_no) from exc
    _require(isinstance(obj, dict), "record must be an object", line_no)
    for key in ("doc_tokens", "context_tokens", "response_tokens"):
        _require(key in obj, f"missing key {key!r}", line_no)
        _require(
            isinstance(obj[key], list) and all(isinstance(t, str) for t in obj[key]),
            f"{key} must be an array of strings",
            line_no,
        )
    doc = tuple(obj["doc_tokens"])
    context = tuple(obj["context_tokens"])
    response = tuple(obj["response_tokens"])
    _require(len(doc) > 0, "doc_tokens is empty", line_no)
    _require(len(response) > 0, "response_tokens is empty", line_no)

    raw_graphs = obj.get("graphs", {})
    _require(isinstance(raw_graphs, dict), "graphs must be an object", line_no)
    unknown = set(raw_graphs) - set(RELATION_KINDS)
    _require(not unknown, f"unknown relation kinds {sorted(unknown)}", line_no)
    graph = _build_graph(len(doc), raw_graphs, line_no)

    spans = obj.get("entity_spans", [])
    _require(isinstance(spans, list), "entity_spans must be an array", line_no)
    parsed_spans = []
    for span in spans:
        _require(
            isinstance(span, list) and len(span) == 2 and all(isinstance(v, int) for v in span),
            "entity_spans entries must be [start, end]",
            line_no,
        )
        start, end = span
        _require(0 <= start < end <= len(doc), "entity span out of range", line_no)
        parsed_spans.append((start, end))

    ref = obj.get("embedding_ref")
    if ref is not None:
        _require(
            isinstance(ref, dict)
            and isinstance(ref.get("file"), str)
            and isinstance(ref.get("row_offset"), int)
            and ref["row_offset"] >= 0,
            "embedding_ref must be {file: str, row_offset: int >= 0}",
            line_no,
        )
        ref = {"file": ref["file"], "row_offset": ref["row_offset"]}

    return CorpusRecord(
        doc_tokens=doc,
        context_tokens=context,
        response_tokens=response,
        graphs=graph,
        entity_spans=tuple(parsed_spans),
        embedding_ref=ref,
    )


def serialize_record(record):
    """Canonical one-line JSON for a record; parse/serialize round-trips."""
    graphs = {}
    for kind in RELATION_KINDS:
        graphs[kind] = [
            [e.source, e.target, record.graphs.label_string(e)]
            for e in record.graphs.edges.get(kind, ())
        ]
    obj = {
        "doc_tokens": list(record.doc_tokens),
        "context_tokens": list(record.context_tokens),
        "response_tokens": list(record.response_tokens),
        "graphs": graphs,
    }
    if record.entity_spans:
        obj["entity_spans"] = [list(s) for s in record.entity_spans]
    if record.embedding_ref is not None:
        obj["embedding_ref"] = {
            "file": record.embedding_ref["file"],
            "row_offset": record.embedding_ref["row_offset"],
        }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), sort_keys=True)


def read_corpus(path):
    """Load a corpus file; errors carry the offending line number."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            records.append(parse_record(line, line_no=i))
    return records


def write_corpus(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(serialize_record(record) + "\n")


def build_entity_window_graph(entity_spans, window=20):
    """Connect head tokens of entities whose span starts are within
    ``window`` positions of each other, in both directions.

    Spans must be sorted and non-overlapping. Returns [source, target,
    label] triples of kind ``ent``.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    spans = list(entity_spans)
    for i, (start, end) in enumerate(spans):
        if start >= end:
            raise ValueError(f"empty entity span [{start}, {end})")
        if i and start < spans[i - 1][1]:
            raise ValueError("entity spans overlap or are unsorted")
    edges = []
    for i in range(len(spans)):
        for j in range(i + 1, len(spans)):
            if spans[j][0] - spans[i][0] <= window:
                head_i, head_j = spans[i][0], spans[j][0]
                edges.append([head_i, head_j, ENT_LABEL])
                edges.append([head_j, head_i, ENT_LABEL])
    return edges


def neighborhood_view(graph, kind, node):
    """Directed neighborhood of ``node`` for one relation kind.

    Every stored edge (u, v) shows up as (v, "out", label) in u's view
    and (u, "in", label) in v's view; the node itself never appears.
    """
    if not 0 <= node < graph.n_tokens:
        raise IndexError(f"node {node} out of range for {graph.n_tokens} tokens")
    view = []
    for edge in graph.edges.get(kind, ()):
        if edge.source == node:
            view.append((edge.target, "out", edge.label))
        if edge.target == node:
            view.append((edge.source, "in", edge.label))
    return view


def all_views(graph, kind):
    """Per-node neighborhood views in one pass over the edge list."""
    views = [[] for _ in range(graph.n_tokens)]
    for edge in graph.edges.get(kind, ()):
        views[edge.source].append((edge.target, "out", edge.label))
        views[edge.target].append((edge.source, "in", edge.label))
    return views


OTHER_LABEL = "<other>"


class LabelSpace:
    """Corpus-level label inventory per relation kind.

    Keeps the most frequent labels up to a cap and funnels the rest into
    a shared overflow bucket, so per-label parameter tables stay small.
    """

    def __init__(self, table):
        # table: kind -> dict label -> id; OTHER_LABEL always present
        self._table = table

    @classmethod
    def build(cls, records, kinds=RELATION_KINDS, cap=32):
        counts = {kind: {} for kind in kinds}
        for record in records:
            for kind in kinds:
                for edge in record.graphs.edges.get(kind, ()):
                    lab = record.graphs.label_string(edge)
                    counts[kind][lab] = counts[kind].get(lab, 0) + 1
        table = {}
        for kind in kinds:
            ranked = sorted(counts[kind].items(), key=lambda kv: (-kv[1], kv[0]))
            kept = [lab for lab, _ in ranked[:cap]]
            mapping = {lab: i for i, lab in enumerate(kept)}
            mapping[OTHER_LABEL] = len(mapping)
            table[kind] = mapping
        return cls(table)

    def kinds(self):
        return tuple(self._table)

    def size(self, kind):
        return len(self._table[kind])

    def id_for(self, kind, label):
        mapping = self._table[kind]
        return mapping.get(label, mapping[OTHER_LABEL])

    def to_json(self):
        return {kind: sorted(m, key=m.get) for kind, m in self._table.items()}

    @classmethod
    def from_json(cls, obj):
        return cls({kind: {lab: i for i, lab in enumerate(labs)} for kind, labs in obj.items()})
