"""Synthetic span-copy corpora for desk-scale training runs.

Each record is a small document of cue-prefixed sentences. The context
names one cue; the response is the rest of that sentence (a contiguous
document span). A controlled fraction of response tokens is rewritten to
fresh out-of-vocabulary words in both the document and the response, so
those tokens are only recoverable by copying. Sentences carry random
dependency trees; a marker token repeated across two sentences yields
coreference edges and entity spans, from which entity co-occurrence
edges are built with the standard window rule.
"""

import json
from dataclasses import dataclass

import numpy as np

from .graphs import build_entity_window_graph, parse_record

DEP_LABELS = ("nsubj", "obj", "amod", "det", "prep", "advmod", "conj")

ENTITY_WINDOW = 20


@dataclass(frozen=True)
class SynthSpec:
    docs: int = 200
    vocab: int = 50
    seed: int = 7
    oov_rate: float = 0.10
    min_sentences: int = 2
    max_sentences: int = 3
    min_sentence_len: int = 5  # content tokens per sentence, cue excluded
    max_sentence_len: int = 8
    marker_prob: float = 0.8

    def __post_init__(self):
        if self.vocab < 20:
            raise ValueError("vocab must be >= 20")
        if self.docs < 10:
            raise ValueError("docs must be >= 10")
        if not 0.0 <= self.oov_rate < 1.0:
            raise ValueError("oov_rate must be in [0, 1)")
        if self.min_sentences < 1 or self.max_sentences < self.min_sentences:
            raise ValueError("bad sentence count range")
        if self.min_sentence_len < 2 or self.max_sentence_len < self.min_sentence_len:
            raise ValueError("bad sentence length range")

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


class SynthWords:
    """Partition of the fixed vocabulary into functional pools."""

    def __init__(self, vocab_size):
        n_cues = max(4, vocab_size // 6)
        n_markers = max(2, vocab_size // 12)
        n_content = vocab_size - 2 - n_cues - n_markers
        if n_content < 6:
            raise ValueError(f"vocab size {vocab_size} leaves too few content words")
        self.ask = "ask"
        self.period = "."
        self.cues = [f"cue{i}" for i in range(n_cues)]
        self.markers = [f"ent{chr(ord('A') + i)}" for i in range(n_markers)]
        self.content = [f"w{i:02d}" for i in range(n_content)]

    def all_words(self):
        return [self.ask, self.period] + self.cues + self.markers + self.content


def _random_tree_edges(positions, rng):
    """Random recursive tree over a sentence; edges run parent -> child."""
    edges = []
    for i in range(1, len(positions)):
        parent = positions[int(rng.integers(0, i))]
        label = DEP_LABELS[int(rng.integers(0, len(DEP_LABELS)))]
        edges.append([parent, positions[i], label])
    return edges


def _make_record(words, spec, rng, oov_counter):
    n_sent = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
    cue_ids = rng.choice(len(words.cues), size=n_sent, replace=False)

    doc = []
    sentences = []  # (cue_pos, content_positions, period_pos)
    for s in range(n_sent):
        cue_pos = len(doc)
        doc.append(words.cues[int(cue_ids[s])])
        length = int(rng.integers(spec.min_sentence_len, spec.max_sentence_len + 1))
        content_positions = []
        for _ in range(length):
            content_positions.append(len(doc))
            doc.append(words.content[int(rng.integers(0, len(words.content)))])
        period_pos = len(doc)
        doc.append(words.period)
        sentences.append((cue_pos, content_positions, period_pos))

    # repeated marker across two sentences -> coref edges + entity spans
    coref_edges = []
    entity_spans = []
    if n_sent >= 2 and rng.random() < spec.marker_prob:
        marker = words.markers[int(rng.integers(0, len(words.markers)))]
        s1, s2 = rng.choice(n_sent, size=2, replace=False)
        positions = []
        for s in sorted((int(s1), int(s2))):
            content_positions = sentences[s][1]
            pos = content_positions[int(rng.integers(0, len(content_positions)))]
            doc[pos] = marker
            positions.append(pos)
        coref_edges = [[positions[0], positions[1], "coref"],
                       [positions[1], positions[0], "coref"]]
        entity_spans = [[pos, pos + 1] for pos in positions]
    ent_edges = build_entity_window_graph(
        [tuple(s) for s in entity_spans], window=ENTITY_WINDOW
    )

    dep_edges = []
    for cue_pos, content_positions, period_pos in sentences:
        dep_edges.extend(
            _random_tree_edges([cue_pos] + content_positions + [period_pos], rng)
        )

    target = int(rng.integers(0, n_sent))
    cue_pos, content_positions, period_pos = sentences[target]
    span = list(range(cue_pos, period_pos + 1))  # the whole cued sentence

    # out-of-vocabulary rewrite: document position and response token move
    # together, so the word stays copyable. Only content positions are
    # eligible (the cue must keep matching the context and the period ends
    # the sentence), so the per-position rate is scaled up to keep the
    # response-level fraction at oov_rate.
    eligible = [pos for pos in span if pos in set(content_positions)]
    if eligible and spec.oov_rate > 0.0:
        position_rate = min(1.0, spec.oov_rate * len(span) / len(eligible))
        for pos in eligible:
            if rng.random() < position_rate:
                doc[pos] = f"oov{next(oov_counter)}"

    response = [doc[pos] for pos in span]
    context = [words.ask, words.cues[int(cue_ids[target])]]

    obj = {
        "doc_tokens": doc,
        "context_tokens": context,
        "response_tokens": response,
        "graphs": {"dep": dep_edges, "coref": coref_edges, "ent": ent_edges},
    }
    if entity_spans:
        obj["entity_spans"] = entity_spans
    return parse_record(json.dumps(obj, ensure_ascii=False))


def _counter():
    i = 0
    while True:
        yield i
        i += 1


def gen_synthetic_corpus(spec):
    """Deterministic list of records for a SynthSpec."""
    rng = np.random.default_rng(spec.seed)
    words = SynthWords(spec.vocab)
    records = []
    # one counter across the corpus: every OOV word type stays rare, so a
    # frequency-built vocabulary can never absorb it
    oov_counter = _counter()
    for _ in range(spec.docs):
        records.append(_make_record(words, spec, rng, oov_counter))
    return records
