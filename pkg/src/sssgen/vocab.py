"""Fixed generation vocabulary with reserved special tokens."""

from collections import Counter

UNK = "<unk>"
SOS = "<s>"
EOS = "</s>"
SEP = "<sep>"
SPECIALS = (UNK, SOS, EOS, SEP)


class Vocabulary:
    def __init__(self, tokens):
        for special in SPECIALS:
            if special not in tokens[: len(SPECIALS)]:
                raise ValueError("vocabulary must start with the special tokens")
        self._tokens = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, records, max_size):
        """Most frequent corpus tokens (documents, contexts and responses),
        capped at max_size including the four specials."""
        counts = Counter()
        for record in records:
            counts.update(record.doc_tokens)
            counts.update(record.context_tokens)
            counts.update(record.response_tokens)
        budget = max_size - len(SPECIALS)
        if budget <= 0:
            raise ValueError("max_size leaves no room beyond special tokens")
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        kept = [tok for tok, _ in ranked[:budget] if tok not in SPECIALS]
        return cls(list(SPECIALS) + kept)

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def id_for(self, token):
        return self._ids.get(token, self._ids[UNK])

    def token(self, idx):
        return self._tokens[idx]

    @property
    def unk_id(self):
        return self._ids[UNK]

    @property
    def sos_id(self):
        return self._ids[SOS]

    @property
    def eos_id(self):
        return self._ids[EOS]

    def to_json(self):
        return list(self._tokens)

    @classmethod
    def from_json(cls, obj):
        return cls(list(obj))
