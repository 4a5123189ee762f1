"""Corpus evaluation metrics: 4-gram precision score and unigram/bigram/
longest-common-subsequence overlap scores. All scores are on a 0-100
scale. Candidates and references are token lists."""

import math
from collections import Counter


class MetricError(ValueError):
    pass


def _check_pairs(candidates, references):
    if len(candidates) == 0:
        raise MetricError("no candidates to score")
    if len(candidates) != len(references):
        raise MetricError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates, references, smooth=False):
    """Corpus-level geometric mean of modified 1..4-gram precisions with a
    brevity penalty. Unsmoothed by default: any empty n-gram overlap
    zeroes the score. ``smooth`` adds one to empty numerators and their
    denominators instead."""
    _check_pairs(candidates, references)
    matches = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            cand_counts = _ngrams(cand, n)
            ref_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            totals[n - 1] += sum(cand_counts.values())
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            if not smooth:
                return 0.0
            m, t = 1, t + 1
        if t == 0:
            return 0.0
        log_sum += math.log(m / t)
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_sum / 4.0) * 100.0


def _f1(overlap, cand_total, ref_total):
    if cand_total == 0 or ref_total == 0 or overlap == 0:
        return 0.0
    precision = overlap / cand_total
    recall = overlap / ref_total
    return 2.0 * precision * recall / (precision + recall)


def _lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge(candidates, references):
    """Per-pair F1 for unigram overlap, bigram overlap and longest common
    subsequence, averaged over the corpus; returns (R1, R2, RL)."""
    _check_pairs(candidates, references)
    r1 = r2 = rl = 0.0
    for cand, ref in zip(candidates, references):
        for n, acc in ((1, "r1"), (2, "r2")):
            cand_counts = _ngrams(cand, n)
            ref_counts = _ngrams(ref, n)
            overlap = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            score = _f1(overlap, sum(cand_counts.values()), sum(ref_counts.values()))
            if n == 1:
                r1 += score
            else:
                r2 += score
        lcs = _lcs_length(cand, ref)
        rl += _f1(lcs, len(cand), len(ref))
    n_pairs = len(candidates)
    return (100.0 * r1 / n_pairs, 100.0 * r2 / n_pairs, 100.0 * rl / n_pairs)
