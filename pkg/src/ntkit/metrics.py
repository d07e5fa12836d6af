"""Corpus scoring: WER, BLEU, length ratio, real-time factor.

Scores are deterministic and self-contained.  BLEU is corpus-level over
n-gram orders 1..4 with brevity penalty; any order with zero matched
n-grams gets 0.1 added to its matched count (and nothing else changes),
so near-miss corpora score low but nonzero.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import math

from .tensor import ContractError

FRAME_SECONDS = 0.01  # 10 ms frame shift


def _check_aligned(refs, hyps):
    if not refs:
        raise ContractError("empty reference corpus")
    if set(refs) != set(hyps):
        raise ContractError("reference and hypothesis ids differ")


def _edit_distance(ref, hyp):
    # token-level Levenshtein, two-row DP
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i]
        for j, h in enumerate(hyp, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h)))
        prev = cur
    return prev[-1]


def wer(refs, hyps):
    """Corpus-pooled (S+D+I)/N.  Exceeds 1.0 when insertions dominate."""
    _check_aligned(refs, hyps)
    errors = sum(_edit_distance(refs[k], hyps[k]) for k in refs)
    n = sum(len(refs[k]) for k in refs)
    if n == 0:
        raise ContractError("reference corpus has no tokens")
    return errors / n


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(refs, hyps, max_order=4):
    """Corpus BLEU on a 0-100 scale, single reference per utterance."""
    _check_aligned(refs, hyps)
    hyp_len = sum(len(hyps[k]) for k in refs)
    ref_len = sum(len(refs[k]) for k in refs)
    if hyp_len == 0:
        return 0.0
    matched = [0] * max_order
    total = [0] * max_order
    for k in sorted(refs):
        for n in range(1, max_order + 1):
            hyp_counts = _ngrams(hyps[k], n)
            ref_counts = _ngrams(refs[k], n)
            matched[n - 1] += sum((hyp_counts & ref_counts).values())
            total[n - 1] += max(0, len(hyps[k]) - n + 1)
    if min(total) == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matched, total):
        log_p += math.log((m if m > 0 else 0.1) / t)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_order)


def length_ratio(refs, hyps):
    """Total hypothesis tokens over total reference tokens."""
    _check_aligned(refs, hyps)
    ref_len = sum(len(refs[k]) for k in refs)
    if ref_len == 0:
        raise ContractError("reference corpus has no tokens")
    return sum(len(hyps[k]) for k in refs) / ref_len


def rtf(timings, frame_count):
    """Processing seconds per second of audio at a 10 ms frame shift."""
    if frame_count < 1:
        raise ContractError("frame_count must be >= 1")
    seconds = timings if isinstance(timings, (int, float)) else sum(timings)
    return seconds / (frame_count * FRAME_SECONDS)


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)
    per_utterance: list = field(default_factory=list)  # (id, name, value)

    def write(self, fh):
        for name in sorted(self.metrics):
            fh.write(f"{name}\t{self.metrics[name]:.6g}\n")
        if self.per_utterance:
            fh.write("# per-utterance\n")
            for uid, name, value in self.per_utterance:
                fh.write(f"{uid}\t{name}\t{value:.6g}\n")
