"""Corpus BLEU on whitespace tokens, scaled to [0, 1].

Modified n-gram precisions for n = 1..4, geometric mean with 1e-9
substituted for zero counts, and the standard brevity penalty.
"""

from __future__ import annotations

import math
from collections import Counter

from .errors import DataError

SMOOTH_EPS = 1e-9
MAX_ORDER = 4


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: list[str], references: list[str]) -> float:
    """Corpus-level BLEU of hypothesis strings against reference strings."""
    if len(hypotheses) != len(references):
        raise DataError(
            f"hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise DataError("empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = hyp.split()
        r = ref.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            totals[n - 1] += max(len(h) - n + 1, 0)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(MAX_ORDER):
        num = matches[n] if matches[n] > 0 else SMOOTH_EPS
        den = totals[n] if totals[n] > 0 else 1
        log_sum += math.log(num / den)
    geo = math.exp(log_sum / MAX_ORDER)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * geo
