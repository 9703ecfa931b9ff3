"""BLEU-4 and ROUGE-1/2/L on a lowercase word/punctuation tokenization.

Scores are on a 0-100 scale.  BLEU uses add-one smoothing on the 2..4-gram
precisions only, so a candidate sharing no unigram with its reference
scores exactly 0.
"""

from __future__ import annotations

import math
import re
from collections import Counter

_TOKEN = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(pairs, max_n: int = 4) -> float:
    """BLEU over (candidate, reference) string pairs, one reference each."""
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in pairs:
        c, r = tokenize(cand), tokenize(ref)
        cand_len += len(c)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matches[n - 1] += sum(min(v, rn[g]) for g, v in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    if cand_len == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(1, max_n):
        log_p += math.log((matches[n] + 1) / (totals[n] + 1))
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def _f1(overlap, n_cand, n_ref):
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 100.0 * 2 * p * r / (p + r)


def rouge_n(cand: list[str], ref: list[str], n: int) -> float:
    cn, rn = _ngrams(cand, n), _ngrams(ref, n)
    overlap = sum((cn & rn).values())
    return _f1(overlap, sum(cn.values()), sum(rn.values()))


def _lcs(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(cand: list[str], ref: list[str]) -> float:
    return _f1(_lcs(cand, ref), len(cand), len(ref))


def score_text(candidate: str, reference: str) -> dict:
    c, r = tokenize(candidate), tokenize(reference)
    return {
        "bleu4": corpus_bleu([(candidate, reference)]),
        "rouge1": rouge_n(c, r, 1),
        "rouge2": rouge_n(c, r, 2),
        "rougeL": rouge_l(c, r),
    }
