"""Word and character error rates from minimal edit alignments."""

from typing import Hashable, Mapping, Sequence

import numpy as np

from utils.data_types.result_types import ErrorCounts
from utils.errors import DataError

UNITS = ("word", "char")


def edit_distance_counts(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> ErrorCounts:
    """(S, D, I, N) of a minimal unit-cost alignment of `hyp` against `ref`.

    Among equally cheap alignments the backtrace prefers a substitution, then
    an insertion, then a deletion.
    """
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diagonal = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(diagonal, cost[i, j - 1] + 1, cost[i - 1, j] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif j > 0 and cost[i, j] == cost[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return ErrorCounts(subs, dels, ins, n)


def tokenize(text: str, unit: str) -> list[str]:
    """Words split on whitespace, or every character including spaces."""
    if unit == "word":
        return text.split()
    if unit == "char":
        return list(text)
    raise DataError(f"Unknown error-rate unit `{unit}`, expected one of {UNITS}")


def score_corpus(hypotheses: Mapping[str, str], references: Mapping[str, str], unit: str = "char") -> ErrorCounts:
    """Pooled counts over the corpus: rate = sum(S + D + I) / sum(N)."""
    missing = sorted(set(references) - set(hypotheses))
    extra = sorted(set(hypotheses) - set(references))
    if missing or extra:
        raise DataError(f"Decodes and references do not align: missing={missing[:10]} unexpected={extra[:10]}")
    total = ErrorCounts(0, 0, 0, 0)
    for utt_id in sorted(references):
        total = total + edit_distance_counts(tokenize(hypotheses[utt_id], unit), tokenize(references[utt_id], unit))
    return total
