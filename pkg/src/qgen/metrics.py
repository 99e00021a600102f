"""ROUGE-L and ROUGE-1 F1 with a fixed, dependency-free tokenizer.

No stemming and no stopword removal: text is lower-cased and split on runs of
non-alphanumeric characters.
"""

from __future__ import annotations

import re
from collections import Counter
from typing import Sequence

TokenSequence = tuple[str, ...]

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> TokenSequence:
    """``"Tom-Thumb's table"`` -> ``("tom", "thumb", "s", "table")``."""
    return tuple(_TOKEN_RE.findall(text.lower()))


def _as_tokens(x: str | Sequence[str]) -> Sequence[str]:
    return tokenize(x) if isinstance(x, str) else x


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    # one row of length |b|+1, iterated over a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _f1(overlap: int, n_cand: int, n_ref: int) -> float:
    if n_cand == 0 or n_ref == 0 or overlap == 0:
        return 0.0
    p = overlap / n_cand
    r = overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_l_f1(candidate: str | Sequence[str], reference: str | Sequence[str]) -> float:
    c, r = _as_tokens(candidate), _as_tokens(reference)
    return _f1(lcs_length(c, r), len(c), len(r))


def rouge_1_f1(candidate: str | Sequence[str], reference: str | Sequence[str]) -> float:
    c, r = Counter(_as_tokens(candidate)), Counter(_as_tokens(reference))
    overlap = sum((c & r).values())
    return _f1(overlap, sum(c.values()), sum(r.values()))


def rouge(candidate: str, reference: str, variant: str = "l") -> float:
    variant = variant.lower()
    if variant == "l":
        return rouge_l_f1(candidate, reference)
    if variant == "1":
        return rouge_1_f1(candidate, reference)
    raise ValueError(f"unknown ROUGE variant {variant!r} (expected 'l' or '1')")
