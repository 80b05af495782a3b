"""Longest-common-subsequence length and the edit change ratio."""

from __future__ import annotations

from typing import Hashable, Sequence

from ..errors import InvalidInputError


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Length of the longest common subsequence, O(|a|*|b|) time, O(min) memory."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]


def units(seq: Sequence[int] | str) -> list:
    """Comparison units: token ids as-is, text split into whitespace-delimited words."""
    if isinstance(seq, str):
        return seq.split()
    return list(seq)


def change_ratio(y_minus: Sequence[int] | str, y_plus: Sequence[int] | str) -> float:
    """``1 - LCS(y_minus, y_plus) / |y_plus|``; both arguments must use the same units."""
    if isinstance(y_minus, str) != isinstance(y_plus, str):
        raise InvalidInputError("y_minus and y_plus must both be text or both be token ids")
    a, b = units(y_minus), units(y_plus)
    if len(b) == 0:
        raise InvalidInputError("rectified response must be non-empty")
    return 1.0 - lcs_length(a, b) / len(b)
