"""Kendall's tau between complexity measures and generalization error."""

from __future__ import annotations

from typing import Sequence


def kendall_tau(scores_a: Sequence[float], scores_b: Sequence[float]) -> float:
    """``(concordant - discordant) / total pairs``.

    A pair tied in either list counts as neither concordant nor discordant but
    stays in the denominator (the tau-a convention).
    """
    if len(scores_a) != len(scores_b):
        raise ValueError(f"length mismatch: {len(scores_a)} vs {len(scores_b)}")
    n = len(scores_a)
    if n < 2:
        raise ValueError("need at least two items to rank")
    score = 0
    for i in range(n):
        for j in range(i + 1, n):
            score += _sign(scores_a[i], scores_a[j]) * _sign(scores_b[i], scores_b[j])
    return score / (n * (n - 1) // 2)


def _sign(x: float, y: float) -> int:
    return (x > y) - (x < y)


def is_constant(scores: Sequence[float]) -> bool:
    return all(s == scores[0] for s in scores)
