"""Whole-catalog ranking metrics for a single held-out item per user."""

from typing import Dict, Sequence

import numpy as np

from .errors import ContractError, DimensionError, ItemIndexError


def rank_target(scores: Sequence[float], target: int) -> int:
    """
    1-based rank of ``target`` among items 1..N, where ``scores[i - 1]`` scores item i.

    Items scoring strictly higher rank ahead; ties go to the smaller item index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise DimensionError(f"rank_target expects a score vector, got shape {scores.shape}")
    if not 1 <= target <= scores.shape[0]:
        raise ItemIndexError(f"target item {target} outside [1, {scores.shape[0]}]")
    value = scores[target - 1]
    ahead = np.count_nonzero(scores > value) + np.count_nonzero(scores[:target - 1] == value)
    return int(ahead) + 1


def rank_targets(scores: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Row-wise ``rank_target`` for a (B, N) score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if scores.ndim != 2 or targets.shape != (scores.shape[0],):
        raise DimensionError(f"scores {scores.shape} and targets {targets.shape} are not aligned")
    n = scores.shape[1]
    if np.any((targets < 1) | (targets > n)):
        raise ItemIndexError(f"target items must lie in [1, {n}]")
    value = scores[np.arange(len(targets)), targets - 1][:, None]
    before = np.arange(1, n + 1)[None, :] < targets[:, None]
    ahead = (scores > value) | ((scores == value) & before)
    return ahead.sum(axis=1) + 1


def _check(ranks: Sequence[int]) -> np.ndarray:
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise ContractError("ranking metrics need at least one rank")
    return ranks


def hr_at_k(ranks: Sequence[int], k: int) -> float:
    """Fraction of users whose held-out item ranks within the top ``k``."""
    ranks = _check(ranks)
    return float(np.mean(ranks <= k))


def ndcg_at_k(ranks: Sequence[int], k: int) -> float:
    """Mean of 1 / log2(rank + 1) over users, counting 0 beyond ``k``."""
    ranks = _check(ranks)
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def summarize(ranks: Sequence[int], cutoffs: Sequence[int]) -> Dict[str, Dict[int, float]]:
    return {
        "hr": {k: hr_at_k(ranks, k) for k in cutoffs},
        "ndcg": {k: ndcg_at_k(ranks, k) for k in cutoffs},
    }
