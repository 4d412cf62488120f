"""Tests for whole-catalog ranking metrics."""

import numpy as np
import pytest

from seqrec.core.errors import ContractError, ItemIndexError
from seqrec.core.metrics import hr_at_k, ndcg_at_k, rank_target, rank_targets, summarize


def test_rank_counts_strictly_higher_items():
    assert rank_target([0.1, 0.9, 0.5, 0.9, 0.2], 3) == 3


def test_ties_go_to_smaller_index():
    scores = [0.1, 0.9, 0.5, 0.9, 0.2]
    assert rank_target(scores, 2) == 1
    assert rank_target(scores, 4) == 2
    assert [rank_target(np.ones(4), t) for t in range(1, 5)] == [1, 2, 3, 4]


def test_rank_target_out_of_range():
    with pytest.raises(ItemIndexError):
        rank_target([0.1, 0.2], 0)
    with pytest.raises(ItemIndexError):
        rank_target([0.1, 0.2], 3)


def test_rank_targets_matches_single_rows():
    rng = np.random.default_rng(0)
    scores = rng.integers(0, 5, size=(30, 12)).astype(float)
    targets = rng.integers(1, 13, size=30)
    expected = [rank_target(row, t) for row, t in zip(scores, targets)]
    np.testing.assert_array_equal(rank_targets(scores, targets), expected)


def test_hit_ratio_examples():
    assert hr_at_k([1, 5, 11, 20], 10) == 0.5
    assert hr_at_k([1], 1) == 1.0
    assert hr_at_k([2], 1) == 0.0


def test_ndcg_examples():
    assert ndcg_at_k([1], 10) == 1.0
    assert ndcg_at_k([3], 10) == pytest.approx(0.5)
    assert ndcg_at_k([11], 10) == 0.0
    assert ndcg_at_k([1, 3], 5) == pytest.approx(0.75)


def test_metrics_reject_empty_input():
    with pytest.raises(ContractError):
        hr_at_k([], 5)
    with pytest.raises(ContractError):
        ndcg_at_k([], 5)


def test_metrics_grow_with_cutoff():
    ranks = np.random.default_rng(1).integers(1, 40, size=200)
    summary = summarize(ranks, [5, 10, 20])
    assert summary["hr"][5] <= summary["hr"][10] <= summary["hr"][20]
    assert summary["ndcg"][5] <= summary["ndcg"][10] <= summary["ndcg"][20]
    for k in (5, 10, 20):
        assert 0.0 <= summary["ndcg"][k] <= summary["hr"][k] <= 1.0
