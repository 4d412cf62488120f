"""Tests for whole-catalog evaluation."""

import json

import numpy as np
import pytest

from seqrec.core.autodiff import no_grad
from seqrec.core.encoder import Checkpoint, encode, init_params
from seqrec.core.errors import CheckpointFormatError
from seqrec.core.metrics import rank_targets
from seqrec.models.config import ModelConfig
from seqrec.services.data_service import SplitDataset
from seqrec.services.evaluation_service import (
    evaluate,
    evaluate_params,
    exclude_seen,
    score_histories,
    write_report,
)

NUM_USERS = 20
NUM_ITEMS = 50


@pytest.fixture
def model_config():
    return ModelConfig(embed_dim=16, num_heads=2, num_blocks=2, max_len=10)


@pytest.fixture
def params(model_config):
    return init_params(model_config, NUM_ITEMS, np.random.default_rng(21))


@pytest.fixture
def split():
    rng = np.random.default_rng(22)
    train = [rng.integers(1, NUM_ITEMS + 1, size=int(rng.integers(1, 14))).tolist() for _ in range(NUM_USERS)]
    return SplitDataset(
        users=list(range(NUM_USERS)),
        train=train,
        valid=rng.integers(1, NUM_ITEMS + 1, size=NUM_USERS).tolist(),
        test=rng.integers(1, NUM_ITEMS + 1, size=NUM_USERS).tolist(),
        num_items=NUM_ITEMS,
    )


def brute_force_metrics(params, config, split, target):
    hits = {5: [], 10: [], 20: []}
    gains = {5: [], 10: [], 20: []}
    table = params.item_embedding.data
    for i in range(len(split)):
        history = split.history(i, target)
        with no_grad():
            h = encode(np.array([history]), params, config).h.data[0, -1]
        scores = [float(table[item] @ h) for item in range(1, NUM_ITEMS + 1)]
        held_out = split.targets(target)[i]
        value = scores[held_out - 1]
        rank = 1 + sum(1 for j, s in enumerate(scores, start=1) if s > value or (s == value and j < held_out))
        for k in hits:
            hits[k].append(rank <= k)
            gains[k].append(1.0 / np.log2(rank + 1) if rank <= k else 0.0)
    return {k: np.mean(v) for k, v in hits.items()}, {k: np.mean(v) for k, v in gains.items()}


@pytest.mark.parametrize("target", ["valid", "test"])
def test_matches_brute_force(params, model_config, split, target):
    report = evaluate_params(params, model_config, split, target, batch_size=7)
    hr, ndcg = brute_force_metrics(params, model_config, split, target)
    assert report.users == NUM_USERS
    for k in (5, 10, 20):
        assert report.hr[k] == pytest.approx(hr[k], abs=1e-12)
        assert report.ndcg[k] == pytest.approx(ndcg[k], abs=1e-12)


def test_metrics_monotone_in_cutoff(params, model_config, split):
    report = evaluate_params(params, model_config, split, "test")
    assert report.hr[5] <= report.hr[10] <= report.hr[20]
    assert report.ndcg[5] <= report.ndcg[10] <= report.ndcg[20]


def test_evaluation_is_deterministic(params, model_config, split):
    first = evaluate_params(params, model_config, split, "test")
    second = evaluate_params(params, model_config, split, "test", batch_size=3)
    assert first.metrics() == pytest.approx(second.metrics(), abs=1e-12)


def test_scores_are_batch_size_independent(params, model_config, split):
    histories = [split.history(i, "valid") for i in range(len(split))]
    np.testing.assert_allclose(score_histories(params, model_config, histories, 4),
                               score_histories(params, model_config, histories, 64), atol=1e-12)


def test_exclude_seen_keeps_target():
    scores = np.array([[3.0, 2.0, 1.0]])
    out = exclude_seen(scores, [[1, 2, 2]], [2])
    np.testing.assert_array_equal(out, [[-np.inf, 2.0, 1.0]])
    np.testing.assert_array_equal(scores, [[3.0, 2.0, 1.0]])


def test_excluding_history_never_hurts_ranks(params, model_config, split):
    histories = [split.history(i, "test") for i in range(len(split))]
    targets = split.targets("test")
    scores = score_histories(params, model_config, histories)
    plain = rank_targets(scores, targets)
    filtered = rank_targets(exclude_seen(scores, histories, targets), targets)
    assert np.all(filtered <= plain)
    report = evaluate_params(params, model_config, split, "test", exclude_history=True)
    assert report.hr[20] >= evaluate_params(params, model_config, split, "test").hr[20]


def test_checkpoint_item_count_must_match(params, model_config, split):
    split.num_items = NUM_ITEMS + 1
    with pytest.raises(CheckpointFormatError):
        evaluate(Checkpoint(model_config, params), split)


def test_report_has_exactly_six_metrics(tmp_path, params, model_config, split):
    report = evaluate(Checkpoint(model_config, params), split, "test")
    path = write_report(report, tmp_path, stem="metrics_test")
    payload = json.loads(path.read_text())
    assert sorted(payload["metrics"]) == sorted(["HR@5", "HR@10", "HR@20", "NDCG@5", "NDCG@10", "NDCG@20"])
    assert payload["split"] == "test"
    assert (tmp_path / "metrics_test.txt").read_text().startswith("split")
