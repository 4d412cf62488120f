"""Whole-catalog ranking evaluation of a trained encoder."""

import json
import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np

from seqrec.core.autodiff import no_grad
from seqrec.core.encoder import Checkpoint, SasrecParams, encode, score_items
from seqrec.core.errors import CheckpointFormatError
from seqrec.core.losses import pool_sequence
from seqrec.core.metrics import rank_targets, summarize
from seqrec.models.config import ModelConfig
from seqrec.models.reports import CUTOFFS, MetricsReport
from seqrec.services.data_service import SplitDataset, left_pad

logger = logging.getLogger(__name__)


def score_histories(params: SasrecParams, config: ModelConfig, histories: Sequence[Sequence[int]],
                    batch_size: int = 256) -> np.ndarray:
    """
    Eval-mode scores of every real item for each history.

    Returns:
        (len(histories), N) matrix whose column i - 1 scores item i
    """
    rows = []
    with no_grad():
        for start in range(0, len(histories), batch_size):
            inputs = left_pad(histories[start:start + batch_size], config.max_len)
            pooled = pool_sequence(encode(inputs, params, config))
            scores = score_items(pooled, params.item_embedding).data
            rows.append(scores[:, 1:params.num_items + 1])
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, params.num_items))


def exclude_seen(scores: np.ndarray, histories: Sequence[Sequence[int]], targets: Sequence[int]) -> np.ndarray:
    """Push history items other than the target to the bottom of the ranking."""
    scores = scores.copy()
    for row, (history, target) in enumerate(zip(histories, targets)):
        seen = np.asarray([i for i in set(history) if i != target], dtype=np.int64)
        if seen.size:
            scores[row, seen - 1] = -np.inf
    return scores


def evaluate_scores(scores: np.ndarray, targets: Sequence[int], split_name: str) -> MetricsReport:
    """Aggregate HR@K / NDCG@K from a score matrix and the held-out items."""
    ranks = rank_targets(scores, targets)
    summary = summarize(ranks, CUTOFFS)
    return MetricsReport(split=split_name, users=len(ranks), hr=summary["hr"], ndcg=summary["ndcg"])


def evaluate_params(params: SasrecParams, config: ModelConfig, split: SplitDataset, target: str = "valid",
                    exclude_history: bool = False, batch_size: int = 256) -> MetricsReport:
    """
    Rank each user's held-out ``target`` item ('valid' or 'test') against the whole catalog.

    Validation encodes the training prefix; test encodes the prefix plus the
    validation item.
    """
    histories: List[List[int]] = [split.history(i, target) for i in range(len(split))]
    targets = split.targets(target)
    scores = score_histories(params, config, histories, batch_size)
    if exclude_history:
        scores = exclude_seen(scores, histories, targets)
    report = evaluate_scores(scores, targets, target)
    logger.debug(f"Evaluated {report.users} users on {target}: NDCG@10={report.ndcg[10]:.4f}")
    return report


def evaluate(checkpoint: Checkpoint, split: SplitDataset, target: str = "test",
             exclude_history: bool = False, batch_size: int = 256) -> MetricsReport:
    """Evaluate a checkpoint on one split target."""
    if checkpoint.params.num_items != split.num_items:
        raise CheckpointFormatError(
            f"checkpoint covers {checkpoint.params.num_items} items but the split has {split.num_items}")
    report = evaluate_params(checkpoint.params, checkpoint.config, split, target, exclude_history, batch_size)
    logger.info(f"📊 {target} metrics: " + ", ".join(f"{k}={v:.4f}" for k, v in report.metrics().items()))
    return report


def write_report(report: MetricsReport, out_dir: Path, stem: str = "metrics") -> Path:
    """Write ``<stem>.json`` and the aligned-column ``<stem>.txt``; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n")
    (out_dir / f"{stem}.txt").write_text(report.to_text())
    return json_path
