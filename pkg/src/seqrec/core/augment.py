"""
Sequence augmentation operators and the item-correlation table behind the
informative ones.

Every operator is a pure function of its inputs and the generator it is
handed; identical seeds give identical outputs.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..models.config import AugmentConfig
from .errors import ContractError
from .operations.operation_registry import INFORMATIVE, RANDOM, OperationRegistry

logger = logging.getLogger(__name__)

IDENTITY = "identity"

registry = OperationRegistry()


@dataclass
class AugmentResult:
    """Augmented sequence, the operator that produced it and whether it was a no-op by contract."""

    sequence: List[int]
    tag: str
    skipped: bool = False


def _count(ratio: float, length: int) -> int:
    # floor with a tolerance for products such as 0.29 * 100
    return int(math.floor(ratio * length + 1e-9))


@dataclass
class CorrelationTable:
    """Top-k correlated items per item, ranked by descending score then ascending index."""

    ranked: Dict[int, List[Tuple[int, float]]] = field(default_factory=dict)
    scores: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def top(self, item: int) -> Optional[int]:
        correlates = self.ranked.get(int(item))
        return correlates[0][0] if correlates else None

    def correlates(self, item: int) -> List[Tuple[int, float]]:
        return list(self.ranked.get(int(item), []))

    def score(self, a: int, b: int) -> float:
        """Raw correlation of a pair; 0.0 for pairs that never co-occur."""
        return self.scores.get((int(a), int(b)), 0.0)

    def __len__(self) -> int:
        return len(self.ranked)

    def to_frame(self) -> pd.DataFrame:
        rows = [(item, other, score) for item in sorted(self.ranked) for other, score in self.ranked[item]]
        return pd.DataFrame(rows, columns=["item", "correlate", "score"])

    def to_tsv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, sep="\t", index=False, float_format="%.17g")

    @classmethod
    def from_tsv(cls, path: Path) -> "CorrelationTable":
        frame = pd.read_csv(path, sep="\t", dtype={"item": np.int64, "correlate": np.int64, "score": np.float64},
                            float_precision="round_trip")
        return cls.from_frame(frame)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "CorrelationTable":
        ranked: Dict[int, List[Tuple[int, float]]] = {}
        scores: Dict[Tuple[int, int], float] = {}
        for item, other, score in frame[["item", "correlate", "score"]].itertuples(index=False):
            ranked.setdefault(int(item), []).append((int(other), float(score)))
            scores[(int(item), int(other))] = float(score)
        return cls(ranked=ranked, scores=scores)


def build_correlation(sequences: Sequence[Sequence[int]], window: int = 5, top_k: int = 10) -> CorrelationTable:
    """
    Windowed co-occurrence correlations over training sequences.

    Two distinct items co-occur when they sit fewer than ``window`` positions
    apart in a sequence. The score of a pair is its co-occurrence count
    divided by sqrt(n_a * n_b), where n_x counts the occurrences of item x.
    """
    firsts, seconds = [], []
    occurrences = []
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.int64)
        occurrences.append(seq)
        for offset in range(1, min(window, len(seq))):
            firsts.append(seq[:-offset])
            seconds.append(seq[offset:])
    if not firsts:
        return CorrelationTable()

    a = np.concatenate(firsts)
    b = np.concatenate(seconds)
    distinct = a != b
    a, b = a[distinct], b[distinct]
    pairs = pd.DataFrame({"item": np.concatenate([a, b]), "correlate": np.concatenate([b, a])})
    counts = pairs.groupby(["item", "correlate"]).size().rename("count").reset_index()
    if counts.empty:
        return CorrelationTable()

    occurrence = np.bincount(np.concatenate(occurrences))
    n_item = occurrence[counts["item"].to_numpy()]
    n_correlate = occurrence[counts["correlate"].to_numpy()]
    counts["score"] = counts["count"].to_numpy() / np.sqrt(n_item * n_correlate)
    scores = {(int(i), int(c)): float(s) for i, c, s in counts[["item", "correlate", "score"]].itertuples(index=False)}

    ordered = counts.sort_values(["item", "score", "correlate"], ascending=[True, False, True], kind="mergesort")
    top = ordered.groupby("item", sort=True).head(top_k)
    table = CorrelationTable.from_frame(top)
    table.scores = scores
    logger.info(f"🔗 Correlation table built for {len(table)} items (window={window}, top_k={top_k})")
    return table


@registry.register("crop", RANDOM, "crop_ratio")
def crop(seq: Sequence[int], ratio: float, rng: np.random.Generator) -> AugmentResult:
    """Random contiguous subsequence of length max(1, floor(ratio * len))."""
    seq = list(seq)
    if len(seq) < 2:
        return AugmentResult(seq, "crop", skipped=True)
    length = max(1, _count(ratio, len(seq)))
    start = int(rng.integers(0, len(seq) - length + 1))
    return AugmentResult(seq[start:start + length], "crop")


@registry.register("mask", RANDOM, "mask_ratio")
def mask_items(seq: Sequence[int], ratio: float, rng: np.random.Generator, *, mask_token: int) -> AugmentResult:
    """Replace floor(ratio * len) distinct positions by the mask token."""
    if mask_token <= 0:
        raise ContractError(f"mask token must be a positive index distinct from padding, got {mask_token}")
    seq = list(seq)
    count = _count(ratio, len(seq))
    if not seq or count == 0:
        return AugmentResult(seq, "mask", skipped=not seq)
    for position in rng.choice(len(seq), size=count, replace=False):
        seq[position] = mask_token
    return AugmentResult(seq, "mask")


@registry.register("reorder", RANDOM, "reorder_ratio")
def reorder(seq: Sequence[int], ratio: float, rng: np.random.Generator) -> AugmentResult:
    """Shuffle one contiguous segment of length floor(ratio * len)."""
    seq = list(seq)
    segment = _count(ratio, len(seq))
    if len(seq) < 2 or segment <= 1:
        return AugmentResult(seq, "reorder", skipped=len(seq) < 2)
    start = int(rng.integers(0, len(seq) - segment + 1))
    window = seq[start:start + segment]
    seq[start:start + segment] = [window[i] for i in rng.permutation(segment)]
    return AugmentResult(seq, "reorder")


@registry.register("substitute", INFORMATIVE, "substitute_ratio")
def substitute(seq: Sequence[int], ratio: float, table: CorrelationTable,
               rng: np.random.Generator) -> AugmentResult:
    """Replace floor(ratio * len) positions by the top correlate of their item."""
    seq = list(seq)
    count = _count(ratio, len(seq))
    if count == 0:
        return AugmentResult(seq, "substitute")
    for position in rng.choice(len(seq), size=count, replace=False):
        correlate = table.top(seq[position])
        if correlate is not None:
            seq[position] = correlate
    return AugmentResult(seq, "substitute")


@registry.register("insert", INFORMATIVE, "insert_ratio")
def insert(seq: Sequence[int], ratio: float, table: CorrelationTable, rng: np.random.Generator,
           max_len: Optional[int] = None) -> AugmentResult:
    """Insert the top correlate after each of floor(ratio * len) positions, keeping the newest ``max_len``."""
    seq = list(seq)
    count = _count(ratio, len(seq))
    if count == 0:
        return AugmentResult(seq, "insert")
    chosen = set(int(p) for p in rng.choice(len(seq), size=count, replace=False))
    out: List[int] = []
    for position, item in enumerate(seq):
        out.append(item)
        if position in chosen:
            correlate = table.top(item)
            if correlate is not None:
                out.append(correlate)
    if max_len is not None and len(out) > max_len:
        out = out[len(out) - max_len:]
    return AugmentResult(out, "insert")


def apply_operation(name: str, seq: Sequence[int], config: AugmentConfig, rng: np.random.Generator,
                    table: Optional[CorrelationTable] = None, *, mask_token: int,
                    max_len: Optional[int] = None) -> AugmentResult:
    """Run the registered operator ``name`` with its ratio from ``config``."""
    spec = registry.get_operation_config(name)
    ratio = getattr(config, spec.ratio_field)
    table = table if table is not None else CorrelationTable()
    if name == "mask":
        return mask_items(seq, ratio, rng, mask_token=mask_token)
    if name == "substitute":
        return substitute(seq, ratio, table, rng)
    if name == "insert":
        return insert(seq, ratio, table, rng, max_len=max_len)
    return spec.function(seq, ratio, rng)


def select_augmentation(seq: Sequence[int], config: AugmentConfig, rng: np.random.Generator,
                        table: Optional[CorrelationTable] = None, *, mask_token: int,
                        max_len: Optional[int] = None) -> AugmentResult:
    """
    Pick an operator by sequence length and apply it.

    Sequences no longer than ``short_sequence_threshold`` draw uniformly from
    the informative operators; longer ones from all five.
    """
    eligible = registry.eligible_operations(len(seq), config.short_sequence_threshold)
    name = eligible[int(rng.integers(0, len(eligible)))]
    result = apply_operation(name, seq, config, rng, table, mask_token=mask_token, max_len=max_len)
    if not result.sequence:
        return AugmentResult(list(seq), name, skipped=True)
    return result


def identity(seq: Sequence[int]) -> AugmentResult:
    return AugmentResult(list(seq), IDENTITY)
