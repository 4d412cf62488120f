"""Dataset ingestion, 5-core filtering, leave-one-out splitting, batching and statistics."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from seqrec.core.errors import CheckpointFormatError, ContractError, DataFormatError
from seqrec.models.reports import StatsReport

logger = logging.getLogger(__name__)

PAD = 0
SPLIT_FORMAT = "seqrec-split/v1"
FIELDS = ("user", "item", "timestamp")
FORMATS = {"csv": ",", "tsv": "\t", "json-lines": None}
SUFFIXES = {".csv": "csv", ".tsv": "tsv", ".txt": "tsv", ".jsonl": "json-lines", ".json": "json-lines"}

# Rows of the published dataset table: users, items, interactions, avg.length, sparsity
PUBLISHED_STATS: Dict[str, StatsReport] = {
    "sports": StatsReport(users=35598, items=18357, interactions=296337, avg_length=8.3, sparsity=0.9995),
    "toys": StatsReport(users=19412, items=11924, interactions=167597, avg_length=4.3, sparsity=0.9993),
    "yelp": StatsReport(users=30431, items=20033, interactions=316354, avg_length=10.3, sparsity=0.9995),
}


@dataclass(frozen=True)
class Interaction:
    user_key: str
    item_key: str
    timestamp: int


@dataclass
class Catalog:
    """Dense indices for users (0..M-1) and items (1..N); 0 is padding and N+1 the mask token."""

    user_keys: List[str]
    item_keys: List[str]
    users: Dict[str, int] = field(init=False)
    items: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.users = {key: i for i, key in enumerate(self.user_keys)}
        self.items = {key: i + 1 for i, key in enumerate(self.item_keys)}

    @classmethod
    def from_interactions(cls, interactions: Sequence[Interaction]) -> "Catalog":
        return cls(user_keys=sorted({i.user_key for i in interactions}),
                   item_keys=sorted({i.item_key for i in interactions}))

    @property
    def num_users(self) -> int:
        return len(self.user_keys)

    @property
    def num_items(self) -> int:
        return len(self.item_keys)

    @property
    def mask_token(self) -> int:
        return self.num_items + 1

    def item_key(self, index: int) -> str:
        return self.item_keys[index - 1]


@dataclass
class UserSequence:
    user: int
    items: List[int]


@dataclass
class SplitDataset:
    """Leave-one-out split: per user a training prefix, a validation item and a test item."""

    users: List[int]
    train: List[List[int]]
    valid: List[int]
    test: List[int]
    num_items: int
    excluded: int = 0

    def __len__(self) -> int:
        return len(self.users)

    def history(self, position: int, target: str) -> List[int]:
        """Items preceding the held-out ``target`` ('valid' or 'test') of one user."""
        if target == "valid":
            return list(self.train[position])
        if target == "test":
            return list(self.train[position]) + [self.valid[position]]
        raise ContractError(f"unknown evaluation target '{target}'")

    def targets(self, target: str) -> List[int]:
        if target not in ("valid", "test"):
            raise ContractError(f"unknown evaluation target '{target}'")
        return list(self.valid if target == "valid" else self.test)

    def sequences(self) -> List[UserSequence]:
        """Recombined full sequences."""
        return [UserSequence(u, list(t) + [v, s]) for u, t, v, s in zip(self.users, self.train, self.valid, self.test)]


@dataclass
class Batch:
    """Left-padded training batch with one sampled negative per position."""

    users: np.ndarray
    inputs: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    valid_mask: np.ndarray

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def infer_format(path: Path) -> str:
    fmt = SUFFIXES.get(Path(path).suffix.lower())
    if fmt is None:
        raise DataFormatError(f"cannot infer input format from '{path}'; pass one of {sorted(FORMATS)}")
    return fmt


def _parse_timestamp(value, line: int) -> int:
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        try:
            number = float(text)
        except ValueError:
            raise DataFormatError(f"line {line}: timestamp '{text}' is not an integer")
        if not number.is_integer():
            raise DataFormatError(f"line {line}: timestamp '{text}' is not an integer")
        return int(number)


def _ingest_delimited(path: Path, sep: str) -> List[Interaction]:
    try:
        frame = pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"{path} is empty")
    except pd.errors.ParserError as e:
        raise DataFormatError(f"{path}: malformed record: {e}")
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in FIELDS if c not in frame.columns]
    if missing:
        raise DataFormatError(f"line 1: header lacks column(s) {missing}; expected {','.join(FIELDS)}")
    if frame.empty:
        raise DataFormatError(f"{path} has a header but no records")

    interactions = []
    for offset, (user, item, timestamp) in enumerate(frame[list(FIELDS)].itertuples(index=False)):
        line = offset + 2
        if not user.strip() or not item.strip():
            raise DataFormatError(f"line {line}: missing user or item")
        if not timestamp.strip():
            raise DataFormatError(f"line {line}: missing timestamp")
        interactions.append(Interaction(user.strip(), item.strip(), _parse_timestamp(timestamp, line)))
    return interactions


def _ingest_json_lines(path: Path) -> List[Interaction]:
    interactions = []
    with open(path, encoding="utf-8") as handle:
        for line, text in enumerate(handle, start=1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"line {line}: invalid JSON: {e.msg}")
            if not isinstance(record, dict):
                raise DataFormatError(f"line {line}: expected an object with keys {list(FIELDS)}")
            missing = [k for k in FIELDS if record.get(k) in (None, "")]
            if missing:
                raise DataFormatError(f"line {line}: missing field(s) {missing}")
            interactions.append(Interaction(str(record["user"]), str(record["item"]),
                                            _parse_timestamp(record["timestamp"], line)))
    if not interactions:
        raise DataFormatError(f"{path} is empty")
    return interactions


def ingest(path: Union[str, Path], fmt: Optional[str] = None) -> List[Interaction]:
    """
    Read interactions in file order.

    Args:
        path: CSV/TSV file with a ``user,item,timestamp`` header, or JSON-lines
            with those keys
        fmt: One of csv, tsv, json-lines; inferred from the suffix when omitted
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such input: {path}")
    fmt = fmt or infer_format(path)
    if fmt not in FORMATS:
        raise DataFormatError(f"unknown format '{fmt}'; expected one of {sorted(FORMATS)}")
    if path.stat().st_size == 0:
        raise DataFormatError(f"{path} is empty")
    interactions = _ingest_json_lines(path) if fmt == "json-lines" else _ingest_delimited(path, FORMATS[fmt])
    logger.info(f"📥 Ingested {len(interactions)} interactions from {path} ({fmt})")
    return interactions


def write_interactions(interactions: Sequence[Interaction], path: Path) -> None:
    """Write interactions as a TSV with a ``user,item,timestamp`` header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _to_frame(interactions)[list(FIELDS)].to_csv(path, sep="\t", index=False)


def _to_frame(interactions: Sequence[Interaction]) -> pd.DataFrame:
    return pd.DataFrame({
        "user": [i.user_key for i in interactions],
        "item": [i.item_key for i in interactions],
        "timestamp": np.array([i.timestamp for i in interactions], dtype=np.int64),
        "order": np.arange(len(interactions)),
    })


# ---------------------------------------------------------------------------
# filtering, sequences and splitting
# ---------------------------------------------------------------------------

def five_core_filter(interactions: Sequence[Interaction], k: int = 5) -> List[Interaction]:
    """Drop users and items with fewer than ``k`` interactions until nothing changes."""
    frame = _to_frame(interactions)
    rounds = 0
    while True:
        rounds += 1
        user_counts = frame.groupby("user")["item"].transform("size")
        item_counts = frame.groupby("item")["user"].transform("size")
        keep = (user_counts >= k) & (item_counts >= k)
        if keep.all():
            break
        frame = frame[keep]
        if frame.empty:
            break
    if frame.empty:
        raise ContractError(f"{k}-core filtering removed every interaction; use a smaller k or denser data")
    logger.info(f"🧹 {k}-core filter kept {len(frame)}/{len(interactions)} interactions after {rounds} round(s)")
    return [interactions[i] for i in frame["order"]]


def build_sequences(interactions: Sequence[Interaction], catalog: Catalog) -> List[UserSequence]:
    """Per-user item indices ordered by (timestamp, file order)."""
    frame = _to_frame(interactions)
    frame["user_index"] = frame["user"].map(catalog.users)
    frame["item_index"] = frame["item"].map(catalog.items)
    if frame[["user_index", "item_index"]].isna().any().any():
        raise ContractError("catalog does not cover every user and item key")
    frame = frame.sort_values(["user_index", "timestamp", "order"], kind="mergesort")
    return [UserSequence(int(user), group["item_index"].astype(np.int64).tolist())
            for user, group in frame.groupby("user_index", sort=True)]


def leave_one_out_split(sequences: Sequence[UserSequence], num_items: int) -> SplitDataset:
    """Last item is the test target, the one before it the validation target."""
    kept = [s for s in sequences if len(s.items) >= 3]
    excluded = len(sequences) - len(kept)
    if excluded:
        logger.warning(f"⚠️ Excluded {excluded} sequence(s) shorter than 3 items from the split")
    return SplitDataset(
        users=[s.user for s in kept],
        train=[list(s.items[:-2]) for s in kept],
        valid=[s.items[-2] for s in kept],
        test=[s.items[-1] for s in kept],
        num_items=num_items,
        excluded=excluded,
    )


def left_pad(sequences: Sequence[Sequence[int]], length: int) -> np.ndarray:
    """Keep the newest ``length`` items of each sequence, left-padded with 0."""
    out = np.zeros((len(sequences), length), dtype=np.int64)
    for row, seq in enumerate(sequences):
        tail = list(seq)[-length:]
        if tail:
            out[row, length - len(tail):] = tail
    return out


def sample_negatives(positives: np.ndarray, num_items: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform item in [1, N] per position, never equal to the aligned positive; 0 at padding."""
    if num_items < 2:
        raise ContractError("negative sampling needs at least 2 items")
    draws = rng.integers(1, num_items, size=positives.shape)
    draws = draws + (draws >= positives)
    return np.where(positives == PAD, PAD, draws)


def make_batches(split: SplitDataset, batch_size: int, max_len: int, rng: np.random.Generator,
                 epoch: int = 0) -> Iterator[Batch]:
    """
    Shuffled training batches over the training prefixes.

    Each prefix s_1..s_n becomes inputs s_1..s_{n-1} with next-item
    positives s_2..s_n, left-padded/truncated to ``max_len``. Prefixes of a
    single item hold no training pair and are left out.
    """
    trainable = np.asarray([i for i, prefix in enumerate(split.train) if len(prefix) >= 2], dtype=np.int64)
    if not trainable.size:
        raise ContractError("cannot batch a split without training pairs")
    order = trainable[rng.permutation(trainable.size)]
    logger.debug(f"Epoch {epoch}: {order.size} sequences in batches of {batch_size}")
    for start in range(0, len(order), batch_size):
        rows = order[start:start + batch_size]
        prefixes = [split.train[r] for r in rows]
        inputs = left_pad([p[:-1] for p in prefixes], max_len)
        positives = left_pad([p[1:] for p in prefixes], max_len)
        yield Batch(
            users=np.asarray([split.users[r] for r in rows], dtype=np.int64),
            inputs=inputs,
            positives=positives,
            negatives=sample_negatives(positives, split.num_items, rng),
            valid_mask=positives != PAD,
        )


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def dataset_stats(data: Union[SplitDataset, Sequence[UserSequence], Sequence[Interaction]]) -> StatsReport:
    """Users, items, interactions, average length and sparsity of a split, sequences or raw records."""
    if isinstance(data, SplitDataset):
        data = data.sequences()
    data = list(data)
    if data and isinstance(data[0], Interaction):
        users = len({i.user_key for i in data})
        items = len({i.item_key for i in data})
        interactions = len(data)
    else:
        users = len(data)
        items = len({item for s in data for item in s.items})
        interactions = sum(len(s.items) for s in data)
    cells = users * items
    return StatsReport(
        users=users,
        items=items,
        interactions=interactions,
        avg_length=interactions / users if users else 0.0,
        sparsity=1.0 - interactions / cells if cells else 0.0,
    )


def compare_with_published(report: StatsReport, name: str) -> Dict[str, float]:
    """Differences (computed minus published) for every column of a published dataset row."""
    key = name.lower()
    if key not in PUBLISHED_STATS:
        raise ContractError(f"no published statistics for '{name}'; known: {sorted(PUBLISHED_STATS)}")
    published = PUBLISHED_STATS[key]
    diff = {
        "users": float(report.users - published.users),
        "items": float(report.items - published.items),
        "interactions": float(report.interactions - published.interactions),
        "avg_length": round(report.avg_length, 1) - published.avg_length,
        "sparsity": round(report.sparsity * 100, 2) - round(published.sparsity * 100, 2),
    }
    if abs(diff["avg_length"]) > 1e-9:
        logger.warning(
            f"⚠️ avg.length {report.avg_length:.2f} ({report.avg_length_definition}) differs from "
            f"published {published.avg_length} for {key}",
            extra={"dataset": key, "avg_length": report.avg_length},
        )
    return diff


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def generate_synthetic(users: int = 200, items: int = 20, noise: float = 0.1, min_length: int = 8,
                       max_length: int = 20, seed: int = 0) -> List[Interaction]:
    """
    Cyclic-transition sequences: item i is followed by item (i + 1) mod ``items``
    with probability 1 - ``noise`` and by a uniformly chosen other item otherwise.
    """
    if items < 2 or users < 1 or not 1 <= min_length <= max_length or not 0.0 <= noise <= 1.0:
        raise ContractError("invalid synthetic dataset parameters")
    rng = np.random.default_rng(seed)
    user_width = len(str(users - 1))
    item_width = len(str(items - 1))
    interactions = []
    for u in range(users):
        length = int(rng.integers(min_length, max_length + 1))
        current = int(rng.integers(0, items))
        for t in range(length):
            interactions.append(Interaction(f"user_{u:0{user_width}d}", f"item_{current:0{item_width}d}", t))
            following = (current + 1) % items
            if rng.uniform() < noise:
                other = int(rng.integers(0, items - 1))
                following = other + (other >= following)
            current = following
    return interactions


# ---------------------------------------------------------------------------
# split cache
# ---------------------------------------------------------------------------

def save_split(split: SplitDataset, catalog: Catalog, path: Path) -> None:
    payload = {
        "format": SPLIT_FORMAT,
        "users": catalog.user_keys,
        "items": catalog.item_keys,
        "split": {
            "users": split.users,
            "train": split.train,
            "valid": split.valid,
            "test": split.test,
            "excluded": split.excluded,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True))
    logger.info(f"💾 Split cache written to {path}")


def load_split(path: Path) -> Tuple[SplitDataset, Catalog]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such input: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"corrupted split cache {path}: {e}")
    found = payload.get("format") if isinstance(payload, dict) else None
    if found != SPLIT_FORMAT:
        raise CheckpointFormatError(f"split cache format mismatch: expected {SPLIT_FORMAT!r}, found {found!r}")
    try:
        catalog = Catalog(user_keys=list(payload["users"]), item_keys=list(payload["items"]))
        body = payload["split"]
        split = SplitDataset(
            users=[int(u) for u in body["users"]],
            train=[[int(i) for i in seq] for seq in body["train"]],
            valid=[int(i) for i in body["valid"]],
            test=[int(i) for i in body["test"]],
            num_items=catalog.num_items,
            excluded=int(body.get("excluded", 0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"corrupted split cache {path}: {e}")
    return split, catalog


# ---------------------------------------------------------------------------
# service
# ---------------------------------------------------------------------------

@dataclass
class PreprocessResult:
    split: SplitDataset
    catalog: Catalog
    stats: StatsReport
    cache_path: Optional[Path] = None
    stats_path: Optional[Path] = None


class DataService:
    """Runs the preprocessing pipeline and writes its artifacts."""

    CACHE_NAME = "split.json"
    STATS_JSON = "stats.json"
    STATS_TEXT = "stats.txt"

    def __init__(self, core: int = 5):
        self.core = core
        self.logger = logging.getLogger(__name__)

    def preprocess(self, interactions: Sequence[Interaction], out_dir: Optional[Path] = None) -> PreprocessResult:
        """ingest output -> 5-core -> sequences -> leave-one-out split -> statistics."""
        self.logger.info(f"🔄 Preprocessing {len(interactions)} interactions",
                         extra={"stage": "preprocess", "interactions": len(interactions)})
        filtered = five_core_filter(interactions, self.core)
        catalog = Catalog.from_interactions(filtered)
        sequences = build_sequences(filtered, catalog)
        split = leave_one_out_split(sequences, catalog.num_items)
        stats = dataset_stats(split)
        self.logger.info(f"✅ Split ready: {stats.users} users, {stats.items} items, {stats.interactions} interactions",
                         extra={"stage": "preprocess", "users": stats.users, "items": stats.items})
        result = PreprocessResult(split=split, catalog=catalog, stats=stats)
        if out_dir is not None:
            self.write(result, Path(out_dir))
        return result

    def preprocess_file(self, path: Path, fmt: Optional[str] = None, out_dir: Optional[Path] = None) -> PreprocessResult:
        return self.preprocess(ingest(path, fmt), out_dir)

    def write(self, result: PreprocessResult, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        result.cache_path = out_dir / self.CACHE_NAME
        result.stats_path = out_dir / self.STATS_JSON
        save_split(result.split, result.catalog, result.cache_path)
        result.stats_path.write_text(json.dumps(result.stats.model_dump(), sort_keys=True, indent=2) + "\n")
        (out_dir / self.STATS_TEXT).write_text(result.stats.to_text())
