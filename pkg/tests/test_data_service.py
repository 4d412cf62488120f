"""Tests for ingestion, filtering, splitting, batching and dataset statistics."""

import json
import logging

import numpy as np
import pytest

from seqrec.core.errors import CheckpointFormatError, ContractError, DataFormatError
from seqrec.models.reports import StatsReport
from seqrec.services.data_service import (
    PUBLISHED_STATS,
    SPLIT_FORMAT,
    Catalog,
    DataService,
    Interaction,
    SplitDataset,
    UserSequence,
    build_sequences,
    compare_with_published,
    dataset_stats,
    five_core_filter,
    generate_synthetic,
    ingest,
    leave_one_out_split,
    left_pad,
    load_split,
    make_batches,
    sample_negatives,
    save_split,
    write_interactions,
)

RECORDS = [("u1", "a", 3), ("u1", "b", 1), ("u2", "a", 2), ("u2", "c", 2)]


def interactions(*records):
    return [Interaction(u, i, t) for u, i, t in records]


def toy_split(count=10, length=4, num_items=20):
    return SplitDataset(
        users=list(range(count)),
        train=[[(u + j) % num_items + 1 for j in range(length)] for u in range(count)],
        valid=[1] * count,
        test=[2] * count,
        num_items=num_items,
    )


@pytest.fixture
def same_data_three_ways(tmp_path):
    tsv = tmp_path / "data.tsv"
    tsv.write_text("user\titem\ttimestamp\n" + "".join(f"{u}\t{i}\t{t}\n" for u, i, t in RECORDS))
    csv = tmp_path / "data.csv"
    csv.write_text("user,item,timestamp\n" + "".join(f"{u},{i},{t}\n" for u, i, t in RECORDS))
    jsonl = tmp_path / "data.jsonl"
    jsonl.write_text("".join(json.dumps({"user": u, "item": i, "timestamp": t}) + "\n" for u, i, t in RECORDS))
    return tsv, csv, jsonl


def test_ingest_formats_agree(same_data_three_ways):
    results = [ingest(path) for path in same_data_three_ways]
    assert results[0] == results[1] == results[2] == interactions(*RECORDS)


def test_ingest_explicit_format(tmp_path):
    path = tmp_path / "data.dat"
    path.write_text("user,item,timestamp\nu,i,7\n")
    assert ingest(path, "csv") == interactions(("u", "i", 7))
    with pytest.raises(DataFormatError):
        ingest(path)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="no such input"):
        ingest(tmp_path / "absent.tsv")


def test_ingest_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DataFormatError, match="empty"):
        ingest(path)


def test_ingest_reports_line_of_missing_timestamp(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("user,item,timestamp\nu1,a,1\nu1,b,\n")
    with pytest.raises(DataFormatError, match="line 3"):
        ingest(path)


def test_ingest_rejects_non_integer_timestamp(tmp_path):
    path = tmp_path / "data.tsv"
    path.write_text("user\titem\ttimestamp\nu1\ta\t1.5\n")
    with pytest.raises(DataFormatError, match="line 2"):
        ingest(path)


def test_ingest_rejects_header_without_columns(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("user,item\nu1,a\n")
    with pytest.raises(DataFormatError, match="line 1"):
        ingest(path)


def test_ingest_json_lines_errors(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text('{"user": "u", "item": "i", "timestamp": 1}\n{"user": "u", "item": "i"\n')
    with pytest.raises(DataFormatError, match="line 2"):
        ingest(path)
    path.write_text('{"user": "u", "item": "i"}\n')
    with pytest.raises(DataFormatError, match="line 1"):
        ingest(path)


def test_write_then_ingest(tmp_path):
    records = interactions(*RECORDS)
    write_interactions(records, tmp_path / "out.tsv")
    assert ingest(tmp_path / "out.tsv") == records


def test_core_filter_cascades():
    data = interactions(("a", "x", 1), ("a", "y", 2), ("b", "x", 1), ("b", "y", 2),
                        ("c", "y", 1), ("c", "z", 2), ("d", "z", 1))
    kept = five_core_filter(data, k=2)
    assert kept == data[:4]
    assert five_core_filter(kept, k=2) == kept


def test_core_filter_output_satisfies_threshold(synthetic_interactions):
    kept = five_core_filter(synthetic_interactions)
    users, items = {}, {}
    for record in kept:
        users[record.user_key] = users.get(record.user_key, 0) + 1
        items[record.item_key] = items.get(record.item_key, 0) + 1
    assert min(users.values()) >= 5 and min(items.values()) >= 5
    assert five_core_filter(kept) == kept


def test_core_filter_hand_verified_fixed_point():
    dense = [Interaction(f"u{u:02d}", f"i{i}", i) for u in range(40) for i in range(5)]
    # a light user and a rare item fall below the threshold; removing them leaves the dense block
    light_user = [Interaction("light", f"i{i}", 9) for i in range(4)]
    rare_item = [Interaction(f"u{u:02d}", "rare", 9) for u in range(4)]
    data = dense[:100] + light_user + rare_item + dense[100:]
    kept = five_core_filter(data)
    assert len(dense) == 200
    assert kept == dense
    assert five_core_filter(kept) == kept


def test_split_recombines_into_sequences(synthetic_interactions):
    kept = five_core_filter(synthetic_interactions)
    catalog = Catalog.from_interactions(kept)
    sequences = build_sequences(kept, catalog)
    split = leave_one_out_split(sequences, catalog.num_items)
    assert split.excluded == 0
    assert split.sequences() == sequences


def test_core_filter_removing_everything():
    with pytest.raises(ContractError):
        five_core_filter(interactions(("a", "x", 1)), k=5)


def test_catalog_indices():
    catalog = Catalog.from_interactions(interactions(*RECORDS))
    assert catalog.users == {"u1": 0, "u2": 1}
    assert catalog.items == {"a": 1, "b": 2, "c": 3}
    assert catalog.mask_token == 4
    assert catalog.item_key(3) == "c"


def test_sequences_sorted_by_time_with_file_order_for_ties():
    data = interactions(*RECORDS)
    sequences = build_sequences(data, Catalog.from_interactions(data))
    assert [s.items for s in sequences] == [[2, 1], [1, 3]]
    swapped = interactions(RECORDS[0], RECORDS[1], RECORDS[3], RECORDS[2])
    assert build_sequences(swapped, Catalog.from_interactions(swapped))[1].items == [3, 1]


def test_leave_one_out_split(caplog):
    sequences = [UserSequence(0, [1, 2, 3, 4, 5]), UserSequence(1, [3, 4]), UserSequence(2, [5, 6, 7])]
    with caplog.at_level(logging.WARNING):
        split = leave_one_out_split(sequences, num_items=7)
    assert split.users == [0, 2]
    assert split.train == [[1, 2, 3], [5]]
    assert split.valid == [4, 6]
    assert split.test == [5, 7]
    assert split.excluded == 1
    assert "Excluded 1" in caplog.text
    assert split.history(0, "test") == [1, 2, 3, 4]
    assert split.history(0, "valid") == [1, 2, 3]
    with pytest.raises(ContractError):
        split.history(0, "train")


def test_left_pad_truncates_oldest():
    np.testing.assert_array_equal(left_pad([[1, 2, 3], [4], []], 2), [[2, 3], [0, 4], [0, 0]])


def test_negatives_never_hit_positives(rng):
    positives = np.array([[0, 0, 1, 2], [3, 4, 5, 5]] * 500)
    negatives = sample_negatives(positives, 5, rng)
    assert np.all(negatives[positives == 0] == 0)
    valid = positives != 0
    assert np.all(negatives[valid] != positives[valid])
    assert negatives[valid].min() >= 1 and negatives[valid].max() <= 5
    assert set(negatives[valid].tolist()) == {1, 2, 3, 4, 5}


def test_batches_cover_training_sequences_once(rng):
    split = toy_split(count=10)
    batches = list(make_batches(split, batch_size=4, max_len=5, rng=rng))
    assert [b.size for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate([b.users for b in batches]).tolist()) == list(range(10))
    first = batches[0]
    row = int(first.users[0])
    np.testing.assert_array_equal(first.inputs[0], [0, 0] + split.train[row][:-1])
    np.testing.assert_array_equal(first.positives[0], [0, 0] + split.train[row][1:])
    np.testing.assert_array_equal(first.valid_mask, first.positives != 0)


def test_batches_skip_single_item_prefixes(rng):
    split = toy_split(count=3)
    split.train[1] = [7]
    users = np.concatenate([b.users for b in make_batches(split, 8, 5, rng)])
    assert sorted(users.tolist()) == [0, 2]


def test_batches_are_deterministic():
    split = toy_split(count=9)
    runs = [list(make_batches(split, 4, 5, np.random.default_rng(3))) for _ in range(2)]
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.negatives, b.negatives)


def test_dense_matrix_has_zero_sparsity():
    report = dataset_stats(interactions(("a", "x", 1), ("a", "y", 2), ("b", "x", 1), ("b", "y", 2)))
    assert report.sparsity == 0.0
    assert report.avg_length == 2.0


def test_stats_of_split_and_sequences_agree(synthetic_split):
    from_split = dataset_stats(synthetic_split)
    from_sequences = dataset_stats(synthetic_split.sequences())
    assert from_split == from_sequences
    assert 0.0 < from_split.sparsity < 1.0
    assert from_split.avg_length == pytest.approx(from_split.interactions / from_split.users)


@pytest.mark.parametrize("name", sorted(PUBLISHED_STATS))
def test_published_rows_compare_to_zero(name, caplog):
    published = PUBLISHED_STATS[name]
    with caplog.at_level(logging.WARNING):
        diff = compare_with_published(published, name)
    assert all(abs(v) < 1e-9 for v in diff.values())
    assert "differs" not in caplog.text


def test_published_sparsity_rounds_to_table_precision():
    sports = PUBLISHED_STATS["sports"]
    computed = 1.0 - sports.interactions / (sports.users * sports.items)
    assert round(computed * 100, 2) == pytest.approx(sports.sparsity * 100)


def test_avg_length_mismatch_is_logged(caplog):
    report = StatsReport(users=19412, items=11924, interactions=167597, avg_length=8.6, sparsity=0.9993)
    with caplog.at_level(logging.WARNING):
        diff = compare_with_published(report, "Toys")
    assert diff["avg_length"] == pytest.approx(4.3)
    assert "differs" in caplog.text
    with pytest.raises(ContractError):
        compare_with_published(report, "beauty")


def test_noise_free_synthetic_data_follows_cycle():
    data = generate_synthetic(users=5, items=7, noise=0.0, min_length=4, max_length=6, seed=1)
    by_user = {}
    for record in data:
        by_user.setdefault(record.user_key, []).append(int(record.item_key.split("_")[1]))
    assert len(by_user) == 5
    for items in by_user.values():
        assert 4 <= len(items) <= 6
        assert all(b == (a + 1) % 7 for a, b in zip(items, items[1:]))


def test_synthetic_data_is_seeded():
    assert generate_synthetic(users=10, seed=4) == generate_synthetic(users=10, seed=4)
    assert generate_synthetic(users=10, seed=4) != generate_synthetic(users=10, seed=5)


def test_split_cache_round_trip(tmp_path, synthetic_interactions):
    result = DataService().preprocess(synthetic_interactions)
    save_split(result.split, result.catalog, tmp_path / "split.json")
    split, catalog = load_split(tmp_path / "split.json")
    assert split == result.split
    assert catalog.item_keys == result.catalog.item_keys


def test_split_cache_format_checked(tmp_path):
    path = tmp_path / "split.json"
    path.write_text(json.dumps({"format": "other/v9"}))
    with pytest.raises(CheckpointFormatError, match=SPLIT_FORMAT):
        load_split(path)
    path.write_text("[")
    with pytest.raises(CheckpointFormatError):
        load_split(path)


def test_preprocess_writes_artifacts(tmp_path, synthetic_interactions):
    result = DataService().preprocess(synthetic_interactions, out_dir=tmp_path)
    assert result.cache_path.exists()
    stats = json.loads(result.stats_path.read_text())
    assert stats["users"] == result.stats.users == len(result.split)
    assert "sparsity" in (tmp_path / "stats.txt").read_text()
