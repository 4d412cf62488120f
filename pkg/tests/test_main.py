"""End-to-end tests of the command-line interface."""

import json
import logging

import pytest

from seqrec.main import build_parser, main
from seqrec.services.data_service import ingest

TINY = ["--embed-dim", "8", "--num-heads", "2", "--num-blocks", "1", "--max-len", "8",
        "--batch-size", "16", "--epochs", "1", "--seed", "3"]


@pytest.fixture(autouse=True)
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["preprocess", "--synthetic", "--users", "40", "--items", "10", "--seed", "1",
                 "--out", str(out)]) == 0
    return out


def test_preprocess_synthetic_outputs(data_dir):
    assert len(ingest(data_dir / "interactions.tsv")) > 0
    stats = json.loads((data_dir / "stats.json").read_text())
    assert stats["users"] > 0
    assert (data_dir / "split.json").exists()


def test_preprocess_is_byte_identical_on_rerun(tmp_path, data_dir):
    assert main(["preprocess", "--input", str(data_dir / "interactions.tsv"), "--out", str(tmp_path)]) == 0
    for name in ("split.json", "stats.json", "stats.txt"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_preprocess_missing_input(tmp_path, capsys):
    assert main(["preprocess", "--input", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]) == 1
    assert "no such input" in capsys.readouterr().err


def test_preprocess_reference_comparison(tmp_path, data_dir, capsys):
    assert main(["preprocess", "--input", str(data_dir / "interactions.tsv"), "--out", str(tmp_path),
                 "--reference", "toys"]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["reference"] == "toys"
    assert set(printed["difference"]) == {"users", "items", "interactions", "avg_length", "sparsity"}
    assert (tmp_path / "stats_reference.json").exists()


def test_train_without_ssl(tmp_path, data_dir):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir / "split.json"), "--out", str(out), "--no-ssl", *TINY]) == 0
    for name in ("run_config.env", "correlation.tsv", "checkpoint.json", "train_log.jsonl",
                 "metrics_test.json", "metrics_test.txt"):
        assert (out / name).exists(), name
    record = json.loads((out / "train_log.jsonl").read_text().splitlines()[0])
    assert record["l_ssl"] is None
    assert "NO_SSL=true\n" in (out / "run_config.env").read_text()


def test_train_archives_lambda_and_evaluate_reproduces_metrics(tmp_path, data_dir):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir / "split.json"), "--out", str(out), "--lambda", "0.1", *TINY]) == 0
    assert "LAMBDA=0.1\n" in (out / "run_config.env").read_text()

    again = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.json"), "--data", str(data_dir / "split.json"),
                 "--split", "test", "--out", str(again)]) == 0
    trained = json.loads((out / "metrics_test.json").read_text())
    evaluated = json.loads((again / "metrics_test.json").read_text())
    assert trained == evaluated
    assert len(trained["metrics"]) == 6


def test_disabled_gates_checkpoint_evaluates_like_training(tmp_path, data_dir):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir / "split.json"), "--out", str(out), "--disable-gates", *TINY]) == 0
    assert json.loads((out / "checkpoint.json").read_text())["config"]["gates_disabled"] is True
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.json"), "--data", str(data_dir / "split.json"),
                 "--split", "test", "--out", str(tmp_path / "eval")]) == 0
    assert (json.loads((out / "metrics_test.json").read_text())
            == json.loads((tmp_path / "eval" / "metrics_test.json").read_text()))


def test_evaluate_writes_beside_checkpoint_by_default(tmp_path, data_dir):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir / "split.json"), "--out", str(out), *TINY]) == 0
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.json"), "--data", str(data_dir / "split.json"),
                 "--split", "valid"]) == 0
    assert json.loads((out / "metrics_valid.json").read_text())["split"] == "valid"


def test_training_runs_are_reproducible(tmp_path, data_dir):
    for name in ("a", "b"):
        assert main(["train", "--data", str(data_dir / "split.json"), "--out", str(tmp_path / name),
                     *TINY, "--epochs", "5"]) == 0
    assert (tmp_path / "a" / "metrics_test.json").read_bytes() == (tmp_path / "b" / "metrics_test.json").read_bytes()


def test_corrupted_checkpoint(tmp_path, data_dir, capsys):
    broken = tmp_path / "checkpoint.json"
    broken.write_text('{"format": "seqrec-checkpoint/v1", "tensors": ')
    assert main(["evaluate", "--checkpoint", str(broken), "--data", str(data_dir / "split.json")]) == 1
    assert "corrupted checkpoint" in capsys.readouterr().err


def test_missing_split_cache(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "absent.json"), "--out", str(tmp_path), *TINY]) == 1
    assert "no such input" in capsys.readouterr().err


def test_augment_demo_prints_every_operator(capsys):
    assert main(["augment-demo", "--sequence", "1,2,3,4,5,6,7,8", "--seed", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "input: [1, 2, 3, 4, 5, 6, 7, 8]"
    assert [line.split(":")[0] for line in lines[1:]] == ["crop", "mask", "reorder", "substitute", "insert"]


def test_augment_demo_is_deterministic(capsys):
    outputs = []
    for _ in range(2):
        assert main(["augment-demo", "--sequence", "3,1,4,1,5,9,2,6", "--seed", "11"]) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]


@pytest.mark.parametrize("sequence", ["1,0,2", "1,x,2"])
def test_augment_demo_rejects_invalid_indices(sequence, capsys):
    assert main(["augment-demo", "--sequence", sequence]) == 1
    assert "error: " in capsys.readouterr().err


def test_augment_demo_checks_catalog(data_dir, capsys):
    assert main(["augment-demo", "--sequence", "1,2,99", "--data", str(data_dir / "split.json")]) == 1
    assert "outside" in capsys.readouterr().err


def test_sweep_table(tmp_path, data_dir):
    out = tmp_path / "sweep"
    assert main(["sweep", "--data", str(data_dir / "split.json"), "--out", str(out),
                 "--lambdas", "0,0.1", "--hidden-sizes", "8", *TINY]) == 0
    header = (out / "sweep.csv").read_text().splitlines()[0]
    assert header == "lambda,hidden_size,HR@5,HR@10,HR@20,NDCG@5,NDCG@10,NDCG@20"
    assert len((out / "sweep.csv").read_text().splitlines()) == 3
    assert (out / "sweep.txt").exists()
    for name in ("train_log_0_8.jsonl", "train_log_0.1_8.jsonl"):
        assert len((out / name).read_text().splitlines()) == 1, name


def test_sweep_rejects_bad_grid(tmp_path, data_dir, capsys):
    assert main(["sweep", "--data", str(data_dir / "split.json"), "--out", str(tmp_path),
                 "--lambdas", "a,b", *TINY]) == 1
    assert "error:" in capsys.readouterr().err


def test_ablate_table(tmp_path, data_dir):
    out = tmp_path / "ablation"
    assert main(["ablate", "--data", str(data_dir / "split.json"), "--out", str(out), *TINY]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("variant,HR@5")
    assert [line.split(",")[0] for line in lines[1:]] == ["full", "no_ssl", "no_lma", "no_da"]
    assert sorted(p.name for p in out.glob("train_log_*.jsonl")) == [
        "train_log_full.jsonl", "train_log_no_da.jsonl", "train_log_no_lma.jsonl", "train_log_no_ssl.jsonl"]


def test_unknown_config_key_fails(tmp_path, data_dir, capsys):
    config = tmp_path / "run.env"
    config.write_text("HIDDEN=3\n")
    assert main(["train", "--config", str(config), "--data", str(data_dir / "split.json"), *TINY]) == 1
    assert "unknown configuration key" in capsys.readouterr().err


def test_usage_errors_exit_with_two():
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args(["train", "--epochs", "many"])
    assert excinfo.value.code == 2
    with pytest.raises(SystemExit):
        main([])
