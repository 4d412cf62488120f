"""Tests for run configuration loading and process settings."""

from pathlib import Path

import pytest

from seqrec.config.settings import get_settings
from seqrec.config.simple_config import (
    RUN_CONFIG_FILE,
    build_run_config,
    load_run_config,
    to_flat,
    write_run_config,
)
from seqrec.core.errors import ConfigError
from seqrec.models.config import RunConfig


def write(tmp_path, text):
    path = tmp_path / "run.env"
    path.write_text(text)
    return path


def test_defaults_without_sources():
    assert load_run_config() == RunConfig()


def test_unknown_key_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown configuration key 'EMBEDDING_SIZE'"):
        load_run_config(write(tmp_path, "EMBEDDING_SIZE=64\n"))


def test_bad_value_names_its_key(tmp_path):
    with pytest.raises(ConfigError, match="EMBED_DIM"):
        load_run_config(write(tmp_path, "EMBED_DIM=wide\n"))
    with pytest.raises(ConfigError, match="LAMBDA"):
        build_run_config({"LAMBDA": "-1"})
    with pytest.raises(ConfigError, match="CROP_RATIO"):
        build_run_config({"CROP_RATIO": "1.5"})


def test_inconsistent_heads_are_rejected():
    with pytest.raises(ConfigError):
        build_run_config({"EMBED_DIM": "10", "NUM_HEADS": "3"})


def test_required_values_cannot_be_none():
    with pytest.raises(ConfigError, match="SEED"):
        build_run_config({"SEED": "none"})
    assert build_run_config({"CLIP_NORM": "none"}).train.clip_norm is None


def test_overrides_beat_file_beat_defaults(tmp_path):
    path = write(tmp_path, "EMBED_DIM=32\nLAMBDA=0.3\n# comment\nno_ssl=true\n")
    config = load_run_config(path, {"LAMBDA": 0.2, "SEED": None})
    assert config.model.embed_dim == 32
    assert config.loss.lambda_ == 0.2
    assert config.train.no_ssl is True
    assert config.seed == RunConfig().seed


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="no such input"):
        load_run_config(tmp_path / "absent.env")


def test_archived_config_reloads_identically(tmp_path):
    config = build_run_config({"EMBED_DIM": "16", "LAMBDA": "0.1", "CLIP_NORM": "none", "NO_DA": "true",
                               "DATA_PATH": "data/split.json", "SEED": "7"})
    path = write_run_config(config, tmp_path)
    assert path == tmp_path / RUN_CONFIG_FILE
    text = path.read_text()
    assert "LAMBDA=0.1\n" in text and "CLIP_NORM=none\n" in text
    lines = text.splitlines()
    assert lines == sorted(lines)
    reloaded = load_run_config(path)
    assert reloaded == config
    assert reloaded.data_path == Path("data/split.json")
    assert to_flat(reloaded) == to_flat(config)


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("SEQREC_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("SEQREC_OUTPUT_ROOT", "/tmp/seqrec-runs")
    get_settings.cache_clear()
    settings = get_settings()
    assert settings.log_level == "DEBUG"
    assert settings.output_root == Path("/tmp/seqrec-runs")
    assert settings.progress is False
