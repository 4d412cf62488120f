"""
Strict Run Configuration Loader
Loads a flat KEY=value run configuration; unknown keys and bad values fail fast
"""

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import ValidationError

from seqrec.core.errors import ConfigError
from seqrec.models.config import RunConfig

logger = logging.getLogger(__name__)

RUN_CONFIG_FILE = "run_config.env"

# KEY -> (RunConfig section or None for top level, field name)
KEYS: Dict[str, Tuple[Optional[str], str]] = {
    "EMBED_DIM": ("model", "embed_dim"),
    "NUM_HEADS": ("model", "num_heads"),
    "NUM_BLOCKS": ("model", "num_blocks"),
    "MAX_LEN": ("model", "max_len"),
    "ATTENTION_DROPOUT": ("model", "attention_dropout"),
    "EMBEDDING_DROPOUT": ("model", "embedding_dropout"),
    "LBD_INIT_KEEP": ("model", "lbd_init_keep"),
    "CROP_RATIO": ("augment", "crop_ratio"),
    "MASK_RATIO": ("augment", "mask_ratio"),
    "REORDER_RATIO": ("augment", "reorder_ratio"),
    "SUBSTITUTE_RATIO": ("augment", "substitute_ratio"),
    "INSERT_RATIO": ("augment", "insert_ratio"),
    "SHORT_SEQUENCE_THRESHOLD": ("augment", "short_sequence_threshold"),
    "CORRELATION_WINDOW": ("augment", "correlation_window"),
    "CORRELATION_TOP_K": ("augment", "correlation_top_k"),
    "LEARNING_RATE": ("train", "learning_rate"),
    "ADAM_BETA1": ("train", "adam_beta1"),
    "ADAM_BETA2": ("train", "adam_beta2"),
    "ADAM_EPS": ("train", "adam_eps"),
    "BATCH_SIZE": ("train", "batch_size"),
    "MAX_EPOCHS": ("train", "max_epochs"),
    "PATIENCE": ("train", "patience"),
    "CLIP_NORM": ("train", "clip_norm"),
    "GATE_LR_MULTIPLIER": ("train", "gate_lr_multiplier"),
    "NO_SSL": ("train", "no_ssl"),
    "NO_LMA": ("train", "no_lma"),
    "NO_DA": ("train", "no_da"),
    "DISABLE_GATES": ("train", "disable_gates"),
    "EXCLUDE_HISTORY": ("train", "exclude_history"),
    "EVAL_BATCH_SIZE": ("train", "eval_batch_size"),
    "LAMBDA": ("loss", "lambda_"),
    "TEMPERATURE": ("loss", "temperature"),
    "NORMALIZE_VIEWS": ("loss", "normalize_views"),
    "SEED": (None, "seed"),
    "DATA_PATH": (None, "data_path"),
    "OUTPUT_DIR": (None, "output_dir"),
}

OPTIONAL_KEYS = {"CLIP_NORM", "DATA_PATH", "OUTPUT_DIR"}
NONE_VALUES = {"", "none", "null"}


def read_flat_file(path: Path) -> Dict[str, str]:
    """Parse a KEY=value file, rejecting keys without a value assignment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such input: {path}")
    values = dotenv_values(path)
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"{key}: expected KEY=value in {path}")
    return dict(values)


def _normalize(raw: Mapping[str, Any]) -> Dict[str, Any]:
    flat = {}
    for key, value in raw.items():
        name = key.strip().upper()
        if name not in KEYS:
            raise ConfigError(f"unknown configuration key '{key}'")
        if value is None:
            continue
        if isinstance(value, str):
            value = value.strip()
            if value.lower() in NONE_VALUES:
                if name not in OPTIONAL_KEYS:
                    raise ConfigError(f"{name}: a value is required")
                value = None
        flat[name] = value
    return flat


def build_run_config(flat: Mapping[str, Any]) -> RunConfig:
    """Build a RunConfig from upper-case keys; missing keys keep their defaults."""
    flat = _normalize(flat)
    nested: Dict[str, Any] = {"model": {}, "augment": {}, "train": {}, "loss": {}}
    reverse: Dict[Tuple[str, ...], str] = {}
    for key, value in flat.items():
        section, name = KEYS[key]
        if section is None:
            nested[name] = value
            reverse[(name,)] = key
        else:
            nested[section][name] = value
            reverse[(section, name)] = key
            if name == "lambda_":
                reverse[(section, "lambda")] = key
    try:
        return RunConfig(**nested)
    except ValidationError as e:
        first = e.errors()[0]
        loc = tuple(str(part) for part in first["loc"])
        key = reverse.get(loc) or reverse.get(loc[:1]) or ".".join(loc) or "config"
        raise ConfigError(f"{key}: {first['msg']}")


def load_run_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Merge defaults < config file < overrides into a RunConfig.

    Args:
        path: Flat KEY=value file (optional)
        overrides: Upper-case keys from the command line; None values are ignored
    """
    flat: Dict[str, Any] = {}
    if path is not None:
        flat.update(read_flat_file(path))
        logger.debug(f"Loaded {len(flat)} configuration keys from {path}")
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    return build_run_config(flat)


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_flat(config: RunConfig) -> Dict[str, str]:
    """Every configuration key with its value in file syntax."""
    flat = {}
    for key, (section, name) in KEYS.items():
        owner = config if section is None else getattr(config, section)
        flat[key] = _format(getattr(owner, name))
    return flat


def write_run_config(config: RunConfig, path: Path) -> Path:
    """Archive the merged configuration as a sorted KEY=value file."""
    path = Path(path)
    if path.is_dir():
        path = path / RUN_CONFIG_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    flat = to_flat(config)
    path.write_text("".join(f"{key}={flat[key]}\n" for key in sorted(flat)))
    return path
