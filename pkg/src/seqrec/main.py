"""Command-line entry point: preprocess, train, evaluate, augment-demo, sweep and ablate."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from seqrec import __version__
from seqrec.config.settings import get_settings
from seqrec.config.simple_config import load_run_config, write_run_config
from seqrec.core.augment import apply_operation, build_correlation, registry
from seqrec.core.encoder import Checkpoint
from seqrec.core.errors import ContractError, DataFormatError, SeqRecError
from seqrec.models.config import RunConfig
from seqrec.services.data_service import (
    DataService,
    compare_with_published,
    generate_synthetic,
    load_split,
    write_interactions,
)
from seqrec.services.evaluation_service import evaluate, write_report
from seqrec.services.training_service import (
    ablation_study,
    correlation_for,
    sweep,
    train_and_test,
    write_table,
    write_train_log,
)

logger = logging.getLogger("seqrec")

# command-line flag dest -> run-config key
OVERRIDES = {
    "embed_dim": "EMBED_DIM",
    "num_heads": "NUM_HEADS",
    "num_blocks": "NUM_BLOCKS",
    "max_len": "MAX_LEN",
    "learning_rate": "LEARNING_RATE",
    "batch_size": "BATCH_SIZE",
    "epochs": "MAX_EPOCHS",
    "patience": "PATIENCE",
    "clip_norm": "CLIP_NORM",
    "lambda_": "LAMBDA",
    "temperature": "TEMPERATURE",
    "seed": "SEED",
    "no_ssl": "NO_SSL",
    "no_lma": "NO_LMA",
    "no_da": "NO_DA",
    "disable_gates": "DISABLE_GATES",
    "exclude_history": "EXCLUDE_HISTORY",
}


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _parse_list(text: str, kind) -> List:
    try:
        values = [kind(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ContractError(f"cannot parse '{text}' as a comma-separated list of {kind.__name__}")
    if not values:
        raise ContractError(f"empty list '{text}'")
    return values


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, object] = {}
    for dest, key in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None or value is False:
            continue
        overrides[key] = value
    if getattr(args, "data", None):
        overrides["DATA_PATH"] = str(args.data)
    if getattr(args, "out", None):
        overrides["OUTPUT_DIR"] = str(args.out)
    return load_run_config(getattr(args, "config", None), overrides)


def _data_path(config: RunConfig) -> Path:
    if config.data_path is None:
        raise ContractError("no split cache given; pass --data or set DATA_PATH")
    return Path(config.data_path)


def _out_dir(config: RunConfig, default_name: str) -> Path:
    out = config.output_dir or get_settings().output_root / default_name
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_preprocess(args: argparse.Namespace) -> int:
    out = Path(args.out)
    service = DataService()
    if args.synthetic:
        interactions = generate_synthetic(users=args.users, items=args.items, noise=args.noise, seed=args.seed or 0)
        raw = out / "interactions.tsv"
        write_interactions(interactions, raw)
        logger.info(f"🧪 Synthetic dataset written to {raw}")
        result = service.preprocess(interactions, out)
    else:
        if args.input is None:
            raise ContractError("preprocess needs --input or --synthetic")
        result = service.preprocess_file(Path(args.input), args.format, out)
    if args.reference:
        diff = compare_with_published(result.stats, args.reference)
        (out / "stats_reference.json").write_text(json.dumps(diff, sort_keys=True, indent=2) + "\n")
        print(json.dumps({"reference": args.reference, "difference": diff}, sort_keys=True))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _run_config(args)
    split, _ = load_split(_data_path(config))
    out = _out_dir(config, "train")
    write_run_config(config, out)
    table = correlation_for(split, config)
    table.to_tsv(out / "correlation.tsv")

    result, test = train_and_test(split, config, table)
    result.checkpoint.save(out / "checkpoint.json")
    write_train_log(result.log, out / "train_log.jsonl")
    write_report(test, out, "metrics_test")
    logger.info(f"✅ Training finished; best epoch {result.best_epoch}, outputs in {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    checkpoint_path = Path(args.checkpoint)
    if not checkpoint_path.exists():
        raise FileNotFoundError(f"no such input: {checkpoint_path}")
    checkpoint = Checkpoint.load(checkpoint_path)
    split, _ = load_split(Path(args.data))
    report = evaluate(checkpoint, split, args.split, args.exclude_history)
    out = Path(args.out) if args.out else checkpoint_path.parent
    write_report(report, out, f"metrics_{args.split}")
    return 0


def cmd_augment_demo(args: argparse.Namespace) -> int:
    config = _run_config(args)
    try:
        sequence = [int(part) for part in args.sequence.split(",")]
    except ValueError:
        raise DataFormatError(f"invalid item index in '{args.sequence}'")
    if not sequence:
        raise DataFormatError("empty sequence")

    if config.data_path is not None:
        split, _ = load_split(Path(config.data_path))
        num_items = split.num_items
        table = correlation_for(split, config)
    else:
        num_items = max(sequence)
        table = build_correlation([sequence], config.augment.correlation_window, config.augment.correlation_top_k)
    bad = [i for i in sequence if not 1 <= i <= num_items]
    if bad:
        raise DataFormatError(f"item index {bad[0]} outside [1, {num_items}]")

    rng = np.random.default_rng(config.seed)
    print(f"input: {sequence}")
    for name in registry.get_all_operations():
        result = apply_operation(name, sequence, config.augment, rng, table, mask_token=num_items + 1,
                                 max_len=config.model.max_len)
        note = " (skipped)" if result.skipped else ""
        print(f"{result.tag}: {result.sequence}{note}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _run_config(args)
    split, _ = load_split(_data_path(config))
    out = _out_dir(config, "sweep")
    write_run_config(config, out)
    rows = sweep(split, config, _parse_list(args.lambdas, float), _parse_list(args.hidden_sizes, int), log_dir=out)
    write_table(rows, out / "sweep.csv", out / "sweep.txt")
    logger.info(f"✅ Sweep of {len(rows)} point(s) written to {out / 'sweep.csv'}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _run_config(args)
    split, _ = load_split(_data_path(config))
    out = _out_dir(config, "ablation")
    write_run_config(config, out)
    rows = ablation_study(split, config, log_dir=out)
    write_table(rows, out / "ablation.csv", out / "ablation.txt")
    logger.info(f"✅ Ablation table written to {out / 'ablation.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Flat KEY=value run configuration")
    parser.add_argument("--data", type=Path, help="Split cache written by preprocess")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--embed-dim", dest="embed_dim", type=int)
    parser.add_argument("--num-heads", dest="num_heads", type=int)
    parser.add_argument("--num-blocks", dest="num_blocks", type=int)
    parser.add_argument("--max-len", dest="max_len", type=int)
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--clip-norm", dest="clip_norm", type=float)
    parser.add_argument("--lambda", dest="lambda_", type=float)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--no-ssl", dest="no_ssl", action="store_true")
    parser.add_argument("--no-lma", dest="no_lma", action="store_true")
    parser.add_argument("--no-da", dest="no_da", action="store_true")
    parser.add_argument("--disable-gates", dest="disable_gates", action="store_true")
    parser.add_argument("--exclude-history", dest="exclude_history", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqrec", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", dest="log_level", help="Overrides SEQREC_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="Ingest, 5-core filter and split a dataset")
    pre.add_argument("--input", type=Path)
    pre.add_argument("--format", choices=["csv", "tsv", "json-lines"])
    pre.add_argument("--out", type=Path, required=True)
    pre.add_argument("--synthetic", action="store_true", help="Generate the cyclic-transition dataset")
    pre.add_argument("--users", type=int, default=200)
    pre.add_argument("--items", type=int, default=20)
    pre.add_argument("--noise", type=float, default=0.1)
    pre.add_argument("--seed", type=int)
    pre.add_argument("--reference", choices=["sports", "toys", "yelp"], help="Compare with published statistics")
    pre.set_defaults(handler=cmd_preprocess)

    train = sub.add_parser("train", help="Fit the model and report test metrics")
    _add_run_options(train)
    train.set_defaults(handler=cmd_train)

    ev = sub.add_parser("evaluate", help="Evaluate a checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--split", choices=["valid", "test"], default="test")
    ev.add_argument("--out", type=Path)
    ev.add_argument("--exclude-history", dest="exclude_history", action="store_true")
    ev.set_defaults(handler=cmd_evaluate)

    demo = sub.add_parser("augment-demo", help="Show every augmentation operator on one sequence")
    demo.add_argument("--sequence", required=True, help="Comma-separated item indices")
    _add_run_options(demo)
    demo.set_defaults(handler=cmd_augment_demo)

    sw = sub.add_parser("sweep", help="Grid over lambda and hidden size")
    _add_run_options(sw)
    sw.add_argument("--lambdas", default="0,0.1,0.2,0.3,0.4,0.5")
    sw.add_argument("--hidden-sizes", dest="hidden_sizes", default="64,128,192,256,320")
    sw.set_defaults(handler=cmd_sweep)

    ab = sub.add_parser("ablate", help="Full model against each component removed")
    _add_run_options(ab)
    ab.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or get_settings().log_level)
    try:
        return args.handler(args)
    except FileNotFoundError as e:
        message = str(e) if "no such input" in str(e) else f"no such input: {e.filename or e}"
        print(f"error: {message}", file=sys.stderr)
        return 1
    except SeqRecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
