"""
Command-line entry point.

Commands:
    gen-data  Generate the synthetic benchmark and write its three splits
    train     Train one configuration and write metrics, timing, checkpoint
              and embedding dump
    eval      Evaluate a checkpoint on the validation split
    ablate    Train a grid of strategy rows over several seeds

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

from .cache import RunCache, data_digest
from .config import CONFIG_SCHEMA, RunConfig, load_config
from .core import Trainer, evaluate_params
from .datagen import DatasetSplits, generate_splits
from .errors import (
    CheckpointMismatch,
    ConfigError,
    ContractViolation,
    GaussProtoError,
    NumericFailure,
    ParseError,
    get_diagnostics,
)
from .exporters import (
    export_splits,
    write_ablation_tables,
    write_checkpoint,
    write_embedding_dump,
    write_eval_csv,
    write_metrics_csv,
    write_timing_csv,
)
from .readers import read_checkpoint, read_split_bytes, read_splits

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

CHECKPOINT_FILE = "checkpoint.gpck"


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"data_seed": args.seed, "data_dir": args.out})
    splits = generate_splits(config.dataset, config.val_fraction)
    written = export_splits(splits, config.data_dir, config.dataset)
    for path in written:
        logger.info("Wrote %s", path)
    print(
        f"{len(splits.labeled)} labeled, {len(splits.unlabeled)} unlabeled, "
        f"{len(splits.val)} validation scenes -> {config.data_dir}"
    )
    return EXIT_OK


def train_and_export(
    config: RunConfig, splits: DatasetSplits, num_classes: int, out_dir: Path
) -> Dict[str, Any]:
    """
    Train one configuration and write its artifacts into ``out_dir``.

    Returns:
        Summary of the final evaluation (mIoU, silhouette, DBI, negative
        state bytes) with the run means of prototype shift and ms per
        iteration
    """
    trainer = Trainer(
        config, splits.labeled, splits.unlabeled, splits.val, num_classes=num_classes
    )
    result = trainer.run()
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result.metrics, out_dir / "metrics.csv")
    write_timing_csv(result.timing, out_dir / "timing.csv")
    write_checkpoint(trainer.checkpoint(), out_dir / CHECKPOINT_FILE)
    write_embedding_dump(trainer.embedding_records(), out_dir / "embeddings.jsonl")
    with open(out_dir / "config.json", "w") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)

    last = result.metrics[-1]
    ms = sum(row["ms_per_iter"] for row in result.timing) / len(result.timing)
    shift = sum(row["prototype_shift"] for row in result.metrics) / len(result.metrics)
    return {
        "miou": last["miou"],
        "silhouette": last["silhouette"],
        "davies_bouldin": last["davies_bouldin"],
        "prototype_shift": shift,
        "negative_state_bytes": last["negative_state_bytes"],
        "ms_per_iter": ms,
    }


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(
        args.config,
        {"seed": args.seed, "output_dir": args.out, "data_dir": args.data},
    )
    splits, num_classes = read_splits(config.data_dir)
    summary = train_and_export(config, splits, num_classes, Path(config.output_dir))
    print(
        f"miou={summary['miou']:.4f} silhouette={summary['silhouette']:.4f} "
        f"davies_bouldin={summary['davies_bouldin']:.4f} -> {config.output_dir}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(
        args.config,
        {"seed": args.seed, "output_dir": args.out, "data_dir": args.data},
    )
    checkpoint_path = Path(args.checkpoint or Path(config.output_dir) / CHECKPOINT_FILE)
    checkpoint = read_checkpoint(checkpoint_path)
    splits, num_classes = read_splits(config.data_dir)
    dims = checkpoint.student.dims
    if dims["C"] != num_classes:
        raise CheckpointMismatch(
            f"checkpoint was trained with {dims['C']} classes but the dataset "
            f"has {num_classes}"
        )
    feature_dim = int(splits.val[0].features.shape[-1]) if splits.val else dims["F"]
    if dims["F"] != feature_dim:
        raise CheckpointMismatch(
            f"checkpoint expects {dims['F']} pixel features but the dataset "
            f"has {feature_dim}"
        )
    result = evaluate_params(
        checkpoint.student,
        splits.val,
        num_classes,
        checkpoint.meta.get("metric_points", config.metric_points),
    )
    row = {"iteration": checkpoint.iteration, **result._asdict()}
    write_eval_csv([row], Path(config.output_dir) / "eval.csv")
    print(
        f"iteration={row['iteration']} miou={row['miou']:.4f} "
        f"silhouette={row['silhouette']:.4f} "
        f"davies_bouldin={row['davies_bouldin']:.4f}"
    )
    return EXIT_OK


def _run_subconfig(task: Dict[str, Any]) -> Dict[str, Any]:
    """Train one (row, seed) cell; failures are returned, never raised."""
    config: RunConfig = task["config"]
    record = {
        "row": task["row"],
        "seed": config.hp.seed,
        "representation": config.representation,
        "prototype": config.prototype,
        "negatives": config.negatives,
    }
    try:
        summary = train_and_export(
            config, task["splits"], task["num_classes"], Path(task["out_dir"])
        )
    except (GaussProtoError, ValueError, ArithmeticError, OSError) as e:
        logger.error("Sub-run %s seed %d failed: %s", task["row"], config.hp.seed, e)
        return {**record, "status": "failed", "error": str(e)}
    return {**record, "status": "ok", "error": "", **summary}


def _load_or_generate(config: RunConfig):
    data_dir = Path(config.data_dir)
    try:
        splits, num_classes = read_splits(data_dir)
        digest = data_digest(*read_split_bytes(data_dir))
    except FileNotFoundError:
        logger.info("No dataset in %s; generating it in memory", data_dir)
        splits = generate_splits(config.dataset, config.val_fraction)
        num_classes = config.dataset.num_classes
        digest = data_digest(
            json.dumps(config.dataset.to_dict(), sort_keys=True).encode(),
            str(config.val_fraction).encode(),
        )
    return splits, num_classes, digest


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(
        args.config,
        {"seed": args.seed, "output_dir": args.out, "data_dir": args.data},
    )
    splits, num_classes, digest = _load_or_generate(config)
    out_dir = Path(config.output_dir)
    cache = RunCache(cache_dir=str(out_dir / ".cache"))
    if not config.use_cache:
        cache.disable()

    records: List[Optional[Dict[str, Any]]] = []
    pending: List[Dict[str, Any]] = []
    for row in config.ablate_rows:
        for offset in range(config.ablate_seeds):
            sub = config.with_strategy(row).with_seed(config.hp.seed + offset)
            cached = cache.get(sub.fingerprint(), digest)
            if cached is not None:
                logger.info("Using cached result for %s seed %d", row, sub.hp.seed)
                records.append(cached)
                continue
            records.append(None)
            pending.append(
                {
                    "index": len(records) - 1,
                    "row": row,
                    "config": sub,
                    "splits": splits,
                    "num_classes": num_classes,
                    "out_dir": str(out_dir / "ablation" / row / f"seed{sub.hp.seed}"),
                }
            )

    if config.ablate_workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=config.ablate_workers) as pool:
            results = list(pool.map(_run_subconfig, pending))
    else:
        results = [_run_subconfig(task) for task in pending]

    for task, result in zip(pending, results):
        records[task["index"]] = result
        if result["status"] == "ok":
            cache.set(task["config"].fingerprint(), digest, result)

    summary = write_ablation_tables(records, out_dir)
    print(summary.to_string(index=False))
    return EXIT_OK


def parse_args(sys_args: List[str]) -> argparse.Namespace:
    """
    Parse the arguments.

    Args:
        sys_args: The system arguments

    Returns:
        The parsed arguments
    """
    parser = argparse.ArgumentParser(
        prog="gaussproto",
        description=(
            "Semi-supervised segmentation with probabilistic representations "
            "and global prototypes on a synthetic benchmark."
        ),
        epilog="config keys (key=value, one per line):\n" + CONFIG_SCHEMA.help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Log at DEBUG level"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    commands = {
        "gen-data": (cmd_gen_data, "Generate the synthetic dataset"),
        "train": (cmd_train, "Train one configuration"),
        "eval": (cmd_eval, "Evaluate a checkpoint on the validation split"),
        "ablate": (cmd_ablate, "Run the strategy grid over several seeds"),
    }
    for name, (handler, help_text) in commands.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.set_defaults(handler=handler)
        sub.add_argument("--config", type=str, default=None, help="key=value file")
        sub.add_argument(
            "--seed",
            type=int,
            default=None,
            help="Override the seed (data_seed for gen-data)",
        )
        sub.add_argument(
            "--out",
            type=str,
            default=None,
            help="Output directory (data_dir for gen-data)",
        )
        if name != "gen-data":
            sub.add_argument(
                "--data", type=str, default=None, help="Dataset directory"
            )
        if name == "eval":
            sub.add_argument(
                "--checkpoint", type=str, default=None, help="Checkpoint file"
            )

    return parser.parse_args(sys_args)


def main(sys_args: Optional[List[str]] = None) -> int:
    """
    Parse the arguments, run the command and map failures to exit codes.

    Args:
        sys_args: The system arguments (``sys.argv[1:]`` if None)

    Returns:
        The process exit code
    """
    args = parse_args(sys.argv[1:] if sys_args is None else sys_args)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)
    get_diagnostics().reset()

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except CheckpointMismatch as e:
        logger.error("Checkpoint refused: %s", e)
        return EXIT_CONFIG
    except NumericFailure as e:
        logger.error("Numeric failure: %s", e)
        return EXIT_NUMERIC
    except (OSError, ParseError) as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except ContractViolation as e:
        logger.error("Invalid input: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
