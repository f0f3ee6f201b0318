"""
Command-line entry point.

    kgalign train     --config run.conf [--seed N] [--out DIR] [--workers N] [--set key=value ...]
    kgalign eval      --config run.conf
    kgalign dist      --config run.conf 'rel(a,b)' 'rel(c,d)'
    kgalign gen-synth --entities 50 --relations 5 --triples 300 --out DIR [--types 3] [--seed N]

Config files hold `key = value` lines (`#` starts a comment); command-line
overrides win. Command output goes to stdout as JSON, logs go to stderr.

Exit codes: 0 success, 1 load/validation failure, 2 training divergence.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import dotenv_values
from pydantic import ValidationError

from kgalign.core import metrics, synth
from kgalign.core.editdist import distance_general_arity
from kgalign.core.evaluator import classify_at_threshold, evaluate, load_labeled_pairs, select_threshold
from kgalign.core.exceptions import CheckpointDimensionError, ConfigError, DivergenceError, KgAlignError
from kgalign.core.logging import get_logger, setup_logging
from kgalign.core.params import ParamStore
from kgalign.core.trainer import train
from kgalign.db.checkpoint import load_checkpoint, save_checkpoint
from kgalign.db.kg_store import KgCatalog, KgId, load_catalog
from kgalign.models.schemas import RunConfig

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_DIVERGED = 2

DEFAULT_OUT_DIR = Path("out")
CHECKPOINT_NAME = "checkpoint.edal"
RESOLVED_CONFIG_NAME = "config.resolved"

CATALOG_KEYS = ("triples_l1", "triples_l2", "types", "seeds_train")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _parse_overrides(items: Sequence[str]) -> Dict[str, str]:
    overrides = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def load_run_config(path: Optional[Path], overrides: Dict[str, str]) -> RunConfig:
    """
    Merge a `key = value` config file with command-line overrides.

    Empty values count as unset.

    Raises:
        ConfigError: missing config file, key without value, unknown key or invalid value
    """
    values: Dict[str, str] = {}
    if path is not None:
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        for key, value in dotenv_values(path).items():
            if value is None:
                raise ConfigError(f"{path}: key {key!r} has no value")
            values[key] = value
    values.update(overrides)
    values = {k: v for k, v in values.items() if v != ""}

    try:
        return RunConfig(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration: {problems}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    return str(value)


def write_resolved_config(config: RunConfig, out_dir: Path) -> Path:
    """Echo every set field as `key = value` so the file can be fed back via --config."""
    lines = [f"{key} = {_format_value(value)}"
             for key, value in config.model_dump().items() if value is not None]
    path = out_dir / RESOLVED_CONFIG_NAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _require_paths(config: RunConfig, keys: Sequence[str]) -> None:
    for key in keys:
        if getattr(config, key) is None:
            raise ConfigError(f"Config key {key!r} is required for this command")


def _validate_inputs(config: RunConfig, keys: Sequence[str]) -> None:
    """Every configured input file must exist before any work starts."""
    for key in keys:
        path = getattr(config, key)
        if path is not None and not Path(path).is_file():
            raise ConfigError(f"Input file for {key!r} not found: {path}")


def _load_catalog(config: RunConfig) -> KgCatalog:
    return load_catalog(
        config.triples_l1, config.triples_l2, config.types, config.seeds_train,
        seeds_valid=config.seeds_valid, seeds_test=config.seeds_test,
    )


def _catalog_counts(catalog: KgCatalog) -> dict:
    return {
        "entities": catalog.num_entities,
        "relations": catalog.num_relations,
        "types": catalog.num_types,
    }


def _load_store(config: RunConfig, catalog: KgCatalog) -> ParamStore:
    """Load the checkpoint; dims come from the file unless the configuration sets them."""
    store = load_checkpoint(config.checkpoint, expected_counts=_catalog_counts(catalog))
    for name in ("k_e", "k_r", "k_s"):
        expected, actual = getattr(config, name), getattr(store.dims, name)
        if name in config.model_fields_set and expected != actual:
            raise CheckpointDimensionError(name, expected, actual)
    return store


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")
    sys.stdout.flush()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(config: RunConfig) -> int:
    _require_paths(config, CATALOG_KEYS)
    _validate_inputs(config, CATALOG_KEYS + ("seeds_valid", "seeds_test"))

    out_dir = Path(config.out_dir or DEFAULT_OUT_DIR)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = Path(config.checkpoint or out_dir / CHECKPOINT_NAME)
    config = config.model_copy(update={"out_dir": out_dir, "checkpoint": checkpoint})

    catalog = _load_catalog(config)
    store, report = train(catalog, config.train_config())

    save_checkpoint(store, checkpoint)
    (out_dir / "train_report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    summary = {**report.summary(), "epoch_records": [e.model_dump() for e in report.epochs]}
    (out_dir / "train_report.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    write_resolved_config(config, out_dir)
    metrics.write_metrics(out_dir)

    logger.info("Training finished", out_dir=str(out_dir), checkpoint=str(checkpoint),
                epochs=len(report.epochs), wall_clock_seconds=round(report.wall_clock_seconds, 3))
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    _require_paths(config, CATALOG_KEYS + ("seeds_test", "checkpoint"))
    _validate_inputs(config, CATALOG_KEYS + ("seeds_valid", "seeds_test", "checkpoint", "labeled_pairs"))

    catalog = _load_catalog(config)
    store = _load_store(config, catalog)

    result = evaluate(catalog.seeds["test"], store, catalog,
                      candidates=config.eval_candidates, workers=config.workers)
    _emit(result.model_dump())

    if config.labeled_pairs is not None:
        pairs = load_labeled_pairs(config.labeled_pairs, catalog)
        if config.theta is not None:
            threshold = classify_at_threshold(pairs, config.theta, store, catalog)
        else:
            threshold = select_threshold(pairs, store, catalog)
        _emit(json.loads(threshold.model_dump_json()))

    if config.out_dir is not None:
        metrics.write_metrics(config.out_dir)
    return EXIT_OK


def cmd_dist(config: RunConfig, atom_left: str, atom_right: str) -> int:
    _require_paths(config, CATALOG_KEYS + ("checkpoint",))
    _validate_inputs(config, CATALOG_KEYS + ("checkpoint",))

    catalog = _load_catalog(config)
    store = _load_store(config, catalog)

    left = catalog.resolve_atom(atom_left, KgId.L1)
    right = catalog.resolve_atom(atom_right, KgId.L2)
    result = distance_general_arity(left, right, store, catalog)
    _emit({"distance": result.value, "paths": result.path_count, "sum": result.total})
    return EXIT_OK


def cmd_gen_synth(entities: int, relations: int, triples: int, out_dir: Path, seed: int,
                  types: int = 3) -> int:
    synth.generate(entities, relations, triples, out_dir, seed, n_types=types)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="key = value run configuration file")
    common.add_argument("--seed", type=int, default=None, help="Run seed (overrides config)")
    common.add_argument("--out", type=Path, default=None, help="Output directory (overrides config)")
    common.add_argument("--workers", type=int, default=None,
                        help="Threads for distance/evaluation reads (overrides config)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any config key; repeatable")

    parser = argparse.ArgumentParser(
        prog="kgalign",
        description="Knowledge-graph triple alignment by learned edit distance in embedding space",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="Train parameters on the seed alignments")
    sub.add_parser("eval", parents=[common], help="Rank held-out seeds and print metrics as JSON")

    dist = sub.add_parser("dist", parents=[common], help="Distance between an L1 atom and an L2 atom")
    dist.add_argument("atom_left", help="L1 atom, e.g. 'bornIn(alice,paris)'")
    dist.add_argument("atom_right", help="L2 atom")

    gen = sub.add_parser("gen-synth", parents=[common], help="Generate a synthetic aligned graph pair")
    gen.add_argument("--entities", type=int, required=True)
    gen.add_argument("--relations", type=int, required=True)
    gen.add_argument("--triples", type=int, required=True)
    gen.add_argument("--types", type=int, default=3, help="Number of entity types (default 3)")

    return parser


def _command_overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides = _parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    return overrides


def run(args: argparse.Namespace) -> int:
    if args.command == "gen-synth":
        out_dir = args.out or DEFAULT_OUT_DIR
        return cmd_gen_synth(args.entities, args.relations, args.triples, out_dir,
                             args.seed if args.seed is not None else 0, types=args.types)

    config = load_run_config(args.config, _command_overrides(args))
    if args.command == "train":
        return cmd_train(config)
    if args.command == "eval":
        return cmd_eval(config)
    return cmd_dist(config, args.atom_left, args.atom_right)


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except DivergenceError as e:
        logger.error("Training diverged", command=args.command, epoch=e.epoch, loss=e.loss)
        print(f"kgalign: error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except KgAlignError as e:
        logger.error("Command failed", command=args.command, error=str(e), error_type=type(e).__name__)
        print(f"kgalign: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        logger.error("I/O failure", command=args.command, error=str(e))
        print(f"kgalign: error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
