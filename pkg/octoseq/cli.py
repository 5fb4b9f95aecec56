"""
Command line entry point.

```
octoseq encode shape.octv --out shape.txt
octoseq decode shape.txt --out shape.octv
octoseq make-dataset --out corpus --kind union --resolution 16 --count 10
octoseq stats corpus --scheme baseline --scheme later
octoseq train corpus --out model.octm --config run.json
octoseq sample --checkpoint model.octm --out samples --count 4 --temperature 0.8
octoseq upres prefix.txt --checkpoint model.octm --max-depth 5 --out upres.octv
octoseq eval corpus --checkpoint model.octm --multiplier 5 --out report.csv
octoseq export shape.octv --format obj --out shape.obj
```

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 any other failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import anyio
from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table

from octoseq.checkpoint import load_checkpoint
from octoseq.config import RunConfig
from octoseq.custom_types import CellValue, ExportFormat, ShapeKind
from octoseq.datasets import load_corpus, make_dataset
from octoseq.evaluation import evaluate_model
from octoseq.exceptions import (
    EmptyDatasetError,
    FormatError,
    InvalidTreeError,
    SchemeError,
    ShapeMismatchError,
)
from octoseq.export import export_grid
from octoseq.logger import logger
from octoseq.octree import (
    build_octree,
    delinearize,
    linearize,
    load_sequence,
    octree_to_voxels,
    save_sequence,
)
from octoseq.sampler import sample_many, superresolve
from octoseq.scheme import parse_scheme
from octoseq.stats import corpus_statistics, statistics_table
from octoseq.training import train
from octoseq.voxels import VoxelGrid

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

console = Console()


class UsageError(Exception):
    """Raised instead of exiting when the command line cannot be parsed."""


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _override(model: BaseModel, **updates: Any) -> Any:
    """Validated copy of `model` with every non-None update applied."""
    values = model.model_dump()
    values.update({key: value for key, value in updates.items() if value is not None})
    return type(model).model_validate(values)


def _run_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig()


def cmd_encode(args: argparse.Namespace) -> None:
    grid = VoxelGrid.load(args.input)
    sequence = linearize(build_octree(grid), class_label=args.class_label)
    save_sequence(sequence, args.out, resolution=grid.resolution)
    logger.info(f"{len(sequence)} tokens written to {args.out}")


def cmd_decode(args: argparse.Namespace) -> None:
    sequence, stored = load_sequence(args.input)
    resolution = args.resolution or stored or (1 << max(sequence.depth, 1))
    tree = delinearize(sequence.values)
    octree_to_voxels(tree, resolution).save(args.out)
    logger.info(f"grid of resolution {resolution} written to {args.out}")


def cmd_stats(args: argparse.Namespace) -> None:
    schemes = [parse_scheme(text) for text in (args.scheme or ["baseline"])]
    grids = [entry.grid for entry in load_corpus(args.corpus)]
    console.print(statistics_table(corpus_statistics(grids, schemes), schemes))


def cmd_make_dataset(args: argparse.Namespace) -> None:
    spec = _override(
        _run_config(args).dataset,
        kind=args.kind,
        resolution=args.resolution,
        count=args.count,
        seed=args.seed,
        max_primitives=args.max_primitives,
    )
    make_dataset(spec, args.out)


def cmd_train(args: argparse.Namespace) -> None:
    config = _run_config(args)
    model_config = _override(config.model, scheme=args.scheme, max_depth=args.max_depth)
    train_config = _override(
        config.train,
        seed=args.seed,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        max_steps=args.max_steps,
    )
    entries = load_corpus(args.corpus)
    labels = [None if args.unconditional else entry.label for entry in entries]
    result = train(
        [entry.grid for entry in entries],
        labels,
        model_config,
        train_config,
        checkpoint_path=args.out,
        metrics_path=args.metrics,
    )
    if result.history:
        last = result.history[-1]
        console.print(f"final loss {last.loss:.4f}, {last.bits_per_token:.4f} bits/token")


def cmd_sample(args: argparse.Namespace) -> None:
    config = _override(
        _run_config(args).sample,
        temperature=args.temperature,
        max_depth=args.max_depth,
        class_label=args.class_label,
        seed=args.seed,
        count=args.count,
    )
    model = load_checkpoint(args.checkpoint)
    results = anyio.run(sample_many, model, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for index, result in enumerate(results):
        result.grid.save(out / f"sample_{index:03d}.octv")
        save_sequence(result.sequence, out / f"sample_{index:03d}.txt", result.grid.resolution)
        if result.truncated:
            logger.warning(f"sample {index} ran out of transformer positions")
    logger.info(f"{len(results)} samples written to {out}")


def cmd_upres(args: argparse.Namespace) -> None:
    config = _override(
        _run_config(args).sample,
        temperature=args.temperature,
        class_label=args.class_label,
        seed=args.seed,
    )
    model = load_checkpoint(args.checkpoint)
    prefix, _ = load_sequence(args.input)
    if args.prefix_depth is not None:
        prefix = prefix.truncate(args.prefix_depth)
    target = args.max_depth or model.config.max_depth
    result = superresolve(model, prefix, target, config)
    result.grid.save(args.out)
    logger.info(
        f"{len(prefix)} prefix tokens continued to {len(result.sequence)} tokens at "
        f"resolution {result.grid.resolution}"
    )


def cmd_eval(args: argparse.Namespace) -> None:
    config = _override(
        _run_config(args).sample,
        temperature=args.temperature,
        class_label=args.class_label,
        seed=args.seed,
    )
    model = load_checkpoint(args.checkpoint)
    reference = [entry.grid for entry in load_corpus(args.corpus)]
    report = evaluate_model(model, reference, args.multiplier, config)
    table = Table(title="Generative metrics")
    for name in ("COV %", "MMD", "MMD x1e4", "generated", "reference", "distance", "seed"):
        table.add_column(name, justify="right")
    table.add_row(
        f"{report.coverage:.2f}",
        f"{report.mmd:.6f}",
        f"{report.mmd_scaled:.1f}",
        str(report.generated),
        str(report.reference),
        report.distance,
        str(report.seed),
    )
    console.print(table)
    if args.out:
        report.write_csv(args.out)


def cmd_export(args: argparse.Namespace) -> None:
    if args.input.endswith(".txt"):
        sequence, stored = load_sequence(args.input)
        tree = delinearize(sequence.values, allow_open=True)
        resolution = stored or (1 << max(tree.depth, 1))
        grid = octree_to_voxels(tree, resolution, fill_open=CellValue.FULL)
    else:
        grid = VoxelGrid.load(args.input)
    export_grid(grid, args.format, args.out)


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--verbose", "-v", action="store_true", help="log debug output")

    parser = ArgumentParser(prog="octoseq", description=__doc__.split("\n\n")[0].strip())
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    encode = commands.add_parser("encode", parents=[common], help="voxel grid to sequence")
    encode.add_argument("input")
    encode.add_argument("--out", required=True)
    encode.add_argument("--class", dest="class_label", type=int)
    encode.set_defaults(handler=cmd_encode)

    decode = commands.add_parser("decode", parents=[common], help="sequence to voxel grid")
    decode.add_argument("input")
    decode.add_argument("--out", required=True)
    decode.add_argument("--resolution", type=int)
    decode.set_defaults(handler=cmd_decode)

    stats = commands.add_parser("stats", parents=[common], help="corpus sequence lengths")
    stats.add_argument("corpus")
    stats.add_argument("--scheme", action="append", help="scheme or preset, repeatable")
    stats.set_defaults(handler=cmd_stats)

    dataset = commands.add_parser("make-dataset", parents=[common], help="procedural corpus")
    dataset.add_argument("--out", required=True)
    dataset.add_argument("--kind", choices=[kind.value for kind in ShapeKind])
    dataset.add_argument("--resolution", type=int)
    dataset.add_argument("--count", type=int)
    dataset.add_argument("--max-primitives", type=int)
    dataset.set_defaults(handler=cmd_make_dataset)

    training = commands.add_parser("train", parents=[common], help="fit a model to a corpus")
    training.add_argument("corpus")
    training.add_argument("--out", required=True, help="checkpoint path")
    training.add_argument("--scheme")
    training.add_argument("--max-depth", type=int)
    training.add_argument("--epochs", type=int)
    training.add_argument("--learning-rate", type=float)
    training.add_argument("--max-steps", type=int)
    training.add_argument("--metrics", help="CSV log path")
    training.add_argument("--unconditional", action="store_true", help="ignore class labels")
    training.set_defaults(handler=cmd_train)

    sample = commands.add_parser("sample", parents=[common], help="generate shapes")
    sample.add_argument("--checkpoint", required=True)
    sample.add_argument("--out", required=True)
    sample.add_argument("--class", dest="class_label", type=int)
    sample.add_argument("--temperature", type=float)
    sample.add_argument("--max-depth", type=int)
    sample.add_argument("--count", type=int)
    sample.set_defaults(handler=cmd_sample)

    upres = commands.add_parser("upres", parents=[common], help="continue a truncated sequence")
    upres.add_argument("input")
    upres.add_argument("--checkpoint", required=True)
    upres.add_argument("--out", required=True)
    upres.add_argument("--prefix-depth", type=int, help="truncate the input to this depth")
    upres.add_argument("--max-depth", type=int, help="target depth")
    upres.add_argument("--class", dest="class_label", type=int)
    upres.add_argument("--temperature", type=float)
    upres.set_defaults(handler=cmd_upres)

    evaluate = commands.add_parser("eval", parents=[common], help="COV and MMD against a corpus")
    evaluate.add_argument("corpus")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--multiplier", type=int, default=5)
    evaluate.add_argument("--out", help="CSV report path")
    evaluate.add_argument("--class", dest="class_label", type=int)
    evaluate.add_argument("--temperature", type=float)
    evaluate.set_defaults(handler=cmd_eval)

    export = commands.add_parser("export", parents=[common], help="OBJ mesh or PGM slices")
    export.add_argument("input", help="OCTV grid or sequence text file")
    export.add_argument("--format", required=True, choices=[kind.value for kind in ExportFormat])
    export.add_argument("--out", required=True)
    export.set_defaults(handler=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as error:
        print(f"octoseq: error: {error}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.handler(args)
    except (ValidationError, SchemeError) as error:
        print(f"octoseq: invalid configuration: {error}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InvalidTreeError, ShapeMismatchError, EmptyDatasetError) as error:
        print(f"octoseq: {error}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        logger.exception(f"octoseq {args.command} failed")
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
