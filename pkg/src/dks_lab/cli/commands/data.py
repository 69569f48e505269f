"""``gen-data`` and ``convert-data`` commands."""

from pathlib import Path
from typing import Annotated

import typer

from dks_lab.cli.commands.common import reporting_errors, write_snapshot
from dks_lab.cli.output import Formatter
from dks_lab.core.dataset import Dataset, Split, generate_synthetic
from dks_lab.utils.raw_formats import RawFormat, convert

OutArgument = Annotated[Path, typer.Argument(help="Root directory for train/ and test/.")]


def _report_splits(formatter: Formatter, train: Dataset, test: Dataset, out: Path) -> None:
    formatter.format_table(
        ["split", "samples", "classes", "shape"],
        [
            (
                str(dataset.split),
                len(dataset),
                dataset.num_classes,
                "x".join(map(str, dataset.sample_shape)),
            )
            for dataset in (train, test)
        ],
        title="Dataset",
    )
    formatter.success(f"Dataset written to {out}")


def gen_data(
    out: OutArgument,
    classes: Annotated[int, typer.Option("--classes", help="Number of classes K.")] = 4,
    per_class: Annotated[int, typer.Option("--per-class", help="Training samples per class.")] = (
        250
    ),
    test_per_class: Annotated[
        int | None, typer.Option("--test-per-class", help="Test samples per class.")
    ] = None,
    image_size: Annotated[int, typer.Option("--image-size", help="Image side in pixels.")] = 32,
    seed: Annotated[int, typer.Option("--seed", min=0, help="Generator seed.")] = 0,
) -> None:
    """Generate the synthetic textured-template dataset."""
    formatter = Formatter()
    with reporting_errors(formatter):
        train, test = generate_synthetic(
            classes, per_class, image_size, seed, test_per_class=test_per_class
        )
        train.save(out / Split.TRAIN)
        test.save(out / Split.TEST)
        write_snapshot(
            out,
            {
                "command": "gen-data",
                "classes": classes,
                "per_class": per_class,
                "test_per_class": test_per_class,
                "image_size": image_size,
                "seed": seed,
            },
        )
        _report_splits(formatter, train, test, out)


def convert_data(
    fmt: Annotated[RawFormat, typer.Argument(metavar="FORMAT", help="Raw dump layout.")],
    out: OutArgument,
    train_files: Annotated[
        list[Path], typer.Option("--train", help="Training input file; repeatable.")
    ],
    test_files: Annotated[list[Path], typer.Option("--test", help="Test input file; repeatable.")],
) -> None:
    """Convert CIFAR-10/100 binary batches or MNIST idx files.

    MNIST takes the images file first and the labels file second for each split.
    """
    formatter = Formatter()
    with reporting_errors(formatter):
        train, test = convert(fmt, train_files, test_files, out)
        write_snapshot(
            out,
            {"command": "convert-data", "format": fmt, "train": train_files, "test": test_files},
        )
        _report_splits(formatter, train, test, out)


def register(app: typer.Typer) -> None:
    """Attach the commands to ``app``."""
    app.command("gen-data")(gen_data)
    app.command("convert-data")(convert_data)
