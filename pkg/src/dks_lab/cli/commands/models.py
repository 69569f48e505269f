"""``export`` and ``eval`` commands, which work on saved checkpoints."""

from pathlib import Path
from typing import Annotated

import typer

from dks_lab.cli.commands.common import PrecisionOption, reporting_errors, write_snapshot
from dks_lab.cli.output import Formatter
from dks_lab.core.dataset import META_NAME, Dataset, Split
from dks_lab.core.tensor import get_precision, precision
from dks_lab.core.trainer import evaluate
from dks_lab.models.checkpoint import export_stripped, load_checkpoint

CheckpointArgument = Annotated[
    Path, typer.Argument(help="Checkpoint directory (manifest.json + params.bin).")
]


def export(
    checkpoint: CheckpointArgument,
    out: Annotated[Path, typer.Argument(help="Directory for the stripped checkpoint.")],
) -> None:
    """Strip the auxiliary classifiers from a checkpoint for deployment."""
    formatter = Formatter()
    with reporting_errors(formatter):
        before, after = export_stripped(checkpoint, out)
        formatter.format_key_value(
            {
                "trainable parameters": before,
                "after stripping": after,
                "removed": before - after,
            },
            title="Export",
        )
        formatter.success(f"Stripped checkpoint written to {out}")


def _dataset_dir(path: Path, split: Split) -> Path:
    return path if (path / META_NAME).exists() else path / split


def eval_checkpoint(
    checkpoint: CheckpointArgument,
    data: Annotated[
        Path, typer.Argument(help="Dataset directory, or a root holding train/ and test/.")
    ],
    split: Annotated[Split, typer.Option("--split", help="Split under a root directory.")] = (
        Split.TEST
    ),
    bits: PrecisionOption = None,
) -> None:
    """Report the top-1 error of every head of a checkpoint on a dataset."""
    formatter = Formatter()
    with reporting_errors(formatter), precision(bits or get_precision()):
        model, manifest = load_checkpoint(checkpoint)
        dataset = Dataset.load(_dataset_dir(data, split))
        errors = evaluate(model, dataset)
        formatter.format_table(
            ["head", "top-1 error %"],
            [(head_id, errors[head_id]) for head_id in model.head_ids],
            title=f"{len(dataset)} samples, checkpoint epoch {manifest.metadata.get('epoch', '?')}",
        )
        write_snapshot(
            checkpoint.parent / f"eval-{checkpoint.name}",
            {"checkpoint": checkpoint, "data": data, "split": split, "errors": errors},
        )


def register(app: typer.Typer) -> None:
    """Attach the commands to ``app``."""
    app.command("export")(export)
    app.command("eval")(eval_checkpoint)
