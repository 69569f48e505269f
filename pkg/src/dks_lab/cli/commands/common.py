"""Helpers shared by the command modules."""

import json
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any

import typer

from dks_lab.cli.output import Formatter
from dks_lab.exceptions import DksException
from dks_lab.models.config import RESOLVED_CONFIG_NAME, RunConfig, load_run_config

ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", "-c", help="Run config (UTF-8 JSON). Defaults apply when omitted."),
]
SeedOption = Annotated[
    int | None, typer.Option("--seed", min=0, help="Override model and training seeds.")
]
OutOption = Annotated[Path | None, typer.Option("--out", "-o", help="Output directory.")]
PrecisionOption = Annotated[
    int | None, typer.Option("--precision", help="Floating-point width: 32 or 64.")
]


@contextmanager
def reporting_errors(formatter: Formatter) -> Iterator[None]:
    """Print a :class:`DksException` escaping the block and exit with its code."""
    try:
        yield
    except DksException as e:
        formatter.exception(e)
        raise typer.Exit(code=e.exit_code) from e


def resolve_run_config(
    config: Path | None,
    *,
    seed: int | None = None,
    out: Path | None = None,
    precision: int | None = None,
) -> RunConfig:
    """Load ``config`` (or the defaults) and apply command-line overrides."""
    base = load_run_config(config) if config is not None else RunConfig()
    return base.with_overrides(seed=seed, output_dir=out, precision=precision)


def write_snapshot(directory: Path, payload: dict[str, Any]) -> Path:
    """Write the parameters of a non-training command next to its artifacts."""
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / RESOLVED_CONFIG_NAME
    target.write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )
    return target
