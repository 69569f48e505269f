"""Main CLI application entry point."""

from typing import Annotated

import typer

from dks_lab import __version__
from dks_lab.cli.commands import data, models, run, verify
from dks_lab.utils.log_config import configure_logging

app = typer.Typer(
    name="dks",
    help="dks-lab - train and verify deeply-supervised knowledge synergy models",
    add_completion=True,
    no_args_is_help=True,
)

for module in (run, models, verify, data):
    module.register(app)


@app.command()
def version() -> None:
    """Display version information."""
    typer.echo(f"dks-lab version {__version__}")


@app.callback(invoke_without_command=True)
def main_callback(
    version_flag: Annotated[
        bool, typer.Option("--version", "-V", help="Show version and exit.", is_flag=True)
    ] = False,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log debug records.")] = False,
) -> None:
    """dks-lab - deeply-supervised knowledge synergy at desk scale."""
    if version_flag:
        typer.echo(f"dks-lab version {__version__}")
        raise typer.Exit
    configure_logging(verbose)


def main() -> None:
    """Entry point for the CLI application."""
    app()


if __name__ == "__main__":
    main()
