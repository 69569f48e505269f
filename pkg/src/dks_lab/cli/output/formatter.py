"""Console output for ``dks`` commands, rendered with Rich.

Library code only logs; everything a command reports to the user (run summaries,
per-head error tables, verification verdicts, error messages with hints) goes
through :class:`Formatter`.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from enum import StrEnum
from typing import Any

from rich.console import Console
from rich.table import Table
from rich.text import Text

from dks_lab.exceptions import DksException


class MessageType(StrEnum):
    """Kind of a one-line status message."""

    SUCCESS = "success"
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


_STYLES: dict[MessageType, tuple[str, str]] = {
    MessageType.SUCCESS: ("✓", "green"),
    MessageType.ERROR: ("✗", "red"),
    MessageType.WARNING: ("⚠", "yellow"),
    MessageType.INFO: ("i", "blue"),
}


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    return "" if value is None else str(value)


class Formatter:
    """Terminal renderer for command results.

    Attributes:
        console: The Rich console written to.
    """

    def __init__(self, console: Console | None = None) -> None:
        """Initialize the Formatter.

        Args:
            console: Console to render into; a new standard-output console when None.
        """
        self.console = console if console is not None else Console()

    def success(self, message: str) -> None:
        """Print a green success line."""
        self.message(message, MessageType.SUCCESS)

    def error(self, message: str) -> None:
        """Print a red error line."""
        self.message(message, MessageType.ERROR)

    def warning(self, message: str) -> None:
        """Print a yellow warning line."""
        self.message(message, MessageType.WARNING)

    def info(self, message: str) -> None:
        """Print a blue info line."""
        self.message(message, MessageType.INFO)

    def message(self, message: str, message_type: MessageType) -> None:
        """Print ``message`` prefixed with the symbol of ``message_type``."""
        symbol, color = _STYLES[message_type]
        line = Text()
        line.append(f"{symbol} ", style=f"bold {color}")
        line.append(message)
        self.console.print(line)

    def exception(self, error: DksException) -> None:
        """Print an error line for ``error``, then its hint when it has one."""
        self.error(error.message)
        if error.hint:
            self.console.print(Text(f"  Hint: {error.hint}", style="dim"))

    def format_key_value(self, data: Mapping[str, Any], title: str | None = None) -> None:
        """Print one ``key: value`` line per entry, under an optional bold title."""
        if title:
            self.console.print(Text(title, style="bold"))
        for key, value in data.items():
            line = Text("  ")
            line.append(f"{key}:", style="cyan")
            line.append(f" {_cell(value)}")
            self.console.print(line)

    def format_table(
        self,
        columns: Sequence[str],
        rows: Sequence[Sequence[Any]],
        title: str | None = None,
    ) -> None:
        """Print ``rows`` as a table; floats are shown with four significant digits.

        Args:
            columns: Header labels.
            rows: One sequence of cell values per row, aligned with ``columns``.
            title: Optional caption above the table.
        """
        table = Table(title=title, title_style="bold", header_style="bold cyan")
        for column in columns:
            table.add_column(column)
        for row in rows:
            table.add_row(*(_cell(value) for value in row))
        self.console.print(table)

    def format_title(self, title: str) -> None:
        """Print a bold blue heading."""
        self.console.print(Text(title, style="bold blue"))
