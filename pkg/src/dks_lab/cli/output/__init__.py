"""Rich rendering of command results: status lines, tables and errors with hints."""

from dks_lab.cli.output.formatter import Formatter, MessageType

__all__ = ["Formatter", "MessageType"]
