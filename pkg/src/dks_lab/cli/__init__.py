"""Command-line interface of dks-lab."""
