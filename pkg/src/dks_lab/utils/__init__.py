"""Logging setup and converters for raw dataset dumps."""
