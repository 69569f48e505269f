"""CLI commands package.

Every module exposes ``register(app)``, which attaches its commands.
"""
