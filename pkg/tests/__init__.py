"""Test package for dks-lab."""
