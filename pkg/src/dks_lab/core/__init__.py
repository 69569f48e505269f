"""Autodiff engine, objectives, training loop and verification harness."""
