"""Model definitions: layers, blocks, multi-head networks, configs and checkpoints."""

from dks_lab.models.config import RunConfig, load_run_config
from dks_lab.models.multihead import MultiHeadModel

__all__ = ["MultiHeadModel", "RunConfig", "load_run_config"]
