"""Configuration, training loop, checkpoints, evaluation and the command line."""

from geovmc.runner.config import RunConfig, from_dict, load_config

__all__ = ["RunConfig", "from_dict", "load_config"]
