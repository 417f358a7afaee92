"""Versioned single-file checkpoints with an embedded config copy."""

from __future__ import annotations

import os
import pickle
import tempfile
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from geovmc.errors import CheckpointError
from geovmc.optimizer import TrainState
from geovmc.runner.config import RunConfig, from_dict

FORMAT_VERSION = 1
MAGIC = "geovmc-checkpoint"


def _to_numpy(tree):
    return jax.tree_util.tree_map(np.asarray, tree)


def checkpoint_payload(trainer) -> dict:
    walkers = None
    if trainer.geometry_walkers is not None:
        walkers = [
            {
                "lower": w.lower,
                "upper": w.upper,
                "current": w.current,
                "rng": w.rng.bit_generator.state,
            }
            for w in trainer.geometry_walkers
        ]
    return {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "config": trainer.cfg.to_dict(),
        "params": np.asarray(trainer.state.params),
        "step": trainer.state.step,
        "positions": np.asarray(trainer.positions),
        "keys": np.asarray(trainer.keys),
        "step_sizes": np.asarray(trainer.step_sizes),
        "acceptance": np.asarray(trainer.acceptance),
        "burned_in": trainer.burned_in,
        "pretrain_steps": trainer.pretrain_steps,
        "lamb": _to_numpy(trainer.lamb),
        "geometry_walkers": walkers,
    }


def save_checkpoint(trainer, path) -> Path:
    """Atomically write ``trainer``'s full state to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        pickle.dump(checkpoint_payload(trainer), fh, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(tmp, path)
    return path


def read_checkpoint(path) -> dict:
    try:
        with Path(path).open("rb") as fh:
            data = pickle.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist") from None
    except (pickle.UnpicklingError, EOFError, AttributeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is unreadable: {exc}") from None
    if not isinstance(data, dict) or data.get("magic") != MAGIC:
        raise CheckpointError(f"{path} is not a geovmc checkpoint")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version}, this build reads version {FORMAT_VERSION}"
        )
    return data


def config_from_checkpoint(data: dict) -> RunConfig:
    cfg = dict(data["config"])
    # presets were already merged when the checkpoint was written
    cfg["preset"] = "paper"
    seed = cfg.pop("seed")
    out = from_dict(cfg)
    out.seed = seed
    out.preset = data["config"]["preset"]
    return out


def load_trainer(path, log_path=None):
    """Rebuild a Trainer whose next step is identical to the saved run's."""
    from geovmc.runner.trainer import Trainer

    data = read_checkpoint(path)
    cfg = config_from_checkpoint(data)
    trainer = Trainer(cfg, log_path=log_path)
    if data["params"].shape != trainer.state.params.shape:
        raise CheckpointError("checkpoint parameters do not match the embedded model configuration")
    trainer.state = TrainState(np.array(data["params"]), int(data["step"]), trainer.settings)
    trainer.positions = jnp.asarray(data["positions"])
    trainer.keys = jnp.asarray(data["keys"])
    trainer.step_sizes = np.array(data["step_sizes"])
    trainer.acceptance = np.array(data["acceptance"])
    trainer.burned_in = bool(data["burned_in"])
    trainer.pretrain_steps = int(data["pretrain_steps"])
    trainer.lamb = jax.tree_util.tree_map(jnp.asarray, data["lamb"])
    if data["geometry_walkers"] is not None:
        for w, saved in zip(trainer.geometry_walkers, data["geometry_walkers"]):
            w.lower, w.upper, w.current = (np.array(saved[k]) for k in ("lower", "upper", "current"))
            w.rng.bit_generator.state = saved["rng"]
        s = cfg.system
        from geovmc.templates import realize

        trainer.configs = [realize(s.template, w.current, s.options) for w in trainer.geometry_walkers]
    return trainer
