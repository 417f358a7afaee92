"""Joint parameters of the wave function and the generating graph network.

``theta = {'wf': shared wave-function slots, 'gnn': graph network}``.  For a
given geometry the graph network fills in the remaining wave-function slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import jax
import jax.numpy as jnp

from geovmc import metagnn, wfmodel
from geovmc.geometry import MolecularConfiguration, build_frame, canonical_order
from geovmc.metagnn import GNNConfig, GraphInputs
from geovmc.wfmodel import System, WFConfig


@dataclass(frozen=True)
class ModelConfig:
    wf: WFConfig
    gnn: GNNConfig = field(default_factory=GNNConfig)

    @property
    def n_up(self) -> int:
        return self.wf.n_up


class Geometry(NamedTuple):
    """Everything the model needs about one geometry, as arrays."""

    system: System
    graph: GraphInputs


def init_model(key: jax.Array, cfg: ModelConfig) -> dict:
    k_wf, k_gnn = jax.random.split(key)
    wf = wfmodel.init_params(k_wf, cfg.wf, 1)["shared"]
    return {"wf": wf, "gnn": metagnn.init_gnn_params(k_gnn, cfg.gnn, cfg.wf)}


def prepare(config: MolecularConfiguration, cfg: ModelConfig) -> Geometry:
    """Arrays for one geometry, nuclei in canonical order so that any
    relabeling of the input yields bitwise-identical arrays."""
    config = config.permuted(canonical_order(config))
    frame = build_frame(config)
    return Geometry(wfmodel.make_system(config, frame), metagnn.build_graph(config, frame, cfg.gnn))


def stack(geoms) -> Geometry:
    return jax.tree_util.tree_map(lambda *xs: jnp.stack(xs), *geoms)


def wf_params(theta: dict, geom: Geometry, cfg: ModelConfig) -> dict:
    assignment = metagnn.apply(theta["gnn"], geom.graph, cfg.gnn, cfg.wf)
    return wfmodel.assemble(theta["wf"], assignment)


def log_psi(theta: dict, r, geom: Geometry, cfg: ModelConfig):
    return wfmodel.log_psi(wf_params(theta, geom, cfg), r, geom.system, cfg.n_up)


def log_abs_psi(theta: dict, r, geom: Geometry, cfg: ModelConfig):
    return log_psi(theta, r, geom, cfg).log_abs
