"""Graph network over nuclei that generates geometry-dependent wave-function slots.

Node embeddings start from a charge embedding concatenated with a
Fourier-Bessel encoding of the nucleus position in the equivariant frame.
Message passing runs on the fully connected graph with Bessel-encoded
distances on the edges.  Two readouts follow: a sum-pooled one for the
``global`` slots and a per-node one for the ``node`` slots, each a trunk MLP
with one linear head per parameter slot.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from geovmc import basis
from geovmc.errors import ConfigurationError
from geovmc.geometry import EquivariantFrame, MolecularConfiguration
from geovmc.wfmodel import WFConfig, init_params


@dataclass(frozen=True)
class GNNConfig:
    embedding_dim: int = 64
    message_dim: int = 32
    n_layers: int = 2
    n_sbf: int = 7
    n_rbf: int = 6
    cutoff: float = 10.0
    max_charge: int = 10
    head_init_scale: float = 1e-7

    @property
    def encoding_dim(self) -> int:
        return self.n_sbf * self.n_rbf


class GraphInputs(NamedTuple):
    """Geometry-derived network inputs; fixed per geometry, no parameters involved."""

    charges: jax.Array  # (M,) int
    pos_encoding: jax.Array  # (M, n_sbf * n_rbf)
    edges: jax.Array  # (M, M, n_rbf)
    edge_mask: jax.Array  # (M, M), zero on the diagonal


def positional_encoding(x, cfg: GNNConfig) -> np.ndarray:
    return basis.positional_encoding(x, cfg.n_sbf, cfg.n_rbf, cfg.cutoff)


def build_graph(config: MolecularConfiguration, frame: EquivariantFrame, cfg: GNNConfig) -> GraphInputs:
    unknown = sorted({int(z) for z in config.charges if z > cfg.max_charge})
    if unknown:
        raise ConfigurationError(
            f"nuclear charge {unknown[0]} is not covered by the charge embedding "
            f"(max_charge={cfg.max_charge})"
        )
    pos = config.positions
    enc = positional_encoding(frame.to_frame(pos), cfg)
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    mask = 1.0 - np.eye(len(pos))
    edges = basis.bessel_rbf(dist, cfg.n_rbf, cfg.cutoff) * mask[..., None]
    return GraphInputs(
        jnp.asarray(config.charges, dtype=jnp.int32),
        jnp.asarray(enc),
        jnp.asarray(edges),
        jnp.asarray(mask),
    )


def stack_graphs(graphs) -> GraphInputs:
    return GraphInputs(*(jnp.stack(x) for x in zip(*graphs)))


@functools.lru_cache(maxsize=None)
def slot_layout(wf_cfg: WFConfig):
    """Tree structure and per-nucleus shapes of the generated slots."""
    template = jax.eval_shape(lambda: init_params(jax.random.PRNGKey(0), wf_cfg, 1))
    g_leaves, g_def = jax.tree_util.tree_flatten(template["global"])
    n_leaves, n_def = jax.tree_util.tree_flatten(template["node"])
    return (
        g_def,
        tuple(tuple(x.shape) for x in g_leaves),
        n_def,
        tuple(tuple(x.shape[1:]) for x in n_leaves),
    )


def _dense(key, n_in, n_out):
    return {"w": jax.random.normal(key, (n_in, n_out)) / np.sqrt(n_in), "b": jnp.zeros(n_out)}


def _mlp_init(key, sizes):
    keys = jax.random.split(key, len(sizes) - 1)
    return [_dense(k, a, b) for k, a, b in zip(keys, sizes[:-1], sizes[1:])]


def mlp(layers, x):
    """tanh feed-forward network with residuals wherever a layer keeps its width."""
    for layer in layers:
        y = jnp.tanh(x @ layer["w"] + layer["b"])
        x = y + x if y.shape == x.shape else y
    return x


def init_gnn_params(key: jax.Array, cfg: GNNConfig, wf_cfg: WFConfig) -> dict:
    E, Msg = cfg.embedding_dim, cfg.message_dim
    keys = iter(jax.random.split(key, 8 + 2 * cfg.n_layers))
    params = {
        "charge_table": jax.random.normal(next(keys), (cfg.max_charge + 1, E)),
        "layers": [],
    }
    d_l = E + cfg.encoding_dim
    for _ in range(cfg.n_layers):
        params["layers"].append(
            {
                "msg": _mlp_init(next(keys), [2 * d_l + cfg.n_rbf, Msg, Msg]),
                "update": _mlp_init(next(keys), [d_l + Msg, E, E]),
            }
        )
        d_l = E
    readout_in = cfg.n_layers * E

    reference = init_params(next(keys), wf_cfg, 1)
    # final-layer biases carry the wave-function initial values; weights are tiny
    def heads(key, leaves, per_node):
        out = []
        for k, leaf in zip(jax.random.split(key, len(leaves)), leaves):
            value = leaf[0] if per_node else leaf
            size = int(np.prod(value.shape))
            out.append(
                {
                    "w": cfg.head_init_scale * jax.random.normal(k, (E, size)) / np.sqrt(E),
                    "b": jnp.reshape(value, (size,)),
                }
            )
        return out

    params["global_out"] = {
        "trunk": _mlp_init(next(keys), [readout_in, E, E]),
        "heads": heads(next(keys), jax.tree_util.tree_leaves(reference["global"]), False),
    }
    params["node_out"] = {
        "trunk": _mlp_init(next(keys), [readout_in, E, E]),
        "heads": heads(next(keys), jax.tree_util.tree_leaves(reference["node"]), True),
    }
    return params


def init_node_embeddings(params: dict, graph: GraphInputs) -> jax.Array:
    """``l_m = [G[Z_m], f_pos(R'_m E)]``."""
    return jnp.concatenate([params["charge_table"][graph.charges], graph.pos_encoding], axis=-1)


def message_passing_step(l: jax.Array, graph: GraphInputs, layer: dict) -> jax.Array:
    """``l_m <- f_update(l_m, sum_{n != m} f_msg(l_m, l_n, e_mn))``."""
    M = l.shape[0]
    pair = jnp.concatenate(
        [
            jnp.broadcast_to(l[:, None], (M, M, l.shape[-1])),
            jnp.broadcast_to(l[None], (M, M, l.shape[-1])),
            graph.edges,
        ],
        axis=-1,
    )
    messages = mlp(layer["msg"], pair) * graph.edge_mask[..., None]
    update = mlp(layer["update"], jnp.concatenate([l, jnp.sum(messages, axis=1)], axis=-1))
    return update + l if update.shape == l.shape else update


def _readout(out: dict, x: jax.Array, shapes, lead: tuple):
    trunk = mlp(out["trunk"], x)
    return [
        jnp.reshape(trunk @ head["w"] + head["b"], lead + shape)
        for head, shape in zip(out["heads"], shapes)
    ]


@functools.partial(jax.jit, static_argnums=(2, 3))
def apply(params: dict, graph: GraphInputs, cfg: GNNConfig, wf_cfg: WFConfig) -> dict:
    """Generated slots ``{'global': ..., 'node': ...}`` for one geometry."""
    g_def, g_shapes, n_def, n_shapes = slot_layout(wf_cfg)
    l = init_node_embeddings(params, graph)
    history = []
    for layer in params["layers"]:
        l = message_passing_step(l, graph, layer)
        history.append(l)
    per_node = jnp.concatenate(history, axis=-1)
    pooled = jnp.concatenate([jnp.sum(x, axis=0) for x in history], axis=-1)
    M = graph.charges.shape[0]
    glob = _readout(params["global_out"], pooled, g_shapes, ())
    node = _readout(params["node_out"], per_node, n_shapes, (M,))
    return {
        "global": jax.tree_util.tree_unflatten(g_def, glob),
        "node": jax.tree_util.tree_unflatten(n_def, node),
    }


def generate_params(
    params: dict,
    config: MolecularConfiguration,
    frame: EquivariantFrame,
    cfg: GNNConfig,
    wf_cfg: WFConfig,
) -> dict:
    return apply(params, build_graph(config, frame, cfg), cfg, wf_cfg)


def head_bias_mask(params: dict):
    """Boolean tree marking the final biases of both readout heads."""
    mask = jax.tree_util.tree_map(lambda _: False, params)
    for out in ("global_out", "node_out"):
        mask[out]["heads"] = [{"w": False, "b": True} for _ in params[out]["heads"]]
    return mask
