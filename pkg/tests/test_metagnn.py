import jax
import jax.numpy as jnp
import numpy as np
import pytest

from geovmc import metagnn, wfmodel
from geovmc.errors import ConfigurationError
from geovmc.geometry import MolecularConfiguration, build_frame
from geovmc.metagnn import GNNConfig
from geovmc.templates import realize
from geovmc.wfmodel import WFConfig

WF = WFConfig(n_up=2, n_dn=2, single_width=16, double_width=8, n_layers=2, n_det=2, embedding_dim=8)
GNN = GNNConfig(embedding_dim=8, message_dim=8)


@pytest.fixture(scope="module")
def gnn_params():
    params = metagnn.init_gnn_params(jax.random.PRNGKey(0), GNN, WF)
    # larger head weights so that outputs depend on the geometry
    return jax.tree_util.tree_map(lambda x: x + 0.1 * jnp.cos(jnp.arange(x.size).reshape(x.shape)), params)


def graph_of(config, cfg=GNN):
    return metagnn.build_graph(config, build_frame(config), cfg)


def test_default_sizes():
    cfg = GNNConfig()
    assert cfg.n_sbf * cfg.n_rbf == 42
    params = metagnn.init_gnn_params(jax.random.PRNGKey(0), cfg, WFConfig(1, 1))
    assert params["charge_table"].shape[1] == 64


def test_symmetric_nuclei_get_different_embeddings(gnn_params):
    h2 = realize("diatomic", [1.4])
    emb = metagnn.init_node_embeddings(gnn_params, graph_of(h2))
    assert not np.allclose(emb[0], emb[1])


def test_embeddings_and_messages_permute_with_nuclei(gnn_params):
    config = MolecularConfiguration([[0, 0, 0], [0.2, 1.3, 0.1], [1.4, 0.3, -0.5]], [3, 1, 1], 3, 2)
    perm = np.array([2, 0, 1])
    g1, g2 = graph_of(config), graph_of(config.permuted(perm))
    e1, e2 = metagnn.init_node_embeddings(gnn_params, g1), metagnn.init_node_embeddings(gnn_params, g2)
    assert np.allclose(e1[perm], e2, atol=1e-14)
    layer = gnn_params["layers"][0]
    m1 = metagnn.message_passing_step(e1, g1, layer)
    m2 = metagnn.message_passing_step(e2, g2, layer)
    assert np.allclose(m1[perm], m2, atol=1e-13)
    assert np.allclose(g1.edges, np.swapaxes(g1.edges, 0, 1))


def test_single_nucleus_has_no_messages(gnn_params):
    atom = realize("atom", [0.0], {"charge": 4, "n_up": 2, "n_dn": 2})
    graph = graph_of(atom)
    l = metagnn.init_node_embeddings(gnn_params, graph)
    layer = gnn_params["layers"][0]
    update = metagnn.mlp(layer["update"], jnp.concatenate([l, jnp.zeros((1, GNN.message_dim))], axis=-1))
    expected = update + l if update.shape == l.shape else update
    assert np.allclose(metagnn.message_passing_step(l, graph, layer), expected)


def test_generated_shapes_match_wave_function_slots(gnn_params):
    config = MolecularConfiguration([[0, 0, 0], [0, 0, 2.0], [1.5, 0, 0]], [2, 1, 1], 2, 2)
    out = metagnn.generate_params(gnn_params, config, build_frame(config), GNN, WF)
    ref = wfmodel.init_params(jax.random.PRNGKey(1), WF, 3)
    for group in ("global", "node"):
        ref_shapes = jax.tree_util.tree_map(jnp.shape, ref[group])
        out_shapes = jax.tree_util.tree_map(jnp.shape, out[group])
        assert ref_shapes == out_shapes


def test_permuting_nuclei_permutes_node_rows(gnn_params):
    config = MolecularConfiguration([[0, 0, 0], [0, 0, 2.0], [1.5, 0.2, 0]], [2, 1, 1], 2, 2)
    perm = np.array([1, 2, 0])
    a = metagnn.generate_params(gnn_params, config, build_frame(config), GNN, WF)
    moved = config.permuted(perm)
    b = metagnn.generate_params(gnn_params, moved, build_frame(moved), GNN, WF)
    for x, y in zip(jax.tree_util.tree_leaves(a["global"]), jax.tree_util.tree_leaves(b["global"])):
        assert np.allclose(x, y, atol=1e-12)
    for x, y in zip(jax.tree_util.tree_leaves(a["node"]), jax.tree_util.tree_leaves(b["node"])):
        assert np.allclose(np.asarray(x)[perm], y, atol=1e-12)


def test_initial_assignments_are_geometry_independent():
    params = metagnn.init_gnn_params(jax.random.PRNGKey(0), GNN, WF)
    a_conf, b_conf = realize("diatomic", [1.0], {"n_up": 1, "n_dn": 1}), realize("diatomic", [2.5], {"n_up": 1, "n_dn": 1})
    wf = WFConfig(1, 1, 16, 8, 2, 2, 8)
    params = metagnn.init_gnn_params(jax.random.PRNGKey(0), GNN, wf)
    a = metagnn.generate_params(params, a_conf, build_frame(a_conf), GNN, wf)
    b = metagnn.generate_params(params, b_conf, build_frame(b_conf), GNN, wf)
    diffs = [float(np.max(np.abs(x - y), initial=0.0)) for x, y in zip(jax.tree_util.tree_leaves(a), jax.tree_util.tree_leaves(b))]
    assert max(diffs) < 1e-6
    # and they equal the wave function's own initial values
    ref = wfmodel.init_params(jax.random.PRNGKey(1), wf, 2)
    assert np.allclose(a["global"]["det_w"], ref["global"]["det_w"], atol=1e-6)
    assert np.allclose(a["node"]["s"]["up"], ref["node"]["s"]["up"], atol=1e-6)


def test_unknown_charge_is_rejected():
    config = MolecularConfiguration([[0, 0, 0]], [11], 6, 5)
    with pytest.raises(ConfigurationError, match="11"):
        graph_of(config)


def test_head_bias_mask_selects_only_final_biases(gnn_params):
    mask = metagnn.head_bias_mask(gnn_params)
    flat = jax.tree_util.tree_leaves_with_path(mask)
    selected = [jax.tree_util.keystr(p) for p, v in flat if v]
    assert selected and all("heads" in s and "['b']" in s for s in selected)
