import jax
import jax.numpy as jnp
import numpy as np
import pytest
from jax.flatten_util import ravel_pytree

from geovmc import model as model_lib
from geovmc import pretraining
from geovmc.errors import ConfigurationError
from geovmc.pretraining import AnalyticLCAO, ExternalOrbitals, LambSettings, lamb_init, lamb_update
from geovmc.runner.checks import small_model_config
from geovmc.runner.config import from_dict
from geovmc.runner.trainer import Trainer
from geovmc.templates import realize


def test_hydrogen_target_is_slater_1s(rng):
    atom = realize("atom", [0.0], {"charge": 1, "n_up": 1, "n_dn": 0})
    r = rng.normal(size=(50, 1, 3))
    t = pretraining.target_orbitals(AnalyticLCAO(), r, atom, n_det=1)
    ratio = t["up"][:, 0, 0, 0] / np.exp(-np.linalg.norm(r[:, 0], axis=-1))
    assert np.allclose(ratio, ratio[0], rtol=1e-12)
    assert t["dn"].shape == (50, 1, 0, 0)


def test_target_shapes_match_model_orbitals(rng):
    config = realize("diatomic", [2.0], {"charges": [3, 1], "n_up": 2, "n_dn": 2})
    cfg = small_model_config(2, 2)
    theta = model_lib.init_model(jax.random.PRNGKey(0), cfg)
    r = rng.normal(size=(6, 4, 3))
    model = pretraining.model_orbitals(theta, jnp.asarray(r), model_lib.prepare(config, cfg), cfg)
    targets = pretraining.target_orbitals(AnalyticLCAO(), r, config, cfg.wf.n_det)
    for spin in ("up", "dn"):
        assert model[spin].shape == targets[spin].shape == (6, cfg.wf.n_det, 2, 2)


def test_targets_cycle_over_reference_geometries(rng):
    a, b = realize("diatomic", [1.2]), realize("diatomic", [1.8])
    r = rng.normal(size=(3, 2, 3))
    t = pretraining.target_orbitals(AnalyticLCAO(), r, a, 3, [a, b])
    assert np.array_equal(t["up"][:, 0], t["up"][:, 2])
    assert not np.allclose(t["up"][:, 0], t["up"][:, 1])


def test_external_orbitals_round_trip(tmp_path, rng):
    config = realize("diatomic", [1.4])
    lcao = AnalyticLCAO().orbitals(config)
    ext = ExternalOrbitals(lcao.basis, [(config.positions, config.charges, lcao.coefficients)])
    x = rng.normal(size=(20, 2, 3))
    for name in ("orbitals.yaml", "orbitals.json"):
        ext.save(tmp_path / name)
        back = ExternalOrbitals.load(tmp_path / name)
        a = pretraining.target_orbitals(ext, x, config, 2)
        b = pretraining.target_orbitals(back, x, config, 2)
        assert np.allclose(a["up"], b["up"], rtol=1e-12, atol=0)
    with pytest.raises(ConfigurationError, match="does not cover"):
        back.orbitals(realize("diatomic", [2.0]))


def test_loss_examples(rng):
    m = {"up": jnp.asarray(rng.normal(size=(4, 2, 2, 2))), "dn": jnp.asarray(rng.normal(size=(4, 2, 1, 1)))}
    assert float(pretraining.pretrain_loss(m, m)) == 0.0
    shifted = jax.tree_util.tree_map(lambda a: a + 0.3, m)
    assert np.isclose(float(pretraining.pretrain_loss(shifted, m)), 0.09)
    with pytest.raises(ValueError, match="up"):
        pretraining.pretrain_loss({"up": m["up"][:, :1], "dn": m["dn"]}, m)


def test_loss_gradient_matches_finite_differences(rng):
    config = realize("diatomic", [1.6], {"charges": [2, 1], "n_up": 2, "n_dn": 1})
    cfg = small_model_config(2, 1)
    theta = model_lib.init_model(jax.random.PRNGKey(1), cfg)
    geom = model_lib.prepare(config, cfg)
    r = rng.normal(size=(8, 3, 3))
    targets = pretraining.target_orbitals(AnalyticLCAO(), r, config, cfg.wf.n_det)
    flat, unravel = ravel_pytree(theta)

    def loss(v):
        return pretraining.pretrain_loss(pretraining.model_orbitals(unravel(v), jnp.asarray(r), geom, cfg), targets)

    grad = np.asarray(jax.grad(loss)(flat))
    per_leaf = pretraining.trainable_mask(theta)
    mask, _ = ravel_pytree(jax.tree_util.tree_map(lambda m, x: jnp.full(x.shape, float(m)), per_leaf, theta))
    idx = rng.choice(np.flatnonzero((np.asarray(mask) > 0) & (np.abs(grad) > 1e-6)), 12, replace=False)
    h = 1e-4
    for i in idx:
        e = jnp.zeros_like(flat).at[i].set(h)
        fd = (loss(flat + e) - loss(flat - e)) / (2 * h)
        fd2 = (loss(flat + 2 * e) - loss(flat - 2 * e)) / (4 * h)
        fd = (4 * fd - fd2) / 3
        assert abs(grad[i] - fd) / abs(grad[i]) < 1e-4


def test_lamb_fixed_point_and_hand_recurrence():
    params = {"w": jnp.array([1.0, -2.0])}
    zero = {"w": jnp.zeros(2)}
    out, _ = lamb_update(params, zero, lamb_init(params), LambSettings())
    assert np.array_equal(out["w"], params["w"])

    s = LambSettings(lr=0.01)
    p, g = 1.5, 0.4
    m = v = 0.0
    state, jp = lamb_init({"p": jnp.array(p)}), {"p": jnp.array(p)}
    for t in range(1, 4):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        u = (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-6)
        p = p - s.lr * (abs(p) / abs(u)) * u
        jp, state = lamb_update(jp, {"p": jnp.array(g)}, state, s)
        assert np.isclose(float(jp["p"]), p, rtol=1e-13)


def test_masked_parameters_are_bitwise_frozen():
    config = realize("diatomic", [1.4])
    cfg = small_model_config(1, 1)
    theta = model_lib.init_model(jax.random.PRNGKey(2), cfg)
    geom = model_lib.stack([model_lib.prepare(config, cfg)])
    r = jax.random.normal(jax.random.PRNGKey(3), (1, 16, 2, 3))
    targets = pretraining.target_orbitals(AnalyticLCAO(), np.asarray(r[0]), config, cfg.wf.n_det)
    targets = jax.tree_util.tree_map(lambda a: jnp.asarray(a)[None], targets)
    state = pretraining.PretrainState(theta, lamb_init(theta))
    for _ in range(3):
        state, loss = pretraining.pretrain_step(state, r, geom, targets, cfg)
        assert np.isfinite(loss)
    mask = pretraining.trainable_mask(theta)
    changed = jax.tree_util.tree_map(lambda a, b: not np.array_equal(a, b), theta, state.theta)
    for trainable, moved in zip(jax.tree_util.tree_leaves(mask), jax.tree_util.tree_leaves(changed)):
        if not trainable:
            assert not moved
    assert any(jax.tree_util.tree_leaves(changed))


@pytest.mark.slow
def test_hydrogen_pretraining_reduces_loss_hundredfold():
    cfg = from_dict(
        {
            "preset": "desk",
            "system": {"template": "atom", "params": [0.0], "options": {"charge": 1, "n_up": 1, "n_dn": 0}},
            "model": {"n_det": 1},
            "pretraining": {"iterations": 2000, "lr": 0.003},
        }
    )
    losses = Trainer(cfg, log_path=None).pretrain()
    assert len(losses) == 2000 and np.all(np.isfinite(losses))
    assert losses[0] / np.mean(losses[-50:]) >= 100
