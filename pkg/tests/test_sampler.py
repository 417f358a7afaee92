import jax
import jax.numpy as jnp
import numpy as np

from geovmc import sampler
from geovmc.geometry import build_frame
from geovmc.runner.checks import _stub_batch_logpsi
from geovmc.templates import realize
from geovmc.wfmodel import SignedLogAmplitude


def stub_state(seed=0, batch=64):
    pos = jax.random.normal(jax.random.PRNGKey(seed), (batch, 1, 3))
    value = _stub_batch_logpsi(pos)
    return sampler.WalkerState(pos, value.sign, value.log_abs, jax.random.PRNGKey(seed + 1), 0.3)


def test_acceptance_probability_examples():
    assert float(sampler.acceptance_probability(-1.0, -1.0)) == 1.0
    assert np.isclose(sampler.acceptance_probability(-2.0, -1.0), np.exp(-2.0))
    assert float(sampler.acceptance_probability(-jnp.inf, 0.0)) == 0.0


def test_zero_steps_is_identity_and_chains_are_deterministic():
    state = stub_state()
    assert sampler.run_chain(state, _stub_batch_logpsi, 0) is state
    a = sampler.run_chain(state, _stub_batch_logpsi, 10)
    b = sampler.run_chain(state, _stub_batch_logpsi, 10)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.key, b.key)
    assert 0 < a.acceptance < 1


def test_cached_amplitudes_stay_coherent():
    state = sampler.run_chain(stub_state(), _stub_batch_logpsi, 25)
    state = sampler.mh_step(state, _stub_batch_logpsi)
    fresh = _stub_batch_logpsi(state.positions)
    assert np.allclose(state.log_abs, fresh.log_abs, atol=1e-12, rtol=0)
    assert np.array_equal(state.sign, fresh.sign)


def test_nodes_are_never_entered():
    def half_space(r):
        x = r[:, 0, 0]
        return SignedLogAmplitude(jnp.sign(x), jnp.where(x > 0, jnp.log(jnp.abs(x)), -jnp.inf))

    pos = jnp.abs(jax.random.normal(jax.random.PRNGKey(0), (128, 1, 3))) + 0.1
    value = half_space(pos)
    state = sampler.WalkerState(pos, value.sign, value.log_abs, jax.random.PRNGKey(1), 0.5)
    out = sampler.run_chain(state, half_space, 50)
    assert np.all(out.positions[:, 0, 0] > 0)


def test_step_size_adaptation():
    assert sampler.adapted_step_size(0.02, 0.5) == 0.02
    assert sampler.adapted_step_size(0.02, 1.0) > 0.02
    assert 1e-4 <= sampler.adapted_step_size(0.02, 0.0) < 0.02
    assert sampler.adapted_step_size(1.05e-4, 0.0) == 1e-4
    assert sampler.adapted_step_size(0.99, 1.0) == 1.0
    state = stub_state()
    assert sampler.adapt_step_size(state, enabled=False) is state


def test_geometry_walkers_without_jitter_are_unchanged():
    walkers = sampler.make_geometry_walkers(1.0, 2.0, 5, seed=3)
    before = [w.current.copy() for w in walkers]
    walkers, configs = sampler.step_geometry_walkers(walkers, "diatomic", 0.0)
    for b, w, c in zip(before, walkers, configs):
        assert np.array_equal(b, w.current)
        assert c == realize("diatomic", b)


def test_geometry_walkers_stay_in_their_bins():
    walkers = sampler.make_geometry_walkers(1.0, 2.0, seed=0)
    assert len(walkers) == 16
    for _ in range(10_000):
        for w in walkers:
            w.current = sampler._reflect(
                w.current + w.rng.uniform(-1, 1, w.current.shape) * 0.5 * (w.upper - w.lower), w.lower, w.upper
            )
            assert np.all(w.lower <= w.current) and np.all(w.current <= w.upper)
    # the public stepping path, fewer iterations since it realizes configurations
    for _ in range(200):
        walkers, _ = sampler.step_geometry_walkers(walkers, "diatomic", 0.1)
    assert all(np.all((w.lower <= w.current) & (w.current <= w.upper)) for w in walkers)


def test_electron_sites_alternate_over_nuclei():
    lih = realize("diatomic", [3.0], {"charges": [3, 1], "n_up": 2, "n_dn": 2})
    sites = sampler.electron_sites(lih, build_frame(lih))
    assert len(sites) == 4
    assert np.bincount(sites, minlength=2).tolist() == [3, 1]
    h2 = realize("diatomic", [1.4])
    assert sorted(sampler.electron_sites(h2, build_frame(h2)).tolist()) == [0, 1]


def test_initial_positions_follow_rigid_motion(lih_like):
    from scipy.spatial.transform import Rotation

    config = lih_like[0]
    assert not build_frame(config).fallbacks
    U = Rotation.from_euler("xyz", [0.2, 0.9, -1.4]).as_matrix()
    moved = config.transformed(U, [1.0, 0.0, -2.0])
    key = jax.random.PRNGKey(5)
    a = sampler.init_positions(key, config, build_frame(config), 8)
    b = sampler.init_positions(key, moved, build_frame(moved), 8)
    assert np.allclose(np.asarray(a) @ U + np.array([1.0, 0.0, -2.0]), b, atol=1e-12)
