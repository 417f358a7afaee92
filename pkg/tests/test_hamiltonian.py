import functools

import jax.numpy as jnp
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from geovmc import model as model_lib
from geovmc.errors import SingularityError
from geovmc.geometry import MolecularConfiguration
from geovmc.hamiltonian import (
    EnergyStatistics,
    RunningStatistics,
    clip_local_energies,
    local_energy,
    potential_energy,
)
from geovmc.runner.checks import check_zero_variance, hydrogen_stub_log_abs

H_ATOM = MolecularConfiguration([[0, 0, 0]], [1], 1, 0)


def pair_sum_potential(r, config):
    """Independent loop-based Coulomb sum."""
    v = 0.0
    for i in range(len(r)):
        for j in range(i + 1, len(r)):
            v += 1 / np.linalg.norm(r[i] - r[j])
        for R, Z in zip(config.positions, config.charges):
            v -= Z / np.linalg.norm(r[i] - R)
    for m in range(config.n_nuclei):
        for n in range(m + 1, config.n_nuclei):
            v += config.charges[m] * config.charges[n] / np.linalg.norm(config.positions[m] - config.positions[n])
    return v


def test_potential_examples():
    assert np.isclose(potential_energy([[0, 0, 2.0]], H_ATOM), -0.5)
    h2 = MolecularConfiguration([[0, 0, 0], [0, 0, 1]], [1, 1], 1, 1)
    assert np.isclose(potential_energy([[0, 0, -1.0], [0, 0, 2.0]], h2), -5 / 3)


def test_potential_matches_loop_oracle_and_permutations(rng):
    config = MolecularConfiguration(rng.normal(size=(3, 3)) * 2, [3, 1, 2], 3, 3)
    r = rng.normal(size=(6, 3)) * 2
    v = potential_energy(r, config)
    assert np.isclose(v, pair_sum_potential(r, config), rtol=1e-13)
    assert np.isclose(potential_energy(r[rng.permutation(6)], config), v, rtol=1e-13)
    assert np.isclose(potential_energy(r, config.permuted([2, 0, 1])), v, rtol=1e-13)


def test_singularities_are_reported():
    with pytest.raises(SingularityError, match="nucleus 0"):
        potential_energy([[0, 0, 0.0]], H_ATOM)
    h2 = MolecularConfiguration([[0, 0, 0], [0, 0, 1]], [1, 1], 1, 1)
    with pytest.raises(SingularityError, match="electrons 0 and 1"):
        potential_energy([[1.0, 1, 1], [1.0, 1, 1]], h2)


def test_exact_eigenfunction_has_constant_local_energy(rng):
    for r in rng.normal(size=(20, 1, 3)) * 2:
        assert abs(local_energy(r, hydrogen_stub_log_abs, H_ATOM) + 0.5) < 1e-10
    result = check_zero_variance(n_points=1000)
    assert result.passed, result.line()


def test_local_energy_matches_finite_differences_of_psi(lih_like, rng):
    config, cfg, theta = lih_like
    geom = model_lib.prepare(config, cfg)
    log_abs = functools.partial(model_lib.log_abs_psi, theta, geom=geom, cfg=cfg)
    r = rng.normal(size=(4, 3)) * 1.2
    e_l = local_energy(r, log_abs, config)

    # central second differences of psi itself, scaled to O(1) around r
    h = 1e-3
    psi0 = float(log_abs(jnp.asarray(r)))
    lap = 0.0
    for idx in np.ndindex(4, 3):
        vals = []
        for s in (-2, -1, 0, 1, 2):
            x = r.copy()
            x[idx] += s * h
            vals.append(np.exp(float(log_abs(jnp.asarray(x))) - psi0))
        a, b, c, d, e = vals
        lap += (-a + 16 * b - 30 * c + 16 * d - e) / (12 * h * h)
    expected = -0.5 * lap + potential_energy(r, config)
    assert abs(e_l - expected) / abs(expected) < 1e-4


def test_local_energy_invariant_under_rigid_motion(lih_like, rng):
    config, cfg, theta = lih_like
    r = rng.normal(size=(4, 3))

    def e_l(conf, x):
        geom = model_lib.prepare(conf, cfg)
        return local_energy(x, functools.partial(model_lib.log_abs_psi, theta, geom=geom, cfg=cfg), conf)

    base = e_l(config, r)
    t = np.array([1.5, -0.3, 0.8])
    assert abs(e_l(config.transformed(np.eye(3), t), r + t) - base) < 1e-10
    U = Rotation.from_euler("zxz", [0.3, 1.1, -0.6]).as_matrix() @ np.diag([-1, 1, 1])
    assert abs(e_l(config.transformed(U), r @ U) - base) < 1e-8


def test_clipping_rule():
    assert np.array_equal(clip_local_energies([0, 0, 0, 8.0], window=1.0), [0, 0, 0, 5])
    same = np.full(7, -1.25)
    assert np.array_equal(clip_local_energies(same), same)
    inside = np.array([-1.0, -1.1, -0.9])
    assert np.array_equal(clip_local_energies(inside), inside)


def test_clipping_is_idempotent_and_monotone(rng):
    from geovmc.hamiltonian import clip_window

    x = rng.standard_cauchy(500)
    lo, hi = clip_window(x, 5.0)
    once = np.clip(x, lo, hi)
    assert np.array_equal(np.clip(once, lo, hi), once)
    order = np.argsort(x)
    assert np.all(np.diff(once[order]) >= 0)


def test_statistics_match_numpy(rng):
    values = rng.normal(loc=-1.1, scale=0.3, size=10_000)
    running = RunningStatistics()
    for chunk in np.array_split(values, 7):
        running.update(chunk)
    got, ref = running.result(), EnergyStatistics.from_samples(values)
    assert got.n_samples == 10_000
    assert np.isclose(got.mean, np.mean(values), rtol=1e-13)
    assert np.isclose(got.variance, np.var(values), rtol=1e-10)
    assert np.isclose(got.std_error, np.sqrt(np.var(values) / 10_000), rtol=1e-10)
    assert np.isclose(ref.std_error, got.std_error, rtol=1e-10)
