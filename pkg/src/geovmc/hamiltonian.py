"""Coulomb Hamiltonian, local energies and energy statistics (hartree, bohr)."""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from geovmc.errors import NodeError, SingularityError
from geovmc.geometry import MolecularConfiguration
from geovmc.wfmodel import grad_and_laplacian

SINGULARITY_TOL = 1e-12


@dataclass(frozen=True)
class EnergyStatistics:
    mean: float
    variance: float
    std_error: float
    n_samples: int

    @classmethod
    def from_samples(cls, values) -> "EnergyStatistics":
        values = np.asarray(values, dtype=np.float64).ravel()
        n = values.size
        var = float(np.var(values))
        return cls(float(np.mean(values)), var, float(np.sqrt(var / n)), n)


class RunningStatistics:
    """Streaming mean/variance with Chan's pairwise batch merge."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values) -> None:
        values = np.asarray(values, dtype=np.float64).ravel()
        nb = values.size
        if nb == 0:
            return
        mb = float(values.mean())
        m2b = float(np.sum((values - mb) ** 2))
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta**2 * self.n * nb / n
        self.n = n

    def result(self) -> EnergyStatistics:
        var = self.m2 / self.n if self.n else float("nan")
        return EnergyStatistics(self.mean, var, float(np.sqrt(var / self.n)), self.n)


def potential(r, atoms, charges):
    """Coulomb potential of one configuration, traceable; no singularity checks."""
    n, m = r.shape[0], atoms.shape[0]
    ee = jnp.linalg.norm(r[:, None] - r[None] + jnp.eye(n)[..., None], axis=-1)
    v_ee = jnp.sum(jnp.triu(1.0 / ee, k=1))
    v_en = -jnp.sum(charges[None] / jnp.linalg.norm(r[:, None] - atoms[None], axis=-1))
    nn = jnp.linalg.norm(atoms[:, None] - atoms[None] + jnp.eye(m)[..., None], axis=-1)
    v_nn = jnp.sum(jnp.triu(charges[:, None] * charges[None] / nn, k=1))
    return v_ee + v_en + v_nn


def check_singularities(r, config: MolecularConfiguration) -> None:
    r = np.asarray(r, dtype=np.float64).reshape(-1, 3)
    n = len(r)
    if n > 1:
        d = np.linalg.norm(r[:, None] - r[None], axis=-1)
        d[np.diag_indices(n)] = np.inf
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if d[i, j] <= SINGULARITY_TOL:
            raise SingularityError(f"electrons {min(i, j)} and {max(i, j)} coincide", ("ee", i, j))
    d = np.linalg.norm(r[:, None] - config.positions[None], axis=-1)
    i, m = np.unravel_index(np.argmin(d), d.shape)
    if d[i, m] <= SINGULARITY_TOL:
        raise SingularityError(f"electron {i} sits on nucleus {m}", ("en", i, m))


def potential_energy(r, config: MolecularConfiguration) -> float:
    """V(r) with strict pair sums; raises SingularityError for coincident particles."""
    check_singularities(r, config)
    r = jnp.asarray(r, dtype=jnp.float64).reshape(-1, 3)
    return float(
        potential(r, jnp.asarray(config.positions), jnp.asarray(config.charges, dtype=jnp.float64))
    )


def local_energy_fn(log_abs_fn, r, atoms, charges):
    """``-1/2 (lap log|psi| + |grad log|psi||^2) + V``; traceable core."""
    grad, lap = grad_and_laplacian(log_abs_fn, r)
    kinetic = -0.5 * (lap + jnp.sum(grad**2))
    return kinetic + potential(r, atoms, charges)


def local_energy(r, log_abs_fn, config: MolecularConfiguration) -> float:
    """Local energy at one configuration.

    ``log_abs_fn`` maps an (N, 3) array to ``log|psi|`` and must be traceable
    by JAX.
    """
    check_singularities(r, config)
    r = jnp.asarray(r, dtype=jnp.float64).reshape(-1, 3)
    if not np.isfinite(float(log_abs_fn(r))):
        raise NodeError("local energy is undefined at a node of psi")
    e = local_energy_fn(
        log_abs_fn, r, jnp.asarray(config.positions), jnp.asarray(config.charges, dtype=jnp.float64)
    )
    return float(e)


def clip_window(values, window: float = 5.0) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean()
    spread = np.mean(np.abs(values - mu))
    return mu - window * spread, mu + window * spread


def clip_local_energies(values, window: float = 5.0):
    """Clamp to ``mean +- window * mean absolute deviation`` of the batch."""
    lo, hi = clip_window(values, window)
    return np.clip(np.asarray(values, dtype=np.float64), lo, hi)


def clip_local_energies_jax(values, window: float = 5.0):
    mu = jnp.mean(values)
    spread = jnp.mean(jnp.abs(values - mu))
    return jnp.clip(values, mu - window * spread, mu + window * spread)
