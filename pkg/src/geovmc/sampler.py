"""Metropolis-Hastings sampling of |psi|^2 and per-bin geometry random walkers.

Proposals are all-electron isotropic Gaussian moves.  Noise is drawn in the
molecule's equivariant frame and rotated to the lab frame; the distribution is
the same as drawing in the lab frame, but two copies of a molecule that differ
by a rigid motion then see exactly corresponding chains.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from geovmc.geometry import EquivariantFrame, MolecularConfiguration
from geovmc.templates import realize
from geovmc.wfmodel import SignedLogAmplitude

STEP_MIN, STEP_MAX = 1e-4, 1.0


@dataclass(frozen=True)
class WalkerState:
    """Batch of electron configurations with cached log-amplitudes.

    ``key`` is a JAX PRNG key; the state is a pure value, every update returns
    a new one.  ``acceptance`` is the mean acceptance of the last chain run.
    """

    positions: jax.Array  # (B, N, 3)
    sign: jax.Array  # (B,)
    log_abs: jax.Array  # (B,)
    key: jax.Array
    step_size: float = 0.02
    acceptance: float = 0.5


BatchLogPsi = Callable[[jax.Array], SignedLogAmplitude]


def electron_sites(config: MolecularConfiguration, frame: EquivariantFrame) -> np.ndarray:
    """Nucleus index for each electron, spin-up first.

    Nuclei are visited round-robin (in frame-coordinate order) while they have
    charge left, giving a sequence that alternates between spin-up and
    spin-down electrons.
    """
    local = np.round(frame.to_frame(config.positions), 8)
    order = np.lexsort((local[:, 2], local[:, 1], local[:, 0], config.charges))
    remaining = {int(m): int(config.charges[m]) for m in order}
    seq = []
    while any(remaining.values()):
        for m in order:
            if remaining[int(m)]:
                seq.append(int(m))
                remaining[int(m)] -= 1
    need = 2 * config.n_up
    while len(seq) < need:
        seq.extend(seq[: need - len(seq)])
    up = seq[0::2][: config.n_up]
    dn = seq[1::2][: config.n_dn]
    return np.array(up + dn, dtype=np.int64)


def init_positions(
    key: jax.Array,
    config: MolecularConfiguration,
    frame: EquivariantFrame,
    batch: int,
    sigma: float = 1.0,
) -> jax.Array:
    sites = jnp.asarray(config.positions[electron_sites(config, frame)])
    noise = sigma * jax.random.normal(key, (batch, config.n_electrons, 3)) @ jnp.asarray(frame.axes).T
    return sites[None] + noise


def init_walkers(
    key: jax.Array,
    config: MolecularConfiguration,
    frame: EquivariantFrame,
    batch: int,
    batch_logpsi: BatchLogPsi,
    step_size: float = 0.02,
    sigma: float = 1.0,
) -> WalkerState:
    k_init, k_state = jax.random.split(key)
    pos = init_positions(k_init, config, frame, batch, sigma)
    value = batch_logpsi(pos)
    return WalkerState(pos, value.sign, value.log_abs, k_state, step_size, 0.5)


def acceptance_probability(log_abs_new, log_abs_old):
    """``min(1, |psi'|^2 / |psi|^2)`` from cached log-amplitudes."""
    return jnp.minimum(1.0, jnp.exp(2.0 * (log_abs_new - log_abs_old)))


def sweep(key, positions, sign, log_abs, step_size, batch_logpsi: BatchLogPsi, axes):
    """One Metropolis-Hastings sweep; traceable.  Returns the new arrays and acceptance."""
    k_move, k_acc = jax.random.split(key)
    noise = jax.random.normal(k_move, positions.shape) @ axes.T
    proposal = positions + step_size * noise
    new = batch_logpsi(proposal)
    new_log = jnp.where(jnp.isnan(new.log_abs), -jnp.inf, new.log_abs)
    log_u = jnp.log(jax.random.uniform(k_acc, log_abs.shape))
    accept = log_u < 2.0 * (new_log - log_abs)
    positions = jnp.where(accept[:, None, None], proposal, positions)
    sign = jnp.where(accept, new.sign, sign)
    log_abs = jnp.where(accept, new_log, log_abs)
    return positions, sign, log_abs, jnp.mean(accept)


def chain(key, positions, sign, log_abs, step_size, n_steps: int, batch_logpsi: BatchLogPsi, axes):
    """``n_steps`` sweeps; traceable.  Returns arrays, mean acceptance and the next key."""

    def body(i, carry):
        key, pos, sgn, la, acc = carry
        key, sub = jax.random.split(key)
        pos, sgn, la, a = sweep(sub, pos, sgn, la, step_size, batch_logpsi, axes)
        return key, pos, sgn, la, acc + a

    init = (key, positions, sign, log_abs, jnp.zeros(()))
    key, positions, sign, log_abs, acc = jax.lax.fori_loop(0, n_steps, body, init)
    return positions, sign, log_abs, acc / jnp.maximum(n_steps, 1), key


@functools.partial(jax.jit, static_argnames=("batch_logpsi",))
def _mh_step(state_arrays, step_size, axes, batch_logpsi):
    key, pos, sign, log_abs = state_arrays
    key, sub = jax.random.split(key)
    pos, sign, log_abs, acc = sweep(sub, pos, sign, log_abs, step_size, batch_logpsi, axes)
    return key, pos, sign, log_abs, acc


@functools.partial(jax.jit, static_argnames=("batch_logpsi", "n_steps"))
def _run_chain(state_arrays, step_size, axes, batch_logpsi, n_steps):
    key, pos, sign, log_abs = state_arrays
    pos, sign, log_abs, acc, key = chain(key, pos, sign, log_abs, step_size, n_steps, batch_logpsi, axes)
    return key, pos, sign, log_abs, acc


def mh_step(state: WalkerState, batch_logpsi: BatchLogPsi, axes=None) -> WalkerState:
    """One sweep over every walker.

    ``batch_logpsi`` maps (B, N, 3) positions to a SignedLogAmplitude batch; it
    must be hashable (a module-level function or a ``functools.partial``) so
    the compiled sweep can be reused.
    """
    axes = jnp.eye(3) if axes is None else jnp.asarray(axes)
    key, pos, sign, log_abs, acc = _mh_step(
        (state.key, state.positions, state.sign, state.log_abs), state.step_size, axes, batch_logpsi
    )
    return WalkerState(pos, sign, log_abs, key, state.step_size, float(acc))


def run_chain(state: WalkerState, batch_logpsi: BatchLogPsi, n_steps: int = 40, axes=None) -> WalkerState:
    if n_steps == 0:
        return state
    axes = jnp.eye(3) if axes is None else jnp.asarray(axes)
    key, pos, sign, log_abs, acc = _run_chain(
        (state.key, state.positions, state.sign, state.log_abs),
        state.step_size,
        axes,
        batch_logpsi,
        int(n_steps),
    )
    return WalkerState(pos, sign, log_abs, key, state.step_size, float(acc))


def refresh(state: WalkerState, batch_logpsi: BatchLogPsi) -> WalkerState:
    """Recompute cached amplitudes after parameters or geometry changed."""
    value = batch_logpsi(state.positions)
    return replace(state, sign=value.sign, log_abs=value.log_abs)


def adapted_step_size(step_size: float, acceptance: float, target: float = 0.5, rate: float = 1.0) -> float:
    """Multiplicative nudge toward the target acceptance, clamped to [1e-4, 1] bohr."""
    new = step_size * float(np.exp(rate * (acceptance - target)))
    return float(np.clip(new, STEP_MIN, STEP_MAX))


def adapt_step_size(state: WalkerState, target: float = 0.5, enabled: bool = True) -> WalkerState:
    if not enabled:
        return state
    return replace(state, step_size=adapted_step_size(state.step_size, state.acceptance, target))


@dataclass
class GeometryWalker:
    """Random walker confined to one bin of the scanned geometry parameters."""

    lower: np.ndarray
    upper: np.ndarray
    current: np.ndarray
    rng: np.random.Generator

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        self.current = np.atleast_1d(np.asarray(self.current, dtype=np.float64))


def make_geometry_walkers(lower, upper, n_walkers: int = 16, seed: int = 0) -> list[GeometryWalker]:
    """Split ``[lower, upper]`` (first parameter) into even bins, one walker per bin,
    each starting at its bin center."""
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    edges = np.linspace(lower[0], upper[0], n_walkers + 1)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_walkers)]
    walkers = []
    for i, rng in enumerate(rngs):
        lo, hi = lower.copy(), upper.copy()
        lo[0], hi[0] = edges[i], edges[i + 1]
        walkers.append(GeometryWalker(lo, hi, (lo + hi) / 2, rng))
    return walkers


def _reflect(x, lo, hi):
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)
    y = np.mod(x - lo, 2 * safe)
    y = np.where(y > safe, 2 * safe - y, y)
    return np.where(width > 0, lo + y, lo)


def step_geometry_walkers(
    walkers: list[GeometryWalker],
    template: str,
    jitter_scale: float = 0.1,
    options: dict | None = None,
) -> tuple[list[GeometryWalker], list[MolecularConfiguration]]:
    """Uniform jitter of ``+- jitter_scale * bin width`` with reflecting bin walls."""
    configs = []
    for w in walkers:
        if jitter_scale > 0:
            width = w.upper - w.lower
            step = w.rng.uniform(-1.0, 1.0, size=w.current.shape) * jitter_scale * width
            w.current = _reflect(w.current + step, w.lower, w.upper)
        configs.append(realize(template, w.current, options))
    return walkers, configs
