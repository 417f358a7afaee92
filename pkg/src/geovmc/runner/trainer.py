"""Training loop: optional orbital pretraining followed by natural-gradient VMC.

One step:
    step geometry walkers -> generate parameters per geometry -> MCMC sweeps
    -> local energies -> clip -> gradient -> CG natural-gradient update -> log

Everything random is derived from the run seed, so a step is a pure function of
the trainer state; checkpoints hold that state in full.
"""

from __future__ import annotations

import csv
import functools
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from geovmc import model as model_lib
from geovmc import pretraining, sampler, wfmodel
from geovmc.errors import ConfigurationError, NumericalError
from geovmc.geometry import MolecularConfiguration, build_frame
from geovmc.hamiltonian import EnergyStatistics, clip_local_energies, local_energy_fn
from geovmc.optimizer import (
    FisherContext,
    GeometryBatch,
    OptimizerSettings,
    TrainState,
    apply_update,
    damping_from_energies,
    gradient_coefficients,
    vmc_gradient,
)
from geovmc.runner.config import RunConfig
from geovmc.templates import realize

log = logging.getLogger(__name__)

LOG_HEADER = ["step", "geom_id", "param", "energy", "variance", "stderr", "acceptance", "seconds"]


@dataclass(frozen=True)
class EnergyRecord:
    step: int
    geom_id: int
    param: str
    energy: float
    variance: float
    stderr: float
    acceptance: float
    seconds: float

    def row(self) -> list:
        return [
            self.step,
            self.geom_id,
            self.param,
            repr(self.energy),
            repr(self.variance),
            repr(self.stderr),
            repr(self.acceptance),
            f"{self.seconds:.4f}",
        ]


class EnergyLog:
    """Append-only CSV sink; the single writer of the energy log."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(LOG_HEADER)

    def write(self, records) -> None:
        with self.path.open("a", newline="") as fh:
            w = csv.writer(fh)
            for r in records:
                w.writerow(r.row())


def _batch_logpsi(params, geom, cfg):
    def fn(r):
        return jax.vmap(wfmodel.log_psi, in_axes=(None, 0, None, None))(params, r, geom.system, cfg.n_up)

    return fn


@functools.partial(jax.jit, static_argnames=("cfg", "n_steps"))
def sample_geometries(theta, geoms, positions, keys, step_sizes, cfg, n_steps):
    """``n_steps`` sweeps per geometry, vectorized over the stacked geometries."""

    def one(geom, pos, key, step):
        params = model_lib.wf_params(theta, geom, cfg)
        blp = _batch_logpsi(params, geom, cfg)
        value = blp(pos)
        pos, _, _, acc, key = sampler.chain(key, pos, value.sign, value.log_abs, step, n_steps, blp, geom.system.axes)
        return pos, key, acc

    return jax.vmap(one)(geoms, positions, keys, step_sizes)


@functools.partial(jax.jit, static_argnames=("cfg",))
def local_energies(theta, geoms, positions, cfg):
    def one(geom, pos):
        params = model_lib.wf_params(theta, geom, cfg)

        def log_abs(x):
            return wfmodel.log_abs_psi(params, x, geom.system, cfg.n_up)

        return jax.vmap(lambda x: local_energy_fn(log_abs, x, geom.system.atoms, geom.system.charges))(pos)

    return jax.vmap(one)(geoms, positions)


@functools.partial(jax.jit, static_argnames=("cfg",))
def energies_and_grads(theta, geoms, positions, cfg):
    """Local energies (G, B) and flat per-sample gradients of log|psi| (G, B, P)."""

    def one(geom, pos):
        params = model_lib.wf_params(theta, geom, cfg)

        def log_abs(x):
            return wfmodel.log_abs_psi(params, x, geom.system, cfg.n_up)

        e = jax.vmap(lambda x: local_energy_fn(log_abs, x, geom.system.atoms, geom.system.charges))(pos)

        def per_sample(x):
            g = jax.grad(model_lib.log_abs_psi)(theta, x, geom, cfg)
            return ravel_pytree(g)[0]

        return e, jax.vmap(per_sample)(pos)

    return jax.vmap(one)(geoms, positions)


def geometry_label(params) -> str:
    return ";".join(repr(float(p)) for p in np.atleast_1d(params))


class Trainer:
    """Holds the complete mutable state of a run."""

    def __init__(self, cfg: RunConfig, log_path=None):
        self.cfg = cfg
        self.model_cfg = cfg.model_config()
        key = jax.random.PRNGKey(cfg.seed)
        k_model, k_walkers, self.pretrain_key = jax.random.split(key, 3)
        theta = model_lib.init_model(k_model, self.model_cfg)
        flat, self._unravel = ravel_pytree(theta)
        o = cfg.optimizer
        self.settings = OptimizerSettings(
            lr=o.lr,
            lr_decay=o.lr_decay,
            damping_scale=o.damping_scale,
            clip_norm=o.clip_norm,
            cg_max_steps=o.cg_max_steps,
            cg_tol=o.cg_tol,
            cg_window=o.cg_window,
            centered=o.centered_fisher,
        )
        self.state = TrainState(np.asarray(flat), 0, self.settings)
        self.lamb = pretraining.lamb_init(theta)
        self.pretrain_steps = 0
        self.burned_in = False

        s = cfg.system
        if s.scan is not None:
            self.geometry_walkers = sampler.make_geometry_walkers(
                [s.scan["lower"]], [s.scan["upper"]], cfg.sampler.geometry_walkers, cfg.seed
            )
            self.configs = [realize(s.template, w.current, s.options) for w in self.geometry_walkers]
        else:
            self.geometry_walkers = None
            self.configs = cfg.initial_geometries()
        self.n_geom = len(self.configs)
        self.batch = cfg.walkers_per_geometry()

        keys = jax.random.split(k_walkers, 2 * self.n_geom)
        positions = []
        for g, conf in enumerate(self.configs):
            positions.append(
                sampler.init_positions(keys[2 * g], conf, build_frame(conf), self.batch, cfg.sampler.init_sigma)
            )
        self.positions = jnp.stack(positions)
        self.keys = keys[1::2]
        self.step_sizes = np.full(self.n_geom, cfg.sampler.step_size)
        self.acceptance = np.full(self.n_geom, 0.5)
        self.energy_log = EnergyLog(log_path) if log_path is not None else None

    # parameters ---------------------------------------------------------

    @property
    def theta(self) -> dict:
        return self._unravel(jnp.asarray(self.state.params))

    def set_theta(self, theta: dict) -> None:
        flat, _ = ravel_pytree(theta)
        self.state = TrainState(np.asarray(flat), self.state.step, self.settings)

    @property
    def n_params(self) -> int:
        return int(self.state.params.size)

    def geometry_params(self) -> list[str]:
        if self.geometry_walkers is not None:
            return [geometry_label(w.current) for w in self.geometry_walkers]
        s = self.cfg.system
        if s.geometries:
            return [str(i) for i in range(self.n_geom)]
        return [geometry_label(s.params or [0.0])]

    def stacked_geometries(self) -> model_lib.Geometry:
        return model_lib.stack([model_lib.prepare(c, self.model_cfg) for c in self.configs])

    # sampling -----------------------------------------------------------

    def _advance_geometries(self) -> None:
        if self.geometry_walkers is None:
            return
        s = self.cfg.system
        _, self.configs = sampler.step_geometry_walkers(
            self.geometry_walkers, s.template, self.cfg.sampler.jitter, s.options
        )

    def run_mcmc(self, n_steps: int, geoms=None) -> None:
        if n_steps <= 0:
            return
        geoms = self.stacked_geometries() if geoms is None else geoms
        pos, keys, acc = sample_geometries(
            self.theta, geoms, self.positions, self.keys, jnp.asarray(self.step_sizes), self.model_cfg, int(n_steps)
        )
        self.positions, self.keys = pos, keys
        self.acceptance = np.asarray(acc)
        if self.cfg.sampler.adapt_step_size:
            self.step_sizes = np.array(
                [sampler.adapted_step_size(s, a) for s, a in zip(self.step_sizes, self.acceptance)]
            )

    def burn_in(self) -> None:
        if self.burned_in:
            return
        # adapt in chunks so the step size settles during burn-in
        remaining = self.cfg.sampler.burn_in
        geoms = self.stacked_geometries()
        chunk = self.cfg.sampler.steps_per_update
        while remaining > 0:
            n = min(chunk, remaining)
            self.run_mcmc(n, geoms)
            remaining -= n
        self.burned_in = True

    # pretraining --------------------------------------------------------

    def reference_provider(self) -> pretraining.ReferenceOrbitalSet:
        provider = self.cfg.pretraining.provider
        if provider == "analytic":
            return pretraining.AnalyticLCAO()
        path = Path(provider)
        if not path.exists():
            raise ConfigurationError(f"reference orbital file {provider} not found")
        return pretraining.ExternalOrbitals.load(path)

    def pretrain(self, n_steps: int | None = None, callback=None) -> list[float]:
        """Run the remaining pretraining iterations (or ``n_steps`` of them)."""
        p = self.cfg.pretraining
        todo = p.iterations - self.pretrain_steps if n_steps is None else n_steps
        if todo <= 0:
            return []
        refs = self.reference_provider()
        settings = pretraining.LambSettings(lr=p.lr)
        theta = self.theta
        losses = []
        n_det = self.model_cfg.wf.n_det
        for _ in range(todo):
            self._advance_geometries()
            geoms = self.stacked_geometries()
            self.set_theta(theta)
            self.run_mcmc(p.mcmc_steps, geoms)
            r = np.asarray(self.positions)
            ref_configs = self.configs if self.n_geom > 1 else None
            targets = [
                pretraining.target_orbitals(refs, r[g], conf, n_det, ref_configs)
                for g, conf in enumerate(self.configs)
            ]
            targets = jax.tree_util.tree_map(lambda *xs: jnp.stack(xs), *targets)
            ps = pretraining.PretrainState(theta, self.lamb, self.pretrain_steps)
            ps, loss = pretraining.pretrain_step(ps, self.positions, geoms, targets, self.model_cfg, settings)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite pretraining loss at step {ps.step}", step=ps.step)
            theta, self.lamb, self.pretrain_steps = ps.theta, ps.lamb, ps.step
            losses.append(loss)
            if callback is not None:
                callback(self.pretrain_steps, loss)
        self.set_theta(theta)
        return losses

    # VMC ----------------------------------------------------------------

    def step(self) -> list[EnergyRecord]:
        """One natural-gradient VMC step; returns one record per geometry."""
        start = time.perf_counter()
        self._advance_geometries()
        geoms = self.stacked_geometries()
        self.burn_in()
        self.run_mcmc(self.cfg.sampler.steps_per_update, geoms)
        theta = self.theta
        energies, grads = energies_and_grads(theta, geoms, self.positions, self.model_cfg)
        energies = np.asarray(energies)
        grads = np.asarray(grads)
        if not np.all(np.isfinite(energies)):
            raise NumericalError(f"non-finite local energy at step {self.state.step}", step=self.state.step)
        if not np.all(np.isfinite(grads)):
            raise NumericalError(f"non-finite parameter gradient at step {self.state.step}", step=self.state.step)

        window = self.cfg.optimizer.clip_local_energy
        batches = [GeometryBatch(clip_local_energies(e, window), g) for e, g in zip(energies, grads)]
        stats = [EnergyStatistics.from_samples(e) for e in energies]
        damping = damping_from_energies([np.std(b.local_energies) for b in batches], self.settings)
        coeffs = gradient_coefficients(batches)
        gradient = vmc_gradient(batches)
        fisher = FisherContext(grads.reshape(-1, grads.shape[-1]), damping, self.settings.centered, coeffs)
        step = self.state.step
        new_state, info = apply_update(self.state, gradient, fisher)
        if not np.all(np.isfinite(new_state.params)):
            raise NumericalError(f"non-finite parameters after step {step}", step=step)
        self.state = new_state
        self.last_update = info
        seconds = time.perf_counter() - start
        labels = self.geometry_params()
        records = [
            EnergyRecord(step, g, labels[g], st.mean, st.variance, st.std_error, float(self.acceptance[g]), seconds)
            for g, st in enumerate(stats)
        ]
        if self.energy_log is not None:
            self.energy_log.write(records)
        return records

    def train(self, n_steps: int | None = None, checkpoint_path=None, callback=None) -> list[EnergyRecord]:
        """Run until ``optimizer.iterations`` (or ``n_steps`` more steps).

        On a numerical failure the last good state is checkpointed (when a
        path is given) before the error propagates.
        """
        from geovmc.runner.checkpoint import save_checkpoint

        end = self.cfg.optimizer.iterations if n_steps is None else self.state.step + n_steps
        every = self.cfg.output.checkpoint_every
        history = []
        while self.state.step < end:
            try:
                records = self.step()
            except NumericalError:
                if checkpoint_path is not None:
                    save_checkpoint(self, Path(checkpoint_path).with_suffix(".abort.ckpt"))
                raise
            history.extend(records)
            if callback is not None:
                callback(records)
            if checkpoint_path is not None and self.state.step % every == 0:
                save_checkpoint(self, checkpoint_path)
        if checkpoint_path is not None:
            save_checkpoint(self, checkpoint_path)
        return history


def batch_logpsi_for(theta: dict, config: MolecularConfiguration, cfg: model_lib.ModelConfig):
    """Jitted batched amplitude of one geometry, plus its prepared geometry."""
    geom = model_lib.prepare(config, cfg)
    params = jax.jit(model_lib.wf_params, static_argnums=2)(theta, geom, cfg)
    return jax.jit(_batch_logpsi(params, geom, cfg)), geom, params
