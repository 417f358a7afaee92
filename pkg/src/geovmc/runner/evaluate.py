"""Energy evaluation of a trained model at arbitrary geometries, and PES scans."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np
import yaml

from geovmc import model as model_lib
from geovmc import sampler
from geovmc.errors import ConfigurationError, GeoVMCError
from geovmc.geometry import MolecularConfiguration, build_frame
from geovmc.hamiltonian import EnergyStatistics, RunningStatistics
from geovmc.runner.config import RunConfig
from geovmc.runner.trainer import local_energies, sample_geometries
from geovmc.templates import realize

log = logging.getLogger(__name__)

SCAN_HEADER = ["param", "energy_hartree", "stderr_hartree", "variance"]


def check_spins(config: MolecularConfiguration, model_cfg: model_lib.ModelConfig) -> None:
    trained = (model_cfg.wf.n_up, model_cfg.wf.n_dn)
    if config.spins != trained:
        raise ConfigurationError(
            f"geometry has (n_up, n_dn) = {config.spins} but the model was trained for {trained}"
        )


def evaluate_energy(
    theta: dict,
    model_cfg: model_lib.ModelConfig,
    config: MolecularConfiguration,
    samples: int = 1_000_000,
    burn_in: int = 200,
    batch: int = 4096,
    thin: int = 10,
    seed: int = 0,
    step_size: float = 0.02,
    adapt: bool = True,
) -> EnergyStatistics:
    """Monte Carlo energy at one geometry with streaming statistics.

    Walkers start from the default electron placement, burn in for
    ``burn_in`` sweeps (with step-size adaptation), then every ``thin``
    sweeps contribute one local energy each until ``samples`` are collected.
    """
    check_spins(config, model_cfg)
    if samples <= 0 or batch <= 0 or thin <= 0:
        raise ConfigurationError("samples, batch and thin must be positive")
    batch = min(batch, samples)
    geoms = model_lib.stack([model_lib.prepare(config, model_cfg)])
    k_init, k_chain = jax.random.split(jax.random.PRNGKey(seed))
    frame = build_frame(config)
    positions = sampler.init_positions(k_init, config, frame, batch)[None]
    keys = k_chain[None]
    steps = np.array([step_size])

    def advance(n, positions, keys, steps):
        positions, keys, acc = sample_geometries(theta, geoms, positions, keys, jnp.asarray(steps), model_cfg, n)
        if adapt:
            steps = np.array([sampler.adapted_step_size(steps[0], float(acc[0]))])
        return positions, keys, steps

    remaining = burn_in
    while remaining > 0:
        n = min(20, remaining)
        positions, keys, steps = advance(n, positions, keys, steps)
        remaining -= n
    stats = RunningStatistics()
    while stats.n < samples:
        positions, keys, _ = advance(thin, positions, keys, steps)
        e = np.asarray(local_energies(theta, geoms, positions, model_cfg))[0]
        take = min(samples - stats.n, e.size)
        stats.update(e[:take])
    result = stats.result()
    if not np.isfinite(result.mean):
        raise GeoVMCError(f"evaluation produced a non-finite energy at {config.positions.tolist()}")
    return result


def evaluate_from_trainer(trainer, config: MolecularConfiguration, samples: int | None = None, seed: int | None = None):
    ev = trainer.cfg.evaluation
    return evaluate_energy(
        trainer.theta,
        trainer.model_cfg,
        config,
        samples=samples or ev.samples,
        burn_in=ev.burn_in,
        batch=ev.batch,
        thin=ev.thin,
        seed=trainer.cfg.seed if seed is None else seed,
        step_size=trainer.cfg.sampler.step_size,
    )


def parse_geometry(spec: str, cfg: RunConfig) -> tuple[str, MolecularConfiguration]:
    """A geometry file (YAML/JSON, bohr unless ``units: angstrom``) or template
    parameters such as ``1.4`` or ``1.4,2.0`` for the run's template."""
    path = Path(spec)
    if path.suffix.lower() in (".yaml", ".yml", ".json") or path.exists():
        try:
            data = yaml.safe_load(path.read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read geometry {spec}: {exc}") from None
        return spec, MolecularConfiguration.from_dict(data)
    if not cfg.system.template:
        raise ConfigurationError("template parameters given but the run has no geometry template")
    try:
        params = [float(x) for x in spec.split(",")]
    except ValueError:
        raise ConfigurationError(f"cannot parse geometry spec {spec!r}") from None
    return spec, realize(cfg.system.template, params, cfg.system.options)


def parse_grid(spec: str) -> list[float]:
    """``start:stop:num`` (inclusive, evenly spaced) or a comma-separated list."""
    try:
        if ":" in spec:
            start, stop, num = spec.split(":")
            return [float(x) for x in np.linspace(float(start), float(stop), int(num))]
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse grid spec {spec!r}") from None


@dataclass(frozen=True)
class ScanPoint:
    param: float
    stats: EnergyStatistics | None
    error: str | None = None


def scan(trainer, grid, out=None, samples: int | None = None) -> list[ScanPoint]:
    """Evaluate the run's template along ``grid``; failing points are reported
    and skipped.  Writes the CSV when ``out`` is given."""
    s = trainer.cfg.system
    if not s.template:
        raise ConfigurationError("scanning needs a geometry template in the run config")
    points = []
    for value in grid:
        try:
            config = realize(s.template, [value], s.options)
            stats = evaluate_from_trainer(trainer, config, samples)
            points.append(ScanPoint(float(value), stats))
        except GeoVMCError as exc:
            log.error("scan point %s failed: %s", value, exc)
            points.append(ScanPoint(float(value), None, str(exc)))
    if out is not None:
        write_scan_csv(points, out)
    return points


def write_scan_csv(points, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCAN_HEADER)
        for p in points:
            if p.stats is None:
                w.writerow([repr(p.param), "nan", "nan", "nan"])
            else:
                w.writerow([repr(p.param), repr(p.stats.mean), repr(p.stats.std_error), repr(p.stats.variance)])
    return out
