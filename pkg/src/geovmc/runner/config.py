"""Run configuration: schema, presets and YAML/JSON loading.

A config file mirrors :class:`RunConfig`; every section is optional and
falls back to the chosen preset.  Example::

    preset: desk
    seed: 7
    system:
      template: diatomic
      options: {charges: [1, 1], n_up: 1, n_dn: 1}
      scan: {lower: 1.0, upper: 2.0}
    optimizer: {iterations: 3000}
    sampler: {geometry_walkers: 5}

Instead of ``template``/``scan`` a fixed list of geometries may be given
under ``system.geometries`` (each with ``charges``, ``positions``, ``n_up``,
``n_dn`` and optional ``units: angstrom``).
"""

from __future__ import annotations

import copy
import dataclasses
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from geovmc.errors import ConfigurationError
from geovmc.geometry import MolecularConfiguration
from geovmc.metagnn import GNNConfig
from geovmc.model import ModelConfig
from geovmc.templates import get_template, realize
from geovmc.wfmodel import WFConfig

SEED_ENV = "GEOVMC_SEED"
THREADS_ENV = "GEOVMC_THREADS"


@dataclass
class SystemSection:
    template: str | None = None
    options: dict = field(default_factory=dict)
    scan: dict | None = None  # {lower, upper} of the first template parameter
    params: list | None = None  # fixed template parameters when not scanning
    geometries: list | None = None  # explicit geometry dicts


@dataclass
class ModelSection:
    single_width: int = 256
    double_width: int = 32
    n_layers: int = 4
    n_det: int = 16
    embedding_dim: int = 64
    gnn_embedding_dim: int = 64
    gnn_message_dim: int = 32
    gnn_layers: int = 2
    n_sbf: int = 7
    n_rbf: int = 6
    basis_length: float = 10.0
    max_charge: int = 10
    head_init_scale: float = 1e-7


@dataclass
class SamplerSection:
    step_size: float = 0.02
    steps_per_update: int = 40
    geometry_walkers: int = 16
    burn_in: int = 1000
    adapt_step_size: bool = True
    jitter: float = 0.1
    init_sigma: float = 1.0


@dataclass
class OptimizerSection:
    batch_size: int = 4096
    iterations: int = 60000
    lr: float = 0.1
    lr_decay: float = 1000.0
    clip_local_energy: float = 5.0
    damping_scale: float = 1e-4
    clip_norm: float = 1.0
    cg_max_steps: int = 100
    cg_tol: float = 5e-4
    cg_window: int = 10
    centered_fisher: bool = False


@dataclass
class PretrainingSection:
    enabled: bool = True
    iterations: int = 2000
    lr: float = 0.003
    provider: str = "analytic"  # or a path to an orbital coefficient file
    mcmc_steps: int = 1


@dataclass
class EvaluationSection:
    samples: int = 1_000_000
    burn_in: int = 200
    batch: int = 4096
    thin: int = 10


@dataclass
class OutputSection:
    directory: str = "run"
    checkpoint_every: int = 1000
    log_every: int = 1


@dataclass
class RunConfig:
    system: SystemSection = field(default_factory=SystemSection)
    model: ModelSection = field(default_factory=ModelSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    pretraining: PretrainingSection = field(default_factory=PretrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0
    preset: str = "paper"

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self) -> ModelConfig:
        spins = self.spins()
        m = self.model
        wf = WFConfig(
            n_up=spins[0],
            n_dn=spins[1],
            single_width=m.single_width,
            double_width=m.double_width,
            n_layers=m.n_layers,
            n_det=m.n_det,
            embedding_dim=m.embedding_dim,
        )
        gnn = GNNConfig(
            embedding_dim=m.gnn_embedding_dim,
            message_dim=m.gnn_message_dim,
            n_layers=m.gnn_layers,
            n_sbf=m.n_sbf,
            n_rbf=m.n_rbf,
            cutoff=m.basis_length,
            max_charge=m.max_charge,
            head_init_scale=m.head_init_scale,
        )
        return ModelConfig(wf, gnn)

    def initial_geometries(self) -> list[MolecularConfiguration]:
        """Geometries of the first step (bin centers when scanning)."""
        s = self.system
        if s.geometries:
            return [MolecularConfiguration.from_dict(g) for g in s.geometries]
        if s.scan:
            lo, hi = float(s.scan["lower"]), float(s.scan["upper"])
            n = self.sampler.geometry_walkers
            edges = [lo + (hi - lo) * i / n for i in range(n + 1)]
            return [realize(s.template, [(a + b) / 2], s.options) for a, b in zip(edges[:-1], edges[1:])]
        return [realize(s.template, s.params or [0.0], s.options)]

    def spins(self) -> tuple[int, int]:
        return self.initial_geometries()[0].spins

    def validate(self) -> "RunConfig":
        s = self.system
        if not s.geometries and not s.template:
            raise ConfigurationError("system needs either 'template' or 'geometries'")
        if s.template:
            get_template(s.template)
        if s.scan is not None and not s.template:
            raise ConfigurationError("a scan needs a geometry template")
        if s.scan is not None and float(s.scan["upper"]) < float(s.scan["lower"]):
            raise ConfigurationError("scan upper bound is below the lower bound")
        geoms = self.initial_geometries()
        if len({g.spins for g in geoms}) != 1:
            raise ConfigurationError("all geometries of one run must share (n_up, n_dn)")
        if len({g.n_nuclei for g in geoms}) != 1:
            raise ConfigurationError("all geometries of one run must have the same number of nuclei")
        for section in (self.model, self.sampler, self.optimizer, self.pretraining, self.evaluation):
            for f in dataclasses.fields(section):
                v = getattr(section, f.name)
                if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
                    if f.name in ("burn_in", "iterations", "damping_scale", "jitter", "mcmc_steps"):
                        if v < 0:
                            raise ConfigurationError(f"{f.name} must be non-negative")
                        continue
                    raise ConfigurationError(f"{type(section).__name__}.{f.name} must be positive, got {v}")
        if self.optimizer.batch_size < len(geoms):
            raise ConfigurationError("batch_size is smaller than the number of geometries")
        return self

    def n_geometries(self) -> int:
        return len(self.initial_geometries())

    def walkers_per_geometry(self) -> int:
        return self.optimizer.batch_size // self.n_geometries()


PRESETS = {
    # hyperparameters of the reference experiments
    "paper": {},
    # single-CPU scale: smaller batch and network
    "desk": {
        "model": {
            "single_width": 32,
            "double_width": 8,
            "n_layers": 2,
            "n_det": 4,
            "embedding_dim": 16,
            "gnn_embedding_dim": 16,
            "gnn_message_dim": 8,
        },
        "sampler": {"burn_in": 200},
        "optimizer": {"batch_size": 512, "iterations": 5000},
        "pretraining": {"iterations": 500},
        "evaluation": {"samples": 100_000, "batch": 2048},
    },
}


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


_SECTIONS = {
    "system": SystemSection,
    "model": ModelSection,
    "sampler": SamplerSection,
    "optimizer": OptimizerSection,
    "pretraining": PretrainingSection,
    "evaluation": EvaluationSection,
    "output": OutputSection,
}


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    preset = data.pop("preset", "paper")
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
    merged = _merge(PRESETS[preset], data)
    kwargs = {"preset": preset}
    for key, value in merged.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            names = {f.name for f in dataclasses.fields(cls)}
            unknown = set(value) - names
            if unknown:
                raise ConfigurationError(f"unknown field(s) in {key}: {sorted(unknown)}")
            kwargs[key] = cls(**value)
        elif key == "seed":
            kwargs["seed"] = int(value)
        else:
            raise ConfigurationError(f"unknown config section {key!r}")
    cfg = RunConfig(**kwargs)
    if os.environ.get(SEED_ENV):
        cfg.seed = int(os.environ[SEED_ENV])
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return from_dict(data or {})
