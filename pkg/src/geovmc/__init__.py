"""Variational Monte Carlo for many molecular geometries with one neural wave function."""

import jax

jax.config.update("jax_enable_x64", True)

from geovmc.geometry import (  # noqa: E402
    EquivariantFrame,
    MolecularConfiguration,
    build_frame,
    equivariant_vector,
    geometric_center,
)

__all__ = [
    "EquivariantFrame",
    "MolecularConfiguration",
    "build_frame",
    "equivariant_vector",
    "geometric_center",
]
__version__ = "0.1.0"
