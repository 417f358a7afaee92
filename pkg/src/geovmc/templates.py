"""Named geometry templates: parameter vector -> MolecularConfiguration."""

from __future__ import annotations

from typing import Callable

import numpy as np

from geovmc.errors import ConfigurationError
from geovmc.geometry import MolecularConfiguration

Template = Callable[..., MolecularConfiguration]

_REGISTRY: dict[str, Template] = {}


def register(name: str):
    def deco(fn: Template) -> Template:
        _REGISTRY[name] = fn
        return fn

    return deco


def get_template(name: str) -> Template:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown geometry template {name!r}; known: {sorted(_REGISTRY)}"
        ) from None


def available() -> list[str]:
    return sorted(_REGISTRY)


def realize(name: str, params, options: dict | None = None) -> MolecularConfiguration:
    return get_template(name)(np.atleast_1d(np.asarray(params, dtype=np.float64)), **(options or {}))


def _spins(total: int, n_up, n_dn):
    if n_up is None:
        n_up = (total + 1) // 2
    if n_dn is None:
        n_dn = total - n_up
    return n_up, n_dn


@register("atom")
def atom(params, charge: int = 1, n_up=None, n_dn=None) -> MolecularConfiguration:
    n_up, n_dn = _spins(charge, n_up, n_dn)
    return MolecularConfiguration([[0.0, 0.0, 0.0]], [charge], n_up, n_dn)


@register("diatomic")
def diatomic(params, charges=(1, 1), n_up=None, n_dn=None) -> MolecularConfiguration:
    """Two nuclei on the z axis, centered at the origin; ``params[0]`` is the bond length."""
    d = float(params[0])
    n_up, n_dn = _spins(int(sum(charges)), n_up, n_dn)
    return MolecularConfiguration([[0, 0, -d / 2], [0, 0, d / 2]], list(charges), n_up, n_dn)


@register("hydrogen_chain")
def hydrogen_chain(params, n_atoms: int = 4, n_up=None, n_dn=None) -> MolecularConfiguration:
    """Linear chain along z with uniform spacing ``params[0]``."""
    a = float(params[0])
    z = (np.arange(n_atoms) - (n_atoms - 1) / 2) * a
    pos = np.stack([np.zeros(n_atoms), np.zeros(n_atoms), z], axis=1)
    n_up, n_dn = _spins(n_atoms, n_up, n_dn)
    return MolecularConfiguration(pos, [1] * n_atoms, n_up, n_dn)


@register("hydrogen_rectangle")
def hydrogen_rectangle(params, side: float = 1.0, n_up=2, n_dn=2) -> MolecularConfiguration:
    """Four hydrogens on a rectangle with sides ``side`` and ``params[0]`` (xy plane)."""
    a, b = side / 2, float(params[0]) / 2
    pos = [[-a, -b, 0], [a, -b, 0], [a, b, 0], [-a, b, 0]]
    return MolecularConfiguration(pos, [1, 1, 1, 1], n_up, n_dn)
