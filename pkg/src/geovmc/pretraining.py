"""Supervised initialization of the orbitals against reference molecular orbitals.

Two reference providers exist:

* :class:`AnalyticLCAO` - Slater-type atomic orbitals with exponents from
  Slater's screening rules, combined by an extended-Hückel diagonalization
  (overlaps by numerical quadrature).  Cheap and SCF-free.
* :class:`ExternalOrbitals` - coefficient matrices read from a YAML/JSON file,
  e.g. produced by an outside Hartree-Fock code.

Only the shared wave-function slots and the final biases of the graph
network's heads are trained here, with the Lamb optimizer.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np
import yaml

from geovmc import metagnn, model as model_lib, wfmodel
from geovmc.errors import ConfigurationError
from geovmc.geometry import MolecularConfiguration

HUCKEL_K = 1.75

# (kind, principal quantum number, angular component index or None)
_AO_KINDS = {"1s": (1, None), "2s": (2, None), "2px": (2, 0), "2py": (2, 1), "2pz": (2, 2)}


@dataclass(frozen=True)
class BasisFunction:
    """Normalized Slater-type function ``N r^(n-1-l) [x_c] exp(-zeta r)`` on one nucleus."""

    center: int
    kind: str
    exponent: float
    normalization: float | None = None

    def __post_init__(self):
        if self.kind not in _AO_KINDS:
            raise ConfigurationError(f"unsupported basis function kind {self.kind!r}")
        if self.normalization is None:
            z = self.exponent
            n, comp = _AO_KINDS[self.kind]
            if n == 1:
                norm = np.sqrt(z**3 / np.pi)
            elif comp is None:
                norm = np.sqrt(z**5 / (3 * np.pi))
            else:
                norm = np.sqrt(z**5 / np.pi)
            object.__setattr__(self, "normalization", float(norm))

    def __call__(self, x: np.ndarray, centers: np.ndarray) -> np.ndarray:
        d = np.asarray(x) - centers[self.center]
        r = np.linalg.norm(d, axis=-1)
        n, comp = _AO_KINDS[self.kind]
        radial = self.normalization * np.exp(-self.exponent * r)
        if n == 1:
            return radial
        if comp is None:
            return radial * r
        return radial * d[..., comp]

    def to_dict(self) -> dict:
        return {
            "center": self.center,
            "kind": self.kind,
            "exponent": self.exponent,
            "normalization": self.normalization,
        }


def slater_exponents(charge: int) -> dict:
    """Slater's-rule exponents of the occupied shells of a neutral atom (Z <= 10)."""
    if charge > 10:
        raise ConfigurationError(f"analytic orbitals cover Z <= 10, got {charge}")
    n1 = min(charge, 2)
    out = {"1s": charge - 0.30 * (n1 - 1)}
    n2 = charge - 2
    if n2 > 0:
        out["2sp"] = (charge - 0.85 * 2 - 0.35 * (n2 - 1)) / 2.0
    return out


def atomic_basis(config: MolecularConfiguration) -> list[BasisFunction]:
    basis = []
    for m, z in enumerate(config.charges):
        zeta = slater_exponents(int(z))
        basis.append(BasisFunction(m, "1s", float(zeta["1s"])))
        if "2sp" in zeta:
            for kind in ("2s", "2px", "2py", "2pz"):
                basis.append(BasisFunction(m, kind, float(zeta["2sp"])))
    return basis


@functools.lru_cache(maxsize=None)
def _gauss_laguerre(n):
    return np.polynomial.laguerre.laggauss(n)


@functools.lru_cache(maxsize=None)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _frame_for(axis: np.ndarray) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    return np.stack([u, np.cross(axis, u), axis])


def _quadrature(a: np.ndarray, b: np.ndarray, n: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights integrating smooth decaying functions centered on ``a``/``b``.

    Spherical grid for one center, prolate spheroidal grid for two.
    """
    xl, wl = _gauss_laguerre(n)
    xg, wg = _gauss_legendre(n)
    nphi = 24
    phi = 2 * np.pi * np.arange(nphi) / nphi
    wphi = np.full(nphi, 2 * np.pi / nphi)
    R = float(np.linalg.norm(b - a))
    if R < 1e-12:
        # r = t / 2 maps the Laguerre weight onto slowly decaying orbitals
        r = xl / 2.0
        wr = wl * np.exp(xl) / 2.0 * r**2
        R3, W3, P3 = np.meshgrid(r, xg, phi, indexing="ij")
        w = (wr[:, None, None] * wg[None, :, None] * wphi[None, None, :]).ravel()
        st = np.sqrt(1 - W3**2)
        pts = np.stack([R3 * st * np.cos(P3), R3 * st * np.sin(P3), R3 * W3], axis=-1).reshape(-1, 3)
        return pts + a, w
    lam = 1.0 + xl / 2.0
    wlam = wl * np.exp(xl) / 2.0
    L, MU, PH = np.meshgrid(lam, xg, phi, indexing="ij")
    rho = (R / 2) * np.sqrt(np.clip((L**2 - 1) * (1 - MU**2), 0, None))
    z = (R / 2) * L * MU
    local = np.stack([rho * np.cos(PH), rho * np.sin(PH), z], axis=-1)
    jac = (R**3 / 8) * (L**2 - MU**2)
    w = (wlam[:, None, None] * wg[None, :, None] * wphi[None, None, :] * jac).ravel()
    basis = _frame_for(b - a)
    pts = local.reshape(-1, 3) @ basis + (a + b) / 2
    return pts, w


def overlap_matrix(basis: Sequence[BasisFunction], centers: np.ndarray) -> np.ndarray:
    n = len(basis)
    S = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = centers[basis[i].center], centers[basis[j].center]
            pts, w = _quadrature(a, b)
            S[i, j] = S[j, i] = float(np.sum(w * basis[i](pts, centers) * basis[j](pts, centers)))
    return S


def huckel_orbitals(basis: Sequence[BasisFunction], centers: np.ndarray) -> np.ndarray:
    """MO coefficients (n_basis, n_mo), ascending orbital energy."""
    from scipy.linalg import eigh

    S = overlap_matrix(basis, centers)
    n_principal = np.array([_AO_KINDS[f.kind][0] for f in basis])
    zeta = np.array([f.exponent for f in basis])
    h_diag = -(zeta**2) / (2.0 * n_principal**2)
    H = HUCKEL_K * S * (h_diag[:, None] + h_diag[None]) / 2.0
    H[np.diag_indices_from(H)] = h_diag
    _, C = eigh(H, S)
    # fix the arbitrary eigenvector sign: largest coefficient positive
    idx = np.argmax(np.abs(C), axis=0)
    C = C * np.sign(C[idx, np.arange(C.shape[1])])
    return C


@dataclass(frozen=True)
class OrbitalSet:
    """Molecular orbitals of one geometry: basis plus per-spin coefficients."""

    basis: tuple
    centers: np.ndarray
    coefficients: dict  # spin -> (n_basis, n_spin)

    def evaluate(self, x: np.ndarray, spin: str) -> np.ndarray:
        """Orbital values, shape (..., n_spin) for points ``x`` (..., 3)."""
        ao = np.stack([f(x, self.centers) for f in self.basis], axis=-1)
        return ao @ self.coefficients[spin]


class ReferenceOrbitalSet:
    """Interface: ``orbitals(config)`` returns the OrbitalSet for a geometry."""

    kind = "abstract"

    def orbitals(self, config: MolecularConfiguration) -> OrbitalSet:
        raise NotImplementedError


class AnalyticLCAO(ReferenceOrbitalSet):
    kind = "analytic-lcao"

    def orbitals(self, config: MolecularConfiguration) -> OrbitalSet:
        basis = tuple(atomic_basis(config))
        n_orb = len(basis)
        if config.n_up > n_orb:
            raise ConfigurationError(
                f"{config.n_up} spin-up electrons exceed the {n_orb} analytic orbitals"
            )
        C = huckel_orbitals(basis, config.positions)
        coeffs = {"up": C[:, : config.n_up], "dn": C[:, : config.n_dn]}
        return OrbitalSet(basis, config.positions, coeffs)


class ExternalOrbitals(ReferenceOrbitalSet):
    """Coefficients per geometry read from a structured file.

    Schema (YAML or JSON)::

        basis:                       # shared descriptors
          - {center: 0, kind: 1s, exponent: 1.0, normalization: 0.5642}
        geometries:
          - charges: [1, 1]
            positions: [[0, 0, -0.7], [0, 0, 0.7]]   # bohr
            coefficients:
              up: [[c_00, ...], ...]  # (n_basis, n_up)
              dn: [[...], ...]        # (n_basis, n_dn)
    """

    kind = "external-file"

    def __init__(self, basis: Sequence[BasisFunction], geometries: Sequence[tuple[np.ndarray, np.ndarray, dict]]):
        self.basis = tuple(basis)
        self.geometries = [
            (np.asarray(p, dtype=np.float64), np.asarray(c), {k: np.asarray(v, dtype=np.float64) for k, v in co.items()})
            for p, c, co in geometries
        ]

    def orbitals(self, config: MolecularConfiguration) -> OrbitalSet:
        for pos, charges, coeffs in self.geometries:
            if (
                pos.shape == config.positions.shape
                and np.array_equal(charges, config.charges)
                and np.allclose(pos, config.positions, atol=1e-6)
            ):
                return OrbitalSet(self.basis, config.positions, coeffs)
        raise ConfigurationError("reference orbital file does not cover the requested geometry")

    def to_dict(self) -> dict:
        return {
            "basis": [f.to_dict() for f in self.basis],
            "geometries": [
                {
                    "charges": [int(z) for z in c],
                    "positions": p.tolist(),
                    "coefficients": {k: v.tolist() for k, v in co.items()},
                }
                for p, c, co in self.geometries
            ],
        }

    def save(self, path) -> None:
        path = Path(path)
        text = json.dumps(self.to_dict(), indent=1) if path.suffix == ".json" else yaml.safe_dump(self.to_dict())
        path.write_text(text)

    @classmethod
    def load(cls, path) -> "ExternalOrbitals":
        data = yaml.safe_load(Path(path).read_text())
        try:
            basis = [BasisFunction(**f) for f in data["basis"]]
            geoms = [(g["positions"], g["charges"], g["coefficients"]) for g in data["geometries"]]
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed orbital file {path}: {exc}") from None
        return cls(basis, geoms)


def target_orbitals(
    refs: ReferenceOrbitalSet,
    r: np.ndarray,
    config: MolecularConfiguration,
    n_det: int,
    reference_configs: Sequence[MolecularConfiguration] | None = None,
) -> dict:
    """Target matrices ``{spin: (B, K, n_spin, n_spin)}``, rows orbitals, columns electrons.

    Determinant ``k`` uses reference configuration ``k mod len(reference_configs)``
    (default: the geometry itself), evaluated at the electron positions ``r`` (B, N, 3).
    """
    r = np.asarray(r, dtype=np.float64)
    refs_k = list(reference_configs) if reference_configs else [config]
    sets = [refs.orbitals(c) for c in refs_k]
    out = {}
    for spin, sl in (("up", slice(0, config.n_up)), ("dn", slice(config.n_up, None))):
        mats = []
        for k in range(n_det):
            vals = sets[k % len(sets)].evaluate(r[:, sl], spin)  # (B, n_electrons_spin, n_orb)
            mats.append(np.swapaxes(vals, -1, -2))
        out[spin] = np.stack(mats, axis=1)
    return out


def pretrain_loss(model_orbitals: dict, targets: dict):
    """Mean squared difference over every entry of every determinant and spin."""
    total, count = 0.0, 0
    for spin in ("up", "dn"):
        a, b = model_orbitals[spin], targets[spin]
        if a.shape != b.shape:
            raise ValueError(f"{spin} orbital shapes differ: {a.shape} vs {b.shape}")
        total = total + jnp.sum((a - b) ** 2)
        count += int(np.prod(a.shape))
    return total / count


class LambState(NamedTuple):
    m: dict
    v: dict
    count: jax.Array


@dataclass(frozen=True)
class LambSettings:
    lr: float = 3e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-6
    weight_decay: float = 0.0


def lamb_init(params) -> LambState:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return LambState(zeros, zeros, jnp.zeros((), dtype=jnp.int32))


def lamb_update(params, grads, state: LambState, settings: LambSettings, mask=None):
    """One Lamb step; leaves with a False ``mask`` entry are returned untouched."""
    count = state.count + 1
    c1 = 1.0 - settings.b1**count
    c2 = 1.0 - settings.b2**count
    if mask is None:
        mask = jax.tree_util.tree_map(lambda _: True, params)

    def leaf(p, g, m, v, train):
        if not train:
            return p, m, v
        m = settings.b1 * m + (1 - settings.b1) * g
        v = settings.b2 * v + (1 - settings.b2) * g**2
        u = (m / c1) / (jnp.sqrt(v / c2) + settings.eps) + settings.weight_decay * p
        p_norm, u_norm = jnp.linalg.norm(p), jnp.linalg.norm(u)
        trust = jnp.where((p_norm > 0) & (u_norm > 0), p_norm / jnp.where(u_norm > 0, u_norm, 1.0), 1.0)
        return p - settings.lr * trust * u, m, v

    flat_p, treedef = jax.tree_util.tree_flatten(params)
    flat = [
        leaf(*args)
        for args in zip(
            flat_p,
            treedef.flatten_up_to(grads),
            treedef.flatten_up_to(state.m),
            treedef.flatten_up_to(state.v),
            treedef.flatten_up_to(mask),
        )
    ]
    new_p = treedef.unflatten([f[0] for f in flat])
    new_m = treedef.unflatten([f[1] for f in flat])
    new_v = treedef.unflatten([f[2] for f in flat])
    return new_p, LambState(new_m, new_v, count)


def trainable_mask(theta: dict) -> dict:
    """Pretraining updates the shared wave-function slots and the heads' final biases."""
    return {
        "wf": jax.tree_util.tree_map(lambda _: True, theta["wf"]),
        "gnn": metagnn.head_bias_mask(theta["gnn"]),
    }


def model_orbitals(theta: dict, r: jax.Array, geom: model_lib.Geometry, cfg: model_lib.ModelConfig) -> dict:
    """Model orbital matrices for a batch ``r`` (B, N, 3) of one geometry."""
    params = model_lib.wf_params(theta, geom, cfg)
    return jax.vmap(wfmodel.orbital_matrices, in_axes=(None, 0, None, None))(params, r, geom.system, cfg.n_up)


def batched_loss(theta, r, geoms, targets, cfg):
    """Loss averaged over a stack of geometries (leading axis of r, geoms, targets)."""
    per_geom = jax.vmap(lambda r_g, geom, t: pretrain_loss(model_orbitals(theta, r_g, geom, cfg), t))(
        r, geoms, targets
    )
    return jnp.mean(per_geom)


@dataclass(frozen=True)
class PretrainState:
    theta: dict
    lamb: LambState
    step: int = 0


@functools.partial(jax.jit, static_argnames=("cfg", "settings"))
def _pretrain_update(theta, lamb, r, geoms, targets, cfg, settings):
    loss, grads = jax.value_and_grad(batched_loss)(theta, r, geoms, targets, cfg)
    theta, lamb = lamb_update(theta, grads, lamb, settings, trainable_mask(theta))
    return theta, lamb, loss


def pretrain_step(
    state: PretrainState,
    r: jax.Array,
    geoms: model_lib.Geometry,
    targets: dict,
    cfg: model_lib.ModelConfig,
    settings: LambSettings = LambSettings(),
) -> tuple[PretrainState, float]:
    """One Lamb step on the orbital-matching loss for stacked geometries."""
    theta, lamb, loss = _pretrain_update(state.theta, state.lamb, r, geoms, targets, cfg, settings)
    return PretrainState(theta, lamb, state.step + 1), float(loss)
