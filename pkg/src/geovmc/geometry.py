"""Molecular geometries and the equivariant coordinate frame built from them.

The frame is the PCA basis of the nuclear positions with axis signs fixed by
an equivariant vector, so that frame-projected displacements are invariant to
rotations, reflections and translations of the whole molecule.  Degenerate
geometries fall back to deterministic rules; the fallbacks that fired are
recorded on the returned frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from geovmc.errors import ConfigurationError

MIN_NUCLEAR_DISTANCE = 1e-10
DEGENERACY_RTOL = 1e-6
SIGN_TOL = 1e-8
STRETCH = 0.5

# fallback labels stored on EquivariantFrame.fallbacks
SINGLE_ATOM = "single_atom"
DEGENERATE = "degenerate"
CANONICAL_SIGN = "canonical_sign"
HANDEDNESS = "handedness"


@dataclass(frozen=True, eq=False)
class MolecularConfiguration:
    """Nuclear positions (bohr), integer charges and electron spin counts.

    The first ``n_up`` electrons are spin-up; ``n_up >= n_dn`` by convention.
    """

    positions: np.ndarray
    charges: np.ndarray
    n_up: int
    n_dn: int

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        charges = np.array(self.charges)
        if charges.ndim != 1 or len(charges) != len(pos):
            raise ConfigurationError(
                f"got {len(pos)} positions but charges of shape {charges.shape}"
            )
        if len(pos) < 1:
            raise ConfigurationError("a configuration needs at least one nucleus")
        if not np.all(np.isfinite(pos)):
            raise ConfigurationError("nuclear positions must be finite")
        if np.any(charges != np.round(charges)) or np.any(charges < 1):
            raise ConfigurationError(f"charges must be positive integers, got {charges}")
        charges = charges.astype(np.int64)
        n_up, n_dn = int(self.n_up), int(self.n_dn)
        if n_dn < 0 or n_up < n_dn or n_up + n_dn < 1:
            raise ConfigurationError(
                f"need n_up >= n_dn >= 0 and at least one electron, got ({n_up}, {n_dn})"
            )
        if len(pos) > 1:
            d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
            d[np.diag_indices(len(pos))] = np.inf
            if d.min() <= MIN_NUCLEAR_DISTANCE:
                i, j = np.unravel_index(np.argmin(d), d.shape)
                raise ConfigurationError(f"nuclei {i} and {j} coincide")
        pos.setflags(write=False)
        charges.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", charges)
        object.__setattr__(self, "n_up", n_up)
        object.__setattr__(self, "n_dn", n_dn)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MolecularConfiguration):
            return NotImplemented
        return (
            self.spins == other.spins
            and np.array_equal(self.charges, other.charges)
            and np.array_equal(self.positions, other.positions)
        )

    def __hash__(self) -> int:
        return hash((self.positions.tobytes(), self.charges.tobytes(), self.n_up, self.n_dn))

    @property
    def n_nuclei(self) -> int:
        return len(self.positions)

    @property
    def n_electrons(self) -> int:
        return self.n_up + self.n_dn

    @property
    def spins(self) -> tuple[int, int]:
        return (self.n_up, self.n_dn)

    def transformed(self, rotation: np.ndarray, shift=(0.0, 0.0, 0.0)) -> "MolecularConfiguration":
        """Apply ``x -> x @ rotation + shift`` to every nucleus."""
        pos = self.positions @ np.asarray(rotation) + np.asarray(shift)
        return MolecularConfiguration(pos, self.charges, self.n_up, self.n_dn)

    def permuted(self, order: Sequence[int]) -> "MolecularConfiguration":
        order = np.asarray(order)
        return MolecularConfiguration(
            self.positions[order], self.charges[order], self.n_up, self.n_dn
        )

    def to_dict(self) -> dict:
        return {
            "charges": [int(z) for z in self.charges],
            "positions": [[float(x) for x in p] for p in self.positions],
            "n_up": self.n_up,
            "n_dn": self.n_dn,
        }

    @classmethod
    def from_dict(cls, data: dict, units: str = "bohr") -> "MolecularConfiguration":
        try:
            pos = np.asarray(data["positions"], dtype=np.float64)
            charges = data["charges"]
            n_up, n_dn = data["n_up"], data["n_dn"]
        except KeyError as exc:
            raise ConfigurationError(f"geometry is missing field {exc}") from None
        units = data.get("units", units)
        if units in ("angstrom", "A"):
            pos = pos / BOHR_IN_ANGSTROM
        elif units != "bohr":
            raise ConfigurationError(f"unknown length unit {units!r}")
        return cls(pos, charges, n_up, n_dn)


BOHR_IN_ANGSTROM = 0.529177210903


@dataclass(frozen=True)
class EquivariantFrame:
    """Orthonormal axes (columns of ``axes``) and the geometric center.

    ``fallbacks`` lists the degenerate-case rules that were needed; the frame is
    guaranteed to rotate with the molecule only when it is empty.
    """

    axes: np.ndarray
    center: np.ndarray
    fallbacks: frozenset = field(default_factory=frozenset)

    def to_frame(self, x: np.ndarray) -> np.ndarray:
        """Centered frame coordinates of lab-frame points ``x`` (..., 3)."""
        return (np.asarray(x) - self.center) @ self.axes

    def to_lab(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.axes.T + self.center


def canonical_order(config: MolecularConfiguration) -> np.ndarray:
    """Index order of nuclei sorted by charge then lab coordinates.

    Every reindexing of the same molecule sorts to identical arrays, which is
    what makes the frame bitwise independent of nucleus order.
    """
    pos = config.positions
    return np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0], config.charges))


def geometric_center(config: MolecularConfiguration) -> np.ndarray:
    pos = config.positions[canonical_order(config)]
    return pos.mean(axis=0)


def equivariant_vector(config: MolecularConfiguration) -> np.ndarray:
    """Charge- and spread-weighted sum of centered nuclear positions.

    ``v = 1/M sum_m (sum_n |R_m - R_n|^2) Z_m (R_m - center)``; it rotates and
    reflects with the molecule and vanishes for point-symmetric geometries.
    """
    order = canonical_order(config)
    pos = config.positions[order]
    charges = config.charges[order].astype(np.float64)
    centered = pos - pos.mean(axis=0)
    sq = np.sum((pos[:, None] - pos[None]) ** 2, axis=-1).sum(axis=1)
    return (sq * charges) @ centered / len(pos)


def canonical_sign(axis: np.ndarray) -> np.ndarray:
    """Flip ``axis`` so that its largest-magnitude component is positive.

    Ties (within 1e-12) go to the lowest spatial index.
    """
    mag = np.abs(axis)
    k = int(np.flatnonzero(mag >= mag.max() - 1e-12)[0])
    return axis if axis[k] >= 0 else -axis


def _degenerate_groups(evals: np.ndarray) -> list[list[int]]:
    tol = DEGENERACY_RTOL * max(float(evals[0]), 1.0)
    groups = [[0]]
    for i in range(1, len(evals)):
        if abs(evals[groups[-1][-1]] - evals[i]) <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _sorted_pca(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cov = points.T @ points / len(points)
    evals, evecs = np.linalg.eigh(cov)
    idx = np.argsort(-evals, kind="stable")
    return evals[idx], evecs[:, idx]


def _shortest_edge_direction(pos: np.ndarray) -> np.ndarray:
    """Unit vector of the shortest internuclear edge, canonically signed.

    Among edges of (numerically) equal length the lexicographically largest
    canonical direction wins, so the choice ignores nucleus indices.
    """
    diff = pos[:, None] - pos[None]
    dist = np.linalg.norm(diff, axis=-1)
    iu = np.triu_indices(len(pos), k=1)
    lengths = dist[iu]
    shortest = lengths.min()
    candidates = []
    for i, j, d in zip(*iu, lengths):
        if d <= shortest * (1 + 1e-8):
            u = canonical_sign(diff[i, j] / d)
            candidates.append(tuple(np.round(u, 9)) + (i, j))
    best = max(candidates)
    i, j = best[3], best[4]
    return canonical_sign(diff[i, j] / dist[i, j])


def _resolve_subspace(basis: np.ndarray, others: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis for a degenerate eigen-subspace.

    ``basis`` (3, k) spans the subspace, ``others`` (3, 3-k) its complement.
    """
    k = basis.shape[1]
    if k == 3:
        return np.eye(3)
    proj = basis @ basis.T
    # lab axis with the largest projection onto the subspace, lowest index on ties
    norms = np.linalg.norm(proj, axis=0)
    j = int(np.flatnonzero(norms >= norms.max() - 1e-12)[0])
    a = proj[:, j] / norms[j]
    a = canonical_sign(a)
    b = np.cross(others[:, 0], a)
    b = canonical_sign(b / np.linalg.norm(b))
    return np.stack([a, b], axis=1)


def _pca_axes(centered: np.ndarray, pos: np.ndarray) -> tuple[np.ndarray, set]:
    fallbacks = set()
    evals, evecs = _sorted_pca(centered)
    groups = _degenerate_groups(evals)
    if len(groups) == 3:
        return evecs, fallbacks
    fallbacks.add(DEGENERATE)
    u = _shortest_edge_direction(pos)
    pseudo = centered + STRETCH * (centered @ u)[:, None] * u[None, :]
    evals, evecs = _sorted_pca(pseudo)
    groups = _degenerate_groups(evals)
    if len(groups) == 3:
        return evecs, fallbacks
    axes = []
    for g in groups:
        if len(g) == 1:
            axes.append(evecs[:, g])
        else:
            rest = [i for i in range(3) if i not in g]
            axes.append(_resolve_subspace(evecs[:, g], evecs[:, rest]))
    return np.concatenate(axes, axis=1), fallbacks


def build_frame(config: MolecularConfiguration) -> EquivariantFrame:
    """Equivariant frame of a molecule.

    Axes are principal components of the centered nuclear positions in
    descending eigenvalue order, each oriented so that ``v . e_i >= 0`` for the
    equivariant vector ``v``.  Degenerate cases:

    * one nucleus: identity axes;
    * tied eigenvalues: PCA of positions stretched along the shortest edge,
      remaining ties resolved by a fixed lab-axis rule;
    * ``|v|`` below tolerance: every axis signed canonically;
    * ``v`` orthogonal to exactly one axis (planar molecules): that axis is
      oriented to make the frame right-handed, which keeps rotations covariant;
      with more unresolved axes the canonical rule is used for them.
    """
    order = canonical_order(config)
    pos = config.positions[order]
    center = pos.mean(axis=0)
    if config.n_nuclei == 1:
        return EquivariantFrame(np.eye(3), center, frozenset({SINGLE_ATOM}))
    centered = pos - center
    axes, fallbacks = _pca_axes(centered, pos)
    v = equivariant_vector(config)
    vnorm = float(np.linalg.norm(v))
    axes = axes.copy()
    if vnorm < SIGN_TOL:
        fallbacks.add(CANONICAL_SIGN)
        for i in range(3):
            axes[:, i] = canonical_sign(axes[:, i])
    else:
        tol = SIGN_TOL * max(1.0, vnorm)
        unresolved = []
        for i in range(3):
            d = float(v @ axes[:, i])
            if abs(d) <= tol:
                unresolved.append(i)
            elif d < 0:
                axes[:, i] = -axes[:, i]
        if len(unresolved) == 1:
            fallbacks.add(HANDEDNESS)
            i = unresolved[0]
            if np.linalg.det(axes) < 0:
                axes[:, i] = -axes[:, i]
        elif unresolved:
            fallbacks.add(CANONICAL_SIGN)
            for i in unresolved:
                axes[:, i] = canonical_sign(axes[:, i])
    # re-orthonormalize against eigensolver round-off
    q, r = np.linalg.qr(axes)
    axes = q * np.sign(np.diag(r))
    return EquivariantFrame(axes, center, frozenset(fallbacks))


def symmetry_between(
    frame: EquivariantFrame, moved: EquivariantFrame, rotation: np.ndarray
) -> np.ndarray:
    """Orthogonal map relating a frame to the frame of a moved molecule.

    For a molecule moved by ``x -> x @ rotation + t``, frame coordinates of the
    moved molecule equal frame coordinates of the original taken at
    ``center + (x - center) @ S``.  ``S`` is the identity when the frame is
    fully covariant and otherwise a symmetry operation of the molecule.
    """
    return rotation @ moved.axes @ frame.axes.T


def is_symmetry(config: MolecularConfiguration, op: np.ndarray, atol: float = 1e-8) -> bool:
    """Whether ``op`` maps the centered nuclei (with charges) onto themselves."""
    center = geometric_center(config)
    centered = config.positions - center
    image = centered @ op
    d = np.linalg.norm(image[:, None] - centered[None], axis=-1)
    same_charge = config.charges[:, None] == config.charges[None]
    d = np.where(same_charge, d, np.inf)
    return bool(np.all(d.min(axis=1) < atol))
