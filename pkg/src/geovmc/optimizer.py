"""VMC gradients and natural-gradient updates with a damped Fisher solved by CG.

Per-sample parameter gradients of ``log|psi|`` are handled as a dense
(samples x parameters) matrix ``G``.  The empirical Fisher is
``F = G^T G / S`` (uncentered by default), applied matrix-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from geovmc.errors import NumericalError
from geovmc.hamiltonian import EnergyStatistics


@dataclass(frozen=True)
class OptimizerSettings:
    lr: float = 0.1
    lr_decay: float = 1000.0
    damping_scale: float = 1e-4
    damping_min: float = 0.0
    clip_norm: float = 1.0
    cg_max_steps: int = 100
    cg_tol: float = 5e-4
    cg_window: int = 10
    centered: bool = False

    def __post_init__(self):
        for name in ("lr", "lr_decay", "clip_norm", "cg_max_steps", "cg_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TrainState:
    """Flat parameter vector plus optimizer bookkeeping."""

    params: np.ndarray
    step: int = 0
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)

    @property
    def learning_rate(self) -> float:
        return learning_rate(self.step, self.settings)


def learning_rate(step: int, settings: OptimizerSettings = OptimizerSettings()) -> float:
    return settings.lr / (1.0 + step / settings.lr_decay)


class GeometryBatch(NamedTuple):
    local_energies: np.ndarray  # (B,), already clipped
    grads: np.ndarray  # (B, P), d log|psi| / d theta per sample


def gradient_coefficients(batches: Sequence[GeometryBatch]) -> np.ndarray:
    """Sample weights ``w`` with ``vmc_gradient = G^T w`` for the stacked ``G``."""
    if not batches:
        raise ValueError("no geometry batches given")
    coeffs = []
    for b in batches:
        e = np.asarray(b.local_energies, dtype=np.float64)
        if e.size == 0:
            raise ValueError("empty sample batch")
        coeffs.append((e - e.mean()) / (e.size * len(batches)))
    return np.concatenate(coeffs)


def vmc_gradient(batches: Sequence[GeometryBatch]) -> np.ndarray:
    """Average over geometries of ``mean((E_L - mean E_L) * grad log|psi|)``."""
    w = gradient_coefficients(batches)
    grads = np.concatenate([np.asarray(b.grads) for b in batches])
    return grads.T @ w


def fisher_vector_product(grads: np.ndarray, x: np.ndarray, damping: float, centered: bool = False) -> np.ndarray:
    """``(1/S) sum_s g_s (g_s . x) + damping * x`` without forming the matrix."""
    grads = np.asarray(grads)
    if centered:
        grads = grads - grads.mean(axis=0)
    return grads.T @ (grads @ x) / grads.shape[0] + damping * x


class CGInfo(NamedTuple):
    iterations: int
    reason: str  # "quadratic", "residual", "max_steps", "zero_rhs"
    quadratic: float


def cg_solve_with_info(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    max_steps: int = 100,
    tol: float = 5e-4,
    window: int = 10,
    residual_tol: float = 0.0,
    inner: Callable[[np.ndarray, np.ndarray], float] | None = None,
) -> tuple[np.ndarray, CGInfo]:
    """Conjugate gradients from ``x = 0`` for a symmetric positive definite ``A``.

    Stops when the quadratic ``phi(x) = x.Ax/2 - b.x`` decreased by less than
    ``tol * |phi_k|`` over the last ``window`` iterations, when the residual
    norm drops to ``residual_tol * |b|``, or after ``max_steps``.  ``inner``
    replaces the Euclidean inner product, e.g. to run in a reduced basis.
    """
    dot = inner if inner is not None else (lambda u, v: float(np.dot(u, v)))
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = dot(r, r)
    bb = rs
    if bb == 0.0:
        return x, CGInfo(0, "zero_rhs", 0.0)
    phis = [0.0]
    phi = 0.0
    for k in range(1, max_steps + 1):
        Ap = apply_A(p)
        pAp = dot(p, Ap)
        if not np.isfinite(pAp):
            raise NumericalError(f"non-finite curvature in CG at step {k}", step=k)
        if pAp <= 0.0:
            return x, CGInfo(k - 1, "residual", phi)
        alpha = rs / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = dot(r, r)
        if not (np.isfinite(rs_new) and np.all(np.isfinite(x))):
            raise NumericalError(f"non-finite iterate in CG at step {k}", step=k)
        phi = -0.5 * (dot(x, b) + dot(x, r))
        phis.append(phi)
        if rs_new <= (residual_tol**2) * bb:
            return x, CGInfo(k, "residual", phi)
        if k >= window and phi < 0 and (phis[k - window] - phi) / abs(phi) < tol:
            return x, CGInfo(k, "quadratic", phi)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, CGInfo(max_steps, "max_steps", phi)


def cg_solve(apply_A, b, max_steps: int = 100, tol: float = 5e-4, window: int = 10, **kwargs) -> np.ndarray:
    return cg_solve_with_info(apply_A, b, max_steps, tol, window, **kwargs)[0]


@dataclass(frozen=True)
class FisherContext:
    """Per-sample gradients ``G`` (S, P) and damping for one update.

    When ``coeffs`` with ``gradient = G^T coeffs`` is known, CG runs on
    coefficient vectors ``y`` representing ``G^T y`` with the Gram matrix as
    inner product: the iterates are those of plain CG, at O(S^2) per step.
    """

    grads: np.ndarray
    damping: float
    centered: bool = False
    coeffs: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        g = np.asarray(self.grads)
        return g - g.mean(axis=0) if self.centered else g

    def apply(self, x: np.ndarray) -> np.ndarray:
        return fisher_vector_product(self.grads, x, self.damping, self.centered)

    def solve(self, gradient: np.ndarray, settings: OptimizerSettings) -> tuple[np.ndarray, CGInfo]:
        kw = dict(max_steps=settings.cg_max_steps, tol=settings.cg_tol, window=settings.cg_window)
        if self.coeffs is None:
            return cg_solve_with_info(self.apply, gradient, **kw)
        g = self.matrix()
        S = g.shape[0]
        gram = g @ g.T

        def apply_coeffs(y):
            return gram @ y / S + self.damping * y

        y, info = cg_solve_with_info(apply_coeffs, self.coeffs, inner=lambda u, v: float(u @ gram @ v), **kw)
        return g.T @ y, info


def damping_from_energies(stds: Sequence[float], settings: OptimizerSettings) -> float:
    """``damping_scale * Std[E_L]``, with Std averaged over geometries."""
    return max(settings.damping_scale * float(np.mean(stds)), settings.damping_min)


def clip_by_norm(delta: np.ndarray, threshold: float) -> np.ndarray:
    norm = float(np.linalg.norm(delta))
    if norm > threshold:
        return delta * (threshold / norm)
    return delta


def apply_update(state: TrainState, gradient: np.ndarray, fisher: FisherContext) -> tuple[TrainState, dict]:
    """Natural-gradient step ``theta <- theta - lr(t) * clip(F^-1 grad)``."""
    delta, info = fisher.solve(gradient, state.settings)
    raw_norm = float(np.linalg.norm(delta))
    delta = clip_by_norm(delta, state.settings.clip_norm)
    lr = state.learning_rate
    new = replace(state, params=state.params - lr * delta, step=state.step + 1)
    return new, {"lr": lr, "delta_norm": raw_norm, "cg_iterations": info.iterations, "cg_reason": info.reason}


def convergence_metric(stats: Sequence[EnergyStatistics]) -> float:
    """Mean over geometries of the local-energy variance; zero at an eigenstate."""
    if not stats:
        raise ValueError("need at least one geometry")
    return float(np.mean([s.variance for s in stats]))
