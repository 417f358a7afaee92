"""Invariant self-checks, each reporting its measured error against a tolerance.

The same functions back ``geovmc check`` (with small case counts) and the
acceptance tests (with the full counts).  Amplitude-level checks accept a
``log_psi_fn(theta, r, geom, cfg) -> SignedLogAmplitude`` so that a broken
implementation can be fed in to confirm the check actually fails.
"""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np
from scipy import integrate, stats
from scipy.stats import ortho_group

from geovmc import metagnn, sampler, wfmodel
from geovmc import model as model_lib
from geovmc.geometry import (
    MolecularConfiguration,
    build_frame,
    geometric_center,
    is_symmetry,
    symmetry_between,
)
from geovmc.hamiltonian import EnergyStatistics, local_energy, local_energy_fn
from geovmc.metagnn import GNNConfig
from geovmc.optimizer import (
    FisherContext,
    GeometryBatch,
    OptimizerSettings,
    cg_solve_with_info,
    gradient_coefficients,
    vmc_gradient,
)
from geovmc.templates import realize
from geovmc.wfmodel import WFConfig


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    @property
    def margin(self) -> float:
        """Tolerance over measured error; above 1 means the check passed with room."""
        return self.tolerance / self.measured if self.measured > 0 else float("inf")

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name}: measured {self.measured:.3e}, tolerance {self.tolerance:.1e}"
        return text + (f" ({self.detail})" if self.detail else "")


def small_model_config(n_up: int, n_dn: int) -> model_lib.ModelConfig:
    wf = WFConfig(n_up=n_up, n_dn=n_dn, single_width=16, double_width=8, n_layers=2, n_det=2, embedding_dim=8)
    return model_lib.ModelConfig(wf, GNNConfig(embedding_dim=8, message_dim=8))


def _random_system(rng, n_nuclei: int, n_up: int, n_dn: int) -> MolecularConfiguration:
    total = n_up + n_dn
    charges = np.ones(n_nuclei, dtype=int)
    for _ in range(max(0, total - n_nuclei)):
        charges[rng.integers(n_nuclei)] += 1
    while True:
        pos = rng.normal(scale=1.5, size=(n_nuclei, 3))
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + 10 * np.eye(n_nuclei)
        if d.min() > 0.5:
            return MolecularConfiguration(pos, charges, n_up, n_dn)


def _perturbed_theta(cfg, key):
    """Random parameters with non-trivial generated slots (heads scaled up)."""
    theta = model_lib.init_model(key, cfg)
    k = jax.random.PRNGKey(int(jax.random.randint(key, (), 0, 2**30)))
    leaves, treedef = jax.tree_util.tree_flatten(theta["gnn"])
    keys = jax.random.split(k, len(leaves))
    leaves = [l + 0.1 * jax.random.normal(kk, l.shape) for l, kk in zip(leaves, keys)]
    theta["gnn"] = jax.tree_util.tree_unflatten(treedef, leaves)
    return theta


@functools.lru_cache(maxsize=None)
def _compiled_amplitude(log_psi_fn, cfg):
    return jax.jit(jax.vmap(lambda theta, x, geom: log_psi_fn(theta, x, geom, cfg), in_axes=(None, 0, None)))


@functools.lru_cache(maxsize=None)
def _compiled_energy(log_psi_fn, cfg):
    def one(theta, x, geom):
        return local_energy_fn(
            lambda y: log_psi_fn(theta, y, geom, cfg).log_abs, x, geom.system.atoms, geom.system.charges
        )

    return jax.jit(jax.vmap(one, in_axes=(None, 0, None)))


def _batched(log_psi_fn, theta, geom, cfg):
    f = _compiled_amplitude(log_psi_fn, cfg)
    return lambda x: f(theta, x, geom)


def _batched_energy(log_psi_fn, theta, geom, cfg):
    f = _compiled_energy(log_psi_fn, cfg)
    return lambda x: f(theta, x, geom)


SPIN_CHOICES = [(2, 0), (2, 1), (2, 2), (3, 1), (3, 0)]


def check_antisymmetry(n_cases: int = 1000, seed: int = 0, log_psi_fn: Callable = model_lib.log_psi) -> CheckResult:
    """Swapping two same-spin electrons flips the sign and keeps |psi|."""
    rng = np.random.default_rng(seed)
    n_systems = max(1, min(10, n_cases))
    per_system = -(-n_cases // n_systems)
    worst, sign_failures, done = 0.0, 0, 0
    for s in range(n_systems):
        n_up, n_dn = SPIN_CHOICES[s % len(SPIN_CHOICES)]
        config = _random_system(rng, int(rng.integers(1, 4)), n_up, n_dn)
        cfg = small_model_config(n_up, n_dn)
        theta = _perturbed_theta(cfg, jax.random.PRNGKey(seed * 1000 + s))
        geom = model_lib.prepare(config, cfg)
        f = _batched(log_psi_fn, theta, geom, cfg)
        n = min(per_system, n_cases - done)
        r = rng.normal(scale=1.5, size=(n, n_up + n_dn, 3))
        swapped = r.copy()
        for b in range(n):
            lo, hi = (0, n_up) if (n_up >= 2 and (n_dn < 2 or rng.random() < 0.5)) else (n_up, n_up + n_dn)
            i, j = rng.choice(np.arange(lo, hi), size=2, replace=False)
            swapped[b, [i, j]] = swapped[b, [j, i]]
        a, b_ = f(jnp.asarray(r)), f(jnp.asarray(swapped))
        sign_failures += int(np.sum(np.asarray(a.sign) != -np.asarray(b_.sign)))
        la, lb = np.asarray(a.log_abs), np.asarray(b_.log_abs)
        worst = max(worst, float(np.max(np.abs(la - lb) / np.maximum(1.0, np.abs(la)))))
        done += n
    tol = 1e-12
    passed = sign_failures == 0 and worst <= tol
    return CheckResult("antisymmetry", passed, worst, tol, f"{done} swaps, {sign_failures} sign errors")


def _random_orthogonal(rng) -> np.ndarray:
    return ortho_group.rvs(3, random_state=rng)


def check_equivariance(n_cases: int = 500, seed: int = 0, log_psi_fn: Callable = model_lib.log_psi) -> CheckResult:
    """Rigid motions (rotations, reflections, shifts) leave psi and E_L unchanged.

    When the frame needed a fallback the two frames differ by a symmetry
    ``S`` of the molecule; the moved amplitude at ``x Q + t`` is then
    compared with the original at ``c + (x - c) S``.  ``S`` must be a true
    symmetry, and the identity whenever no fallback fired.
    """
    rng = np.random.default_rng(seed)
    n_systems = max(1, min(25, n_cases))
    per_system = -(-n_cases // n_systems)
    worst_logpsi = worst_energy = worst_axes = 0.0
    failures, done = [], 0
    for s in range(n_systems):
        n_nuclei = 2 + s % 3
        n_up, n_dn = SPIN_CHOICES[s % len(SPIN_CHOICES)]
        config = _random_system(rng, n_nuclei, n_up, n_dn)
        cfg = small_model_config(n_up, n_dn)
        theta = _perturbed_theta(cfg, jax.random.PRNGKey(seed * 1000 + s))
        geom = model_lib.prepare(config, cfg)
        frame = build_frame(config)
        center = geometric_center(config)
        f = _batched(log_psi_fn, theta, geom, cfg)
        energy = _batched_energy(log_psi_fn, theta, geom, cfg)
        n = min(per_system, n_cases - done)
        for _ in range(n):
            Q = _random_orthogonal(rng)
            t = rng.normal(scale=2.0, size=3)
            moved = config.transformed(Q, t)
            m_frame = build_frame(moved)
            S = symmetry_between(frame, m_frame, Q)
            if not is_symmetry(config, S, atol=1e-8):
                failures.append("frame map is not a molecular symmetry")
                continue
            if not frame.fallbacks:
                worst_axes = max(worst_axes, float(np.max(np.abs(Q @ m_frame.axes - frame.axes))))
            m_geom = model_lib.prepare(moved, cfg)
            x = rng.normal(scale=1.5, size=(2, n_up + n_dn, 3))
            a = _batched(log_psi_fn, theta, m_geom, cfg)(jnp.asarray(x @ Q + t))
            b = f(jnp.asarray(center + (x - center) @ S))
            if np.any(np.asarray(a.sign) != np.asarray(b.sign)):
                failures.append("sign changed")
            worst_logpsi = max(worst_logpsi, float(np.max(np.abs(np.asarray(a.log_abs) - np.asarray(b.log_abs)))))
            ea = np.asarray(_batched_energy(log_psi_fn, theta, m_geom, cfg)(jnp.asarray(x[:1] @ Q + t)))
            eb = np.asarray(energy(jnp.asarray(center + (x[:1] - center) @ S)))
            worst_energy = max(worst_energy, float(np.max(np.abs(ea - eb) / np.maximum(1.0, np.abs(eb)))))
        done += n

    square = realize("hydrogen_rectangle", [1.0], {"side": 1.0})
    f1, f2 = build_frame(square), build_frame(square.permuted([2, 0, 3, 1]))
    square_ok = (
        np.array_equal(f1.axes, f2.axes)
        and np.allclose(f1.axes.T @ f1.axes, np.eye(3), atol=1e-12)
        and bool(f1.fallbacks)
    )
    if not square_ok:
        failures.append("square fallback frame not deterministic/orthonormal")
    worst = max(worst_logpsi, worst_energy, worst_axes)
    tol = 1e-8
    passed = not failures and worst <= tol
    detail = f"{done} motions; log|psi| {worst_logpsi:.1e}, E_L {worst_energy:.1e}, axes {worst_axes:.1e}"
    if failures:
        detail += "; " + ", ".join(sorted(set(failures)))
    return CheckResult("equivariance", passed, worst, tol, detail)


def check_reindexing(n_cases: int = 200, seed: int = 0) -> CheckResult:
    """Relabeling nuclei changes neither psi nor the generated parameters (rows permuted)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in range(n_cases):
        n_up, n_dn = SPIN_CHOICES[c % len(SPIN_CHOICES)]
        config = _random_system(rng, int(rng.integers(2, 5)), n_up, n_dn)
        cfg = small_model_config(n_up, n_dn)
        theta = _perturbed_theta(cfg, jax.random.PRNGKey(seed * 1000 + c % 7))
        perm = rng.permutation(config.n_nuclei)
        moved = config.permuted(perm)
        x = jnp.asarray(rng.normal(scale=1.5, size=(2, n_up + n_dn, 3)))
        a = _batched(model_lib.log_psi, theta, model_lib.prepare(config, cfg), cfg)(x)
        b = _batched(model_lib.log_psi, theta, model_lib.prepare(moved, cfg), cfg)(x)
        worst = max(worst, float(np.max(np.abs(np.asarray(a.log_abs) - np.asarray(b.log_abs)))))
        if np.any(np.asarray(a.sign) != np.asarray(b.sign)):
            worst = max(worst, np.inf)
        pa = metagnn.generate_params(theta["gnn"], config, build_frame(config), cfg.gnn, cfg.wf)
        pb = metagnn.generate_params(theta["gnn"], moved, build_frame(moved), cfg.gnn, cfg.wf)
        for la, lb in zip(jax.tree_util.tree_leaves(pa["global"]), jax.tree_util.tree_leaves(pb["global"])):
            worst = max(worst, float(np.max(np.abs(np.asarray(la) - np.asarray(lb)), initial=0.0)))
        for la, lb in zip(jax.tree_util.tree_leaves(pa["node"]), jax.tree_util.tree_leaves(pb["node"])):
            worst = max(worst, float(np.max(np.abs(np.asarray(la)[perm] - np.asarray(lb)), initial=0.0)))
    tol = 1e-12
    return CheckResult("reindexing", worst <= tol, worst, tol, f"{n_cases} permutations")


def _stencil(x, h):
    """Points ``x + k h e_i`` for k in (-2, -1, 1, 2) and every coordinate i."""
    flat = x.ravel()
    eye = np.eye(flat.size) * h
    pts = flat[None, None] + np.array([-2, -1, 1, 2])[:, None, None] * eye[None]
    return pts.reshape(4, flat.size, *x.shape)


def fd_gradient(f_batch, x, h=1e-3):
    """Fourth-order central differences; ``f_batch`` maps (P, ...) points to (P,) values."""
    x = np.asarray(x, dtype=np.float64)
    pts = _stencil(x, h)
    v = np.asarray(f_batch(pts.reshape(-1, *x.shape))).reshape(4, -1)
    return ((v[0] - 8 * v[1] + 8 * v[2] - v[3]) / (12 * h)).reshape(x.shape)


def fd_laplacian(f_batch, x, h=1e-2):
    """Fourth-order central second differences, summed over coordinates."""
    x = np.asarray(x, dtype=np.float64)
    pts = _stencil(x, h)
    v = np.asarray(f_batch(np.concatenate([x[None], pts.reshape(-1, *x.shape)])))
    f0, v = v[0], v[1:].reshape(4, -1)
    return float(np.sum(-v[0] + 16 * v[1] - 30 * f0 + 16 * v[2] - v[3]) / (12 * h * h))


def _away_from_cusps(rng, config, n_el, min_dist=0.2):
    while True:
        x = rng.normal(scale=1.5, size=(n_el, 3))
        d_en = np.linalg.norm(x[:, None] - config.positions[None], axis=-1)
        d_ee = np.linalg.norm(x[:, None] - x[None], axis=-1) + 10 * np.eye(n_el)
        if d_en.min() > min_dist and d_ee.min() > min_dist:
            return x


_generate = jax.jit(model_lib.wf_params, static_argnums=2)


def check_derivatives(n_cases: int = 100, seed: int = 0) -> list[CheckResult]:
    """Autodiff gradient and Laplacian of log|psi| against finite differences,
    plus the VMC gradient against the derivative of the exact energy of a toy.

    The differences are taken of psi itself (relative to its value at the
    point); ``grad log|psi| = grad psi / psi`` and ``lap log|psi| = lap psi / psi
    - |grad log|psi||^2`` then follow without differencing a logarithm that
    may sit close to a node."""
    rng = np.random.default_rng(seed)
    worst_g = worst_l = 0.0
    for c in range(n_cases):
        n_up, n_dn = SPIN_CHOICES[c % len(SPIN_CHOICES)]
        cfg = small_model_config(n_up, n_dn)
        config = _random_system(rng, int(rng.integers(1, 4)), n_up, n_dn)
        theta = _perturbed_theta(cfg, jax.random.PRNGKey(seed * 1000 + c % 7))
        geom = model_lib.prepare(config, cfg)
        params = _generate(theta, geom, cfg)
        x = _away_from_cusps(rng, config, n_up + n_dn)
        grad = wfmodel.grad_logpsi(params, x, geom.system, cfg.n_up)
        lap = wfmodel.laplacian_logpsi(params, x, geom.system, cfg.n_up)

        ref = wfmodel.evaluate(params, jnp.asarray(x[None]), geom.system, cfg.n_up)
        s0, l0 = float(ref.sign[0]), float(ref.log_abs[0])

        def u_batch(pts):
            # psi / psi(x): smooth through nearby nodes, unlike log|psi|
            v = wfmodel.evaluate(params, jnp.asarray(pts), geom.system, cfg.n_up)
            return np.asarray(v.sign) * s0 * np.exp(np.asarray(v.log_abs) - l0)

        fd_g = fd_gradient(u_batch, x)
        fd_l = fd_laplacian(u_batch, x) - float(np.sum(fd_g**2))
        worst_g = max(worst_g, float(np.max(np.abs(grad - fd_g)) / max(np.max(np.abs(fd_g)), 1e-300)))
        worst_l = max(worst_l, abs(lap - fd_l) / max(abs(fd_l), 1.0))
    toy = vmc_gradient_toy_error()
    return [
        CheckResult("gradient-fd", worst_g < 1e-5, worst_g, 1e-5, f"{n_cases} configurations"),
        CheckResult("laplacian-fd", worst_l < 1e-4, worst_l, 1e-4, f"{n_cases} configurations"),
        CheckResult("vmc-gradient-fd", toy < 1e-3, toy, 1e-3, "2-parameter hydrogen toy"),
    ]


def _toy_log_psi(theta, r):
    a, b = theta
    return -a * r - b * r * r


def _toy_local_energy(theta, r):
    # psi = exp(-u), u = a r + b r^2: E_L = -(u'^2 - u'' - 2u'/r)/2 - 1/r
    a, b = theta
    du, d2u = a + 2 * b * r, 2 * b
    return -0.5 * (du * du - d2u - 2 * du / r) - 1.0 / r


def _toy_energy(theta) -> float:
    def weight(r):
        return r * r * np.exp(2 * _toy_log_psi(theta, r))

    num = integrate.quad(lambda r: weight(r) * _toy_local_energy(theta, r), 0, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
    den = integrate.quad(weight, 0, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
    return num / den


def vmc_gradient_toy_error(theta=(0.9, 0.05), n_samples: int = 1_000_000, h: float = 1e-4) -> float:
    """Relative error of ``2 * vmc_gradient`` against d<E>/d(theta).

    Samples are stratified draws from |psi|^2 r^2 via the inverse CDF, so the
    sample average is close to the exact expectation.  The estimator omits
    the conventional factor 2 of the energy derivative.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grid = np.linspace(0.0, 60.0, 2_000_001)
    dens = grid**2 * np.exp(2 * _toy_log_psi(theta, grid))
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    u = (np.arange(n_samples) + 0.5) / n_samples
    r = np.interp(u, cdf, grid)
    e_l = _toy_local_energy(theta, r)
    grads = np.stack([-r, -r * r], axis=1)
    estimate = 2 * vmc_gradient([GeometryBatch(e_l, grads)])
    exact = np.array(
        [
            (_toy_energy(theta + h * e) - _toy_energy(theta - h * e)) / (2 * h)
            for e in np.eye(2)
        ]
    )
    return float(np.max(np.abs(estimate - exact)) / np.max(np.abs(exact)))


def check_cg(seed: int = 0, n_params: int = 200, n_samples: int = 300) -> CheckResult:
    """Natural-gradient direction from CG (both parameter- and sample-space
    forms) against a dense damped solve; stopping rule tightened to convergence."""
    rng = np.random.default_rng(seed)
    scales = np.exp(-np.linspace(0, 4, n_params))
    grads = rng.normal(size=(n_samples, n_params)) * scales
    energies = rng.normal(size=n_samples)
    batches = [GeometryBatch(energies[: n_samples // 2], grads[: n_samples // 2]),
               GeometryBatch(energies[n_samples // 2:], grads[n_samples // 2:])]
    gradient = vmc_gradient(batches)
    damping = 1e-3
    start = time.perf_counter()
    dense = np.linalg.solve(grads.T @ grads / n_samples + damping * np.eye(n_params), gradient)
    tight = OptimizerSettings(cg_max_steps=10 * n_params, cg_tol=0.0, cg_window=10)
    x_p, _ = cg_solve_with_info(
        lambda v: grads.T @ (grads @ v) / n_samples + damping * v,
        gradient,
        max_steps=tight.cg_max_steps,
        tol=0.0,
        residual_tol=1e-13,
    )
    ctx = FisherContext(grads, damping, coeffs=gradient_coefficients(batches))
    x_s, _ = _tight_solve(ctx, gradient, tight)
    elapsed = time.perf_counter() - start
    err = max(
        float(np.linalg.norm(x_p - dense) / np.linalg.norm(dense)),
        float(np.linalg.norm(x_s - dense) / np.linalg.norm(dense)),
    )
    tol = 1e-6
    return CheckResult("fisher-cg", err <= tol and elapsed < 1.0, err, tol, f"{n_params} parameters, {elapsed:.3f} s")


def _tight_solve(ctx: FisherContext, gradient, settings):
    g = ctx.matrix()
    S = g.shape[0]
    gram = g @ g.T
    y, info = cg_solve_with_info(
        lambda y: gram @ y / S + ctx.damping * y,
        ctx.coeffs,
        max_steps=settings.cg_max_steps,
        tol=0.0,
        residual_tol=1e-13,
        inner=lambda u, v: float(u @ gram @ v),
    )
    return g.T @ y, info


def hydrogen_stub_log_abs(r):
    """``log|psi| = -|r|``: the exact hydrogen ground state, E = -1/2."""
    return -jnp.sqrt(jnp.sum(r**2))


def check_zero_variance(n_points: int = 10_000, seed: int = 0) -> CheckResult:
    """Local energy of the exact hydrogen ground state is -1/2 everywhere."""
    rng = np.random.default_rng(seed)
    atom = realize("atom", [0.0], {"charge": 1})
    x = rng.normal(scale=2.0, size=(n_points, 1, 3))
    # one scalar call through the public API, then the batched traceable core
    first = local_energy(x[0], hydrogen_stub_log_abs, atom)
    e = jax.jit(jax.vmap(lambda y: local_energy_fn(hydrogen_stub_log_abs, y, jnp.zeros((1, 3)), jnp.ones(1))))(
        jnp.asarray(x)
    )
    e = np.concatenate([[first], np.asarray(e)])
    worst = float(np.max(np.abs(e + 0.5)))
    var = EnergyStatistics.from_samples(e).variance
    passed = worst <= 1e-10 and var < 1e-12
    return CheckResult("zero-variance", passed, worst, 1e-10, f"{n_points} points, variance {var:.1e}")


def _stub_batch_logpsi(r):
    from geovmc.wfmodel import SignedLogAmplitude

    la = -jnp.sqrt(jnp.sum(r**2, axis=(-1, -2)))
    return SignedLogAmplitude(jnp.ones_like(la), la)


def hydrogen_radial_cdf(r):
    return 1.0 - np.exp(-2 * r) * (1 + 2 * r + 2 * r * r)


def sample_hydrogen_stub(n_samples: int = 1_000_000, walkers: int = 4096, thin: int = 20, burn_in: int = 400, seed: int = 0):
    """Radii sampled from |1s|^2 by the Metropolis-Hastings chain."""
    atom = realize("atom", [0.0], {"charge": 1})
    key = jax.random.PRNGKey(seed)
    state = sampler.init_walkers(key, atom, build_frame(atom), walkers, _stub_batch_logpsi, step_size=0.5)
    done = 0
    while done < burn_in:
        state = sampler.run_chain(state, _stub_batch_logpsi, 20)
        state = sampler.adapt_step_size(state)
        done += 20
    radii = []
    count = 0
    while count < n_samples:
        state = sampler.run_chain(state, _stub_batch_logpsi, thin)
        r = np.linalg.norm(np.asarray(state.positions)[:, 0], axis=-1)
        radii.append(r)
        count += r.size
    return np.concatenate(radii)[:n_samples]


def check_sampler_moments(n_samples: int = 1_000_000, seed: int = 0, n_bins: int = 20) -> list[CheckResult]:
    """Mean radius 3/2 and a chi-square test of the radial histogram."""
    r = sample_hydrogen_stub(n_samples, seed=seed)
    mean_err = abs(float(r.mean()) - 1.5)
    from scipy.optimize import brentq

    edges = [0.0] + [brentq(lambda x, q=q: hydrogen_radial_cdf(x) - q, 0, 60) for q in np.arange(1, n_bins) / n_bins] + [np.inf]
    counts, _ = np.histogram(r, bins=edges)
    chi2 = stats.chisquare(counts, np.full(n_bins, r.size / n_bins))
    return [
        CheckResult("sampler-mean-radius", mean_err <= 0.02, mean_err, 0.02, f"E[r] = {r.mean():.4f} from {r.size} samples"),
        CheckResult("sampler-chi-square", chi2.pvalue > 0.01, chi2.pvalue, 0.01, f"p-value {chi2.pvalue:.3f} (must exceed 0.01)"),
    ]


def run_all(quick: bool = True, seed: int = 0) -> list[CheckResult]:
    """Every check; ``quick`` cuts the case counts tenfold."""
    scale = 10 if quick else 1
    results = [
        check_antisymmetry(1000 // scale, seed),
        check_equivariance(500 // scale, seed),
        check_reindexing(200 // scale, seed),
        *check_derivatives(100 // scale, seed),
        check_zero_variance(10_000, seed),
        check_cg(seed),
        *check_sampler_moments(1_000_000 // scale, seed),
    ]
    return results
