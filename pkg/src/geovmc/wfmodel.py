"""Neural wave function: frame-projected features, two-stream updates and a
weighted sum of enveloped Slater determinants evaluated in log domain.

Parameters are a nested dict with three top-level groups:

``shared``
    trained directly (input MLP and projection, stream weights, orbital
    projections);
``global``
    geometry-independent slots that the graph network generates (stream
    biases, orbital biases, determinant weights);
``node``
    per-nucleus slots the graph network generates (nuclear embeddings,
    envelope weights ``p`` and exponents ``s``), leading axis = nucleus.

All functions here work on a single electron configuration ``r`` of shape
(N, 3) unless the name says otherwise; batch with ``jax.vmap``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from geovmc.errors import NodeError
from geovmc.geometry import EquivariantFrame, MolecularConfiguration

SPINS = ("up", "dn")


@dataclass(frozen=True)
class WFConfig:
    n_up: int
    n_dn: int
    single_width: int = 256
    double_width: int = 32
    n_layers: int = 4
    n_det: int = 16
    embedding_dim: int = 64
    orbital_bias_init: float = 1.0

    @property
    def n_electrons(self) -> int:
        return self.n_up + self.n_dn

    def n_spin(self, spin: str) -> int:
        return self.n_up if spin == "up" else self.n_dn


class System(NamedTuple):
    """Array view of a geometry: nuclear positions (M, 3), charges (M,), frame axes (3, 3)."""

    atoms: jax.Array
    charges: jax.Array
    axes: jax.Array


class SignedLogAmplitude(NamedTuple):
    sign: jax.Array
    log_abs: jax.Array


def make_system(config: MolecularConfiguration, frame: EquivariantFrame) -> System:
    return System(
        jnp.asarray(config.positions),
        jnp.asarray(config.charges, dtype=jnp.float64),
        jnp.asarray(frame.axes),
    )


def softplus_inverse(x: float) -> float:
    return float(np.log(np.expm1(x)))


def _dense_init(key, fan_in, shape):
    return jax.random.normal(key, shape) / np.sqrt(fan_in)


def init_params(key: jax.Array, cfg: WFConfig, n_nuclei: int) -> dict:
    """Fresh parameters; the ``global`` and ``node`` values double as the
    initial biases of the generating network's output heads."""
    E, H, D, K = cfg.embedding_dim, cfg.single_width, cfg.double_width, cfg.n_det
    keys = iter(jax.random.split(key, 8 + 4 * cfg.n_layers))
    shared = {
        "input": {
            "proj": _dense_init(next(keys), 4, (4, E)),
            "mlp": [
                {"w": _dense_init(next(keys), E, (E, H)), "b": jnp.zeros(H)},
                {"w": _dense_init(next(keys), H, (H, H)), "b": jnp.zeros(H)},
            ],
        },
        "layers": [],
        "orbital_w": {},
    }
    glob = {"b_single": [], "b_double": [], "orbital_b": {}, "det_w": jnp.full(K, 1.0 / K)}
    d_h, d_g = H, 4
    for _ in range(cfg.n_layers):
        shared["layers"].append(
            {
                "w_single": _dense_init(next(keys), d_h + 2 * d_g, (d_h + 2 * d_g, H)),
                "w_global": _dense_init(next(keys), 2 * d_h, (2 * d_h, H)),
                "w_double": _dense_init(next(keys), d_g, (d_g, D)),
            }
        )
        glob["b_single"].append(jnp.zeros(H))
        glob["b_double"].append(jnp.zeros(D))
        d_h, d_g = H, D
    node = {"z": 0.1 * jax.random.normal(next(keys), (n_nuclei, E)), "p": {}, "s": {}}
    for spin in SPINS:
        n = cfg.n_spin(spin)
        shared["orbital_w"][spin] = _dense_init(next(keys), H, (K, n, H))
        glob["orbital_b"][spin] = jnp.full((K, n), cfg.orbital_bias_init)
        node["p"][spin] = jnp.zeros((n_nuclei, K, n))
        node["s"][spin] = jnp.full((n_nuclei, K, n), softplus_inverse(1.0))
    return {"shared": shared, "global": glob, "node": node}


def assemble(shared: dict, assignment: dict) -> dict:
    """Full parameter dict from the trained ``shared`` group and generated slots."""
    return {"shared": shared, "global": assignment["global"], "node": assignment["node"]}


def _safe_norm(x, axis=-1):
    # finite gradient at the origin, value unchanged elsewhere
    sq = jnp.sum(x**2, axis=axis)
    safe = jnp.where(sq > 0, sq, 1.0)
    return jnp.where(sq > 0, jnp.sqrt(safe), 0.0)


def electron_features(params: dict, r: jax.Array, system: System):
    """Initial one- and two-electron streams.

    ``h_i = sum_m MLP(W [(r_i - R_m) E, |r_i - R_m|] + z_m)`` and
    ``g_ij = ((r_i - r_j) E, |r_i - r_j|)``.
    """
    inp = params["shared"]["input"]
    ae = r[:, None, :] - system.atoms[None]
    raw = jnp.concatenate([ae @ system.axes, _safe_norm(ae)[..., None]], axis=-1)
    x = raw @ inp["proj"] + params["node"]["z"][None]
    for layer in inp["mlp"]:
        x = jnp.tanh(x @ layer["w"] + layer["b"])
    h = jnp.sum(x, axis=1)

    n = r.shape[0]
    ee = r[:, None, :] - r[None]
    eye = jnp.eye(n)
    dist = jnp.linalg.norm(ee + eye[..., None], axis=-1) * (1.0 - eye)
    g = jnp.concatenate([ee @ system.axes, dist[..., None]], axis=-1)
    return h, g


def update_layer(h, g, weights: dict, b_single, b_double, n_up: int):
    """One two-stream update with residuals where widths allow."""
    g_up = jnp.sum(g[:, :n_up], axis=1)
    g_dn = jnp.sum(g[:, n_up:], axis=1)
    h_pool = jnp.concatenate([jnp.sum(h[:n_up], axis=0), jnp.sum(h[n_up:], axis=0)])
    pre = (
        jnp.concatenate([h, g_up, g_dn], axis=-1) @ weights["w_single"]
        + b_single
        + h_pool @ weights["w_global"]
    )
    h_new = jnp.tanh(pre)
    g_new = jnp.tanh(g @ weights["w_double"] + b_double)
    if h_new.shape == h.shape:
        h_new = h_new + h
    if g_new.shape == g.shape:
        g_new = g_new + g
    return h_new, g_new


def electron_embeddings(params: dict, r: jax.Array, system: System, n_up: int):
    h, g = electron_features(params, r, system)
    for t, layer in enumerate(params["shared"]["layers"]):
        h, g = update_layer(
            h, g, layer, params["global"]["b_single"][t], params["global"]["b_double"][t], n_up
        )
    return h


def orbitals(params: dict, h, r: jax.Array, system: System, n_up: int):
    """Orbital matrices ``{spin: (K, n_spin, n_spin)}``; rows orbitals, columns electrons."""
    out = {}
    for spin, sl in (("up", slice(0, n_up)), ("dn", slice(n_up, None))):
        w = params["shared"]["orbital_w"][spin]
        b = params["global"]["orbital_b"][spin]
        h_s, r_s = h[sl], r[sl]
        if w.shape[1] == 0:
            out[spin] = jnp.zeros((w.shape[0], 0, 0))
            continue
        linear = jnp.einsum("kih,jh->kij", w, h_s) + b[:, :, None]
        dist = _safe_norm(r_s[:, None, :] - system.atoms[None])  # (n, M)
        pi = jax.nn.sigmoid(params["node"]["p"][spin])  # (M, K, n)
        sigma = jax.nn.softplus(params["node"]["s"][spin])
        env = jnp.sum(pi[..., None] * jnp.exp(-sigma[..., None] * dist.T[:, None, None, :]), axis=0)
        out[spin] = linear * env
    return out


def _slogdet(mats):
    n = mats.shape[-1]
    if n == 0:
        return jnp.ones(mats.shape[0]), jnp.zeros(mats.shape[0])
    if n == 1:
        a = mats[:, 0, 0]
        return jnp.sign(a), jnp.log(jnp.abs(a))
    return jnp.linalg.slogdet(mats)


def signed_logpsi(phi_up, phi_dn, det_w) -> SignedLogAmplitude:
    """``log|sum_k w_k det(phi_up^k) det(phi_dn^k)|`` and its sign, via signed log-sum-exp.

    An exactly vanishing sum gives sign 0 and ``-inf``.
    """
    s_up, l_up = _slogdet(phi_up)
    s_dn, l_dn = _slogdet(phi_dn)
    sign_k = s_up * s_dn * jnp.sign(det_w)
    log_k = l_up + l_dn + jnp.log(jnp.abs(det_w))
    shift = jax.lax.stop_gradient(jnp.max(log_k))
    shift = jnp.where(jnp.isfinite(shift), shift, 0.0)
    total = jnp.sum(sign_k * jnp.exp(log_k - shift))
    sign = jnp.sign(total)
    safe = jnp.where(total != 0, jnp.abs(total), 1.0)
    log_abs = jnp.where(total != 0, jnp.log(safe) + shift, -jnp.inf)
    return SignedLogAmplitude(sign, log_abs)


def orbital_matrices(params: dict, r: jax.Array, system: System, n_up: int):
    h = electron_embeddings(params, r, system, n_up)
    return orbitals(params, h, r, system, n_up)


def log_psi(params: dict, r: jax.Array, system: System, n_up: int) -> SignedLogAmplitude:
    phi = orbital_matrices(params, r, system, n_up)
    return signed_logpsi(phi["up"], phi["dn"], params["global"]["det_w"])


def log_abs_psi(params: dict, r: jax.Array, system: System, n_up: int) -> jax.Array:
    return log_psi(params, r, system, n_up).log_abs


@functools.partial(jax.jit, static_argnums=3)
def evaluate(params: dict, r: jax.Array, system: System, n_up: int) -> SignedLogAmplitude:
    """Batched forward pass over ``r`` of shape (B, N, 3)."""
    return jax.vmap(log_psi, in_axes=(None, 0, None, None))(params, r, system, n_up)


def grad_and_laplacian(log_abs_fn, r: jax.Array):
    """Exact gradient (N, 3) and Laplacian of a scalar function of ``r``.

    Forward-over-reverse: one linearization of the gradient, then one
    Jacobian-vector product per coordinate for the Hessian diagonal.
    """
    shape = r.shape
    flat = r.reshape(-1)

    def f(x):
        return log_abs_fn(x.reshape(shape))

    grad, hvp = jax.linearize(jax.grad(f), flat)
    eye = jnp.eye(flat.shape[0])
    diag = jax.vmap(lambda v: jnp.dot(hvp(v), v))(eye)
    return grad.reshape(shape), jnp.sum(diag)


@functools.partial(jax.jit, static_argnums=3)
def _grad_lap(params, r, system, n_up):
    value = log_psi(params, r, system, n_up)
    grad, lap = grad_and_laplacian(lambda x: log_abs_psi(params, x, system, n_up), r)
    return value, grad, lap


def grad_logpsi(params: dict, r, system: System, n_up: int) -> np.ndarray:
    """Exact d log|psi| / d r for one configuration; raises NodeError on a node."""
    value, grad, _ = _grad_lap(params, jnp.asarray(r), system, n_up)
    if value.sign == 0 or not np.all(np.isfinite(grad)):
        raise NodeError("gradient of log|psi| is undefined at a node of psi")
    return np.asarray(grad)


def laplacian_logpsi(params: dict, r, system: System, n_up: int) -> float:
    """Exact sum of second derivatives of log|psi|; raises NodeError on a node."""
    value, _, lap = _grad_lap(params, jnp.asarray(r), system, n_up)
    if value.sign == 0 or not np.isfinite(lap):
        raise NodeError("Laplacian of log|psi| is undefined at a node of psi")
    return float(lap)


def param_count(tree) -> int:
    return int(sum(np.size(x) for x in jax.tree_util.tree_leaves(tree)))
