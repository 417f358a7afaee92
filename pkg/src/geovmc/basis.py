"""Spherical Fourier-Bessel and Bessel radial bases used to encode nuclei.

No cutoff envelope is applied: the graph is fully connected and the length
scale ``c`` only sets where the Bessel oscillations sit.
"""

from __future__ import annotations

import functools

import numpy as np
from scipy import optimize, special


@functools.lru_cache(maxsize=None)
def bessel_roots(n_sbf: int, n_rbf: int) -> np.ndarray:
    """First ``n_rbf`` positive roots of ``j_l`` for ``l < n_sbf``, shape (n_sbf, n_rbf)."""
    roots = np.zeros((n_sbf, n_rbf))
    for l in range(n_sbf):
        found = []
        x, dx = 1e-6 if l == 0 else float(l), 0.05
        f_prev = special.spherical_jn(l, x)
        while len(found) < n_rbf:
            x_next = x + dx
            f_next = special.spherical_jn(l, x_next)
            if f_prev == 0.0:
                found.append(x)
            elif f_prev * f_next < 0:
                found.append(optimize.brentq(lambda t: special.spherical_jn(l, t), x, x_next, xtol=1e-15))
            x, f_prev = x_next, f_next
        roots[l] = found[:n_rbf]
    roots.setflags(write=False)
    return roots


@functools.lru_cache(maxsize=None)
def _sbf_norms(n_sbf: int, n_rbf: int, cutoff: float) -> np.ndarray:
    z = bessel_roots(n_sbf, n_rbf)
    ls = np.arange(n_sbf)[:, None]
    return np.sqrt(2.0 / (cutoff**3 * special.spherical_jn(ls + 1, z) ** 2))


def zonal_harmonic(l, cos_angle):
    """Y_l^0 as a function of the polar-angle cosine."""
    l = np.asarray(l)
    return np.sqrt((2 * l + 1) / (4 * np.pi)) * special.eval_legendre(l, cos_angle)


def sbf(distance, cos_angle, n_sbf: int, n_rbf: int, cutoff: float) -> np.ndarray:
    """Spherical Fourier-Bessel values, shape (..., n_sbf, n_rbf).

    ``sqrt(2 / (c^3 j_{l+1}(z_ln)^2)) * j_l(z_ln d / c) * Y_l^0(angle)``.
    """
    d = np.asarray(distance, dtype=np.float64)[..., None, None]
    cos = np.asarray(cos_angle, dtype=np.float64)[..., None, None]
    z = bessel_roots(n_sbf, n_rbf)
    ls = np.arange(n_sbf)[:, None]
    radial = _sbf_norms(n_sbf, n_rbf, cutoff) * special.spherical_jn(ls, z * d / cutoff)
    return radial * zonal_harmonic(ls, cos)


def positional_encoding(x, n_sbf: int = 7, n_rbf: int = 6, cutoff: float = 10.0) -> np.ndarray:
    """Encode frame coordinates ``x`` (..., 3) as a vector of length ``n_sbf * n_rbf``.

    Sums the basis over the angles to the three frame axes.  Because ``x`` is
    already in frame coordinates, the cosine to axis ``i`` is ``x_i / |x|``.
    At ``x = 0`` only ``l = 0`` terms are non-zero, which is the continuous
    limit, so the undefined angle is irrelevant there.
    """
    x = np.asarray(x, dtype=np.float64)
    d = np.linalg.norm(x, axis=-1)
    safe = np.where(d > 0, d, 1.0)
    cos = np.where(d[..., None] > 0, x / safe[..., None], 0.0)
    out = sum(sbf(d, cos[..., i], n_sbf, n_rbf, cutoff) for i in range(3))
    return out.reshape(*x.shape[:-1], n_sbf * n_rbf)


def bessel_rbf(distance, n_rbf: int = 6, cutoff: float = 10.0) -> np.ndarray:
    """Radial Bessel basis ``sqrt(2/c) sin(n pi d / c) / d`` for n = 1..n_rbf."""
    d = np.asarray(distance, dtype=np.float64)[..., None]
    n = np.arange(1, n_rbf + 1)
    safe = np.where(d > 0, d, 1.0)
    val = np.sqrt(2.0 / cutoff) * np.sin(n * np.pi * safe / cutoff) / safe
    limit = np.sqrt(2.0 / cutoff) * n * np.pi / cutoff
    return np.where(d > 0, val, limit)
