import numpy as np
from scipy import integrate

from geovmc.basis import bessel_rbf, bessel_roots, positional_encoding, sbf


def j_closed(l, x):
    """Spherical Bessel functions from their elementary closed forms."""
    s, c = np.sin(x), np.cos(x)
    if l == 0:
        return s / x
    if l == 1:
        return s / x**2 - c / x
    if l == 2:
        return (3 / x**2 - 1) * s / x - 3 * c / x**2
    raise ValueError(l)


def bisect_root(f, a, b, iters=200):
    fa = f(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = f(m)
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def oracle_roots(l, n):
    roots, x, step = [], 0.5 + l, 0.01
    while len(roots) < n:
        if j_closed(l, x) * j_closed(l, x + step) < 0:
            roots.append(bisect_root(lambda t: j_closed(l, t), x, x + step))
        x += step
    return np.array(roots)


def legendre(l, t):
    p0, p1 = 1.0, t
    if l == 0:
        return p0
    for k in range(1, l):
        p0, p1 = p1, ((2 * k + 1) * t * p1 - k * p0) / (k + 1)
    return p1


def test_roots_match_bisection_oracle():
    roots = bessel_roots(3, 2)
    for l in range(3):
        assert np.allclose(roots[l], oracle_roots(l, 2), atol=1e-12)
    assert np.isclose(roots[0, 0], np.pi)


def test_sbf_spot_values_match_oracle():
    d, alpha, c = 1.0, np.pi / 3, 10.0
    values = sbf(d, np.cos(alpha), 3, 2, c)
    for l in range(3):
        z = oracle_roots(l, 2)
        for n in range(2):
            norm = np.sqrt(2.0 / (c**3 * j_closed(l + 1, z[n]) ** 2)) if l < 2 else None
            if norm is None:
                # j_3 closed form via the upward recurrence
                j3 = (5 / z[n]) * j_closed(2, z[n]) - j_closed(1, z[n])
                norm = np.sqrt(2.0 / (c**3 * j3**2))
            ylm = np.sqrt((2 * l + 1) / (4 * np.pi)) * legendre(l, np.cos(alpha))
            expected = norm * j_closed(l, z[n] * d / c) * ylm
            assert np.isclose(values[l, n], expected, rtol=1e-10, atol=1e-14)


def test_radial_part_is_normalized():
    c = 10.0
    for l, n in [(0, 0), (1, 1), (2, 0)]:
        z = bessel_roots(3, 2)[l, n]

        def radial(d):
            return sbf(d, 1.0, 3, 2, c)[l, n] / (np.sqrt((2 * l + 1) / (4 * np.pi)))

        val = integrate.quad(lambda d: radial(d) ** 2 * d * d, 0, c, limit=200)[0]
        assert np.isclose(val, 1.0, rtol=1e-8), (l, n, z)


def test_encoding_length_and_axis_angles():
    x = np.array([2.0, 0.0, 0.0])
    enc = positional_encoding(x)
    assert enc.shape == (42,)
    # angles (0, pi/2, pi/2) to the three frame axes
    expected = sum(sbf(2.0, cos, 7, 6, 10.0) for cos in (1.0, 0.0, 0.0)).ravel()
    assert np.allclose(enc, expected)


def test_encoding_at_origin_is_finite():
    enc = positional_encoding(np.zeros(3))
    assert np.all(np.isfinite(enc))
    near = positional_encoding(np.array([1e-7, 0, 0]))
    assert np.allclose(enc, near, atol=1e-6)


def test_bessel_rbf_limit_at_zero():
    assert np.allclose(bessel_rbf(np.array(0.0)), bessel_rbf(np.array(1e-8)), atol=1e-9)
