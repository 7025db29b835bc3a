"""Spherical harmonics and Legendre helpers.

Complex spherical harmonics use the Condon-Shortley phase, so that
``conj(Y_lm) = (-1)^m Y_l,-m`` and ``Y_lm(-x) = (-1)^l Y_lm(x)``.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.special import sph_harm_y


def ylm(l, m, theta, phi):
    """Y_lm at polar angle ``theta`` and azimuth ``phi`` (broadcasting)."""
    return sph_harm_y(l, m, theta, phi)


def direction_angles(vec):
    """Polar and azimuthal angle of (an array of) 3-vectors."""
    v = np.asarray(vec, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    theta = np.arccos(np.clip(v[..., 2] / r, -1.0, 1.0))
    phi = np.arctan2(v[..., 1], v[..., 0])
    return theta, phi


def ylm_table(ls, ms, theta, phi):
    """Matrix ``Y[c, p] = Y_{l_c m_c}(theta_p, phi_p)`` for channel lists."""
    ls = np.asarray(ls)[:, None]
    ms = np.asarray(ms)[:, None]
    return sph_harm_y(ls, ms, np.asarray(theta)[None, :], np.asarray(phi)[None, :])


def gauss_legendre_cos(n):
    """Gauss-Legendre nodes/weights in ``z = cos(theta)`` on [-1, 1]."""
    return leggauss(n)


def legendre_project(values, z, w, l_max):
    """Legendre coefficients ``a_l`` of ``f(z) = sum_l a_l P_l(z)`` by quadrature."""
    P = legvander(z, l_max)
    l = np.arange(l_max + 1)
    return (2 * l + 1) / 2.0 * (P.T @ (w * values))


def legendre_eval(coeff, z):
    return np.polynomial.legendre.legval(np.asarray(z, dtype=float), coeff)


def spherical_jn_integral_inv_x(l):
    """Closed form of the improper integral of j_l(x)/x over (0, inf), l >= 1."""
    from scipy.special import gammaln

    if l < 1:
        raise ValueError("integral of j_0(x)/x diverges at the origin")
    return np.sqrt(np.pi) / 4.0 * np.exp(gammaln(l / 2.0) - gammaln((l + 3) / 2.0))


def spherical_jn_orders(l_max, x):
    """j_0 .. j_{l_max} at ``x`` in one sweep, shape ``(l_max + 1,) + x.shape``.

    Upward recurrence where x >= l_max (stable for l <= x), the power
    series below x = 1e-2, and Miller's downward recurrence, normalised
    against j_0 or j_1, in between.
    """
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    out = np.zeros((l_max + 1, flat.size))
    if flat.size == 0:
        return out.reshape((l_max + 1,) + x.shape)
    up = flat >= max(l_max, 1)
    tiny = flat < 1e-2
    if tiny.any():
        out[:, tiny] = _jn_series(l_max, flat[tiny])
    if up.any():
        xu = flat[up]
        j0 = np.sin(xu) / xu
        out[0, up] = j0
        if l_max >= 1:
            j1 = np.sin(xu) / xu**2 - np.cos(xu) / xu
            out[1, up] = j1
            prev, cur = j0, j1
            for l in range(1, l_max):
                prev, cur = cur, (2 * l + 1) / xu * cur - prev
                out[l + 1, up] = cur
    down = ~up & ~tiny
    if down.any():
        xd = flat[down]
        zero = xd == 0
        xs = np.where(zero, 1.0, xd)
        start = l_max + 20 + int(np.sqrt(40.0 * max(l_max, 1)))
        block = np.zeros((l_max + 1, xd.size))
        nxt = np.zeros_like(xs)
        cur = np.full_like(xs, 1e-300)
        for l in range(start, 0, -1):
            prev = (2 * l + 1) / xs * cur - nxt
            nxt, cur = cur, prev
            if l - 1 <= l_max:
                block[l - 1] = cur
            big = np.abs(cur) > 1e200
            if big.any():
                nxt[big] *= 1e-200
                cur[big] *= 1e-200
                block[:, big] *= 1e-200
        j0 = np.sin(xs) / xs
        j1 = np.sin(xs) / xs**2 - np.cos(xs) / xs
        if l_max >= 1:
            use0 = np.abs(j0) >= np.abs(j1)
            norm = np.where(use0, j0 / block[0], j1 / np.where(block[1] == 0, 1.0, block[1]))
        else:
            norm = j0 / block[0]
        block *= norm
        block[:, zero] = 0.0
        block[0, zero] = 1.0
        out[:, down] = block
    return out.reshape((l_max + 1,) + x.shape)


def _jn_series(l_max, x):
    """x^l/(2l+1)!! (1 - y/(2l+3) + y^2/(2 (2l+3)(2l+5)) - ...), y = x^2/2; four terms."""
    y = 0.5 * x * x
    out = np.empty((l_max + 1, x.size))
    lead = np.ones_like(x)
    for l in range(l_max + 1):
        if l:
            lead = lead * x / (2 * l + 1)
        term, acc = np.ones_like(x), np.ones_like(x)
        for k in range(1, 4):
            term = -term * y / (k * (2 * l + 2 * k + 1))
            acc = acc + term
        out[l] = lead * acc
    return out
