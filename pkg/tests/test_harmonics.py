import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.legendre import leggauss
from scipy.special import spherical_jn

from infravac.harmonics import (
    direction_angles,
    legendre_eval,
    legendre_project,
    spherical_jn_integral_inv_x,
    spherical_jn_orders,
    ylm,
    ylm_table,
)


def _sphere_rule(n):
    z, wz = leggauss(n)
    phi = np.linspace(0, 2 * np.pi, 2 * n, endpoint=False)
    Z, P = np.meshgrid(z, phi, indexing="ij")
    W = np.outer(wz, np.full(2 * n, np.pi / n))
    return np.arccos(Z).ravel(), P.ravel(), W.ravel()


def test_ylm_orthonormal():
    theta, phi, w = _sphere_rule(16)
    ls = np.array([l for l in range(7) for m in range(-l, l + 1)])
    ms = np.array([m for l in range(7) for m in range(-l, l + 1)])
    Y = ylm_table(ls, ms, theta, phi)
    gram = (np.conj(Y) * w) @ Y.T
    assert np.allclose(gram, np.eye(len(ls)), atol=1e-13)


@given(st.integers(0, 8), st.floats(0.01, 3.1), st.floats(-3.1, 3.1))
def test_condon_shortley_conjugation_and_parity(l, theta, phi):
    for m in range(-l, l + 1):
        assert np.isclose(np.conj(ylm(l, m, theta, phi)), (-1) ** m * ylm(l, -m, theta, phi), atol=1e-13)
        flipped = ylm(l, m, np.pi - theta, phi + np.pi)
        assert np.isclose(flipped, (-1) ** l * ylm(l, m, theta, phi), atol=1e-13)


def test_direction_angles_roundtrip():
    v = np.array([[0, 0, 1.0], [1.0, 0, 0], [0, -2.0, 0], [1.0, 1.0, -1.0]])
    th, ph = direction_angles(v)
    rebuilt = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
    assert np.allclose(rebuilt, v / np.linalg.norm(v, axis=1)[:, None])


def test_legendre_project_recovers_coefficients():
    a = np.array([0.3, -1.0, 0.25, 0.0, 2.0])
    z, w = leggauss(12)
    assert np.allclose(legendre_project(legendre_eval(a, z), z, w, 6)[:5], a, atol=1e-14)


@pytest.mark.parametrize("l_max", [0, 1, 5, 30, 64])
def test_spherical_jn_orders_matches_scipy(l_max):
    x = np.concatenate([[0.0, 1e-8, 1e-3], np.geomspace(1e-2, 400, 300)])
    J = spherical_jn_orders(l_max, x)
    ref = np.array([spherical_jn(l, x) for l in range(l_max + 1)])
    assert J.shape == (l_max + 1, len(x))
    assert np.max(np.abs(J - ref)) < 1e-13


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 80), st.lists(st.floats(0.0, 500.0, allow_subnormal=False), min_size=1, max_size=20))
def test_spherical_jn_orders_property(l_max, xs):
    x = np.array(xs)
    J = spherical_jn_orders(l_max, x)
    for l in range(0, l_max + 1, max(1, l_max // 7)):
        assert np.allclose(J[l], spherical_jn(l, x), atol=1e-13, rtol=1e-10)


def test_spherical_jn_orders_keeps_shape():
    x = np.linspace(0, 10, 12).reshape(3, 4)
    assert spherical_jn_orders(3, x).shape == (4, 3, 4)


@pytest.mark.parametrize("l", [1, 2, 5, 12])
def test_jl_over_x_integral(l):
    # direct quadrature on [0, X] plus the leading asymptotic tail cos(X - l pi/2)/X^2
    X = 4000.0
    edges = np.linspace(0, X, 4001)
    gx, gw = leggauss(16)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    x = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    body = np.sum(w * spherical_jn(l, x) / x)
    tail = np.cos(X - l * np.pi / 2) / X**2
    assert spherical_jn_integral_inv_x(l) == pytest.approx(body + tail, abs=1e-8)


def test_jl_over_x_integral_rejects_l0():
    with pytest.raises(ValueError):
        spherical_jn_integral_inv_x(0)
