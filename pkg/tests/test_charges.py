import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad

from infravac.charges import (
    ChargeMismatchError,
    coulomb_pairing,
    kappa,
    kappa_momentum,
    linear_form,
    linear_form_momentum,
    linear_form_position,
    make_charge,
    make_special_charge,
    materialize_difference,
    overlap,
    random_scenario,
    split_test_function,
    weyl_phase,
)
from infravac.modespace import AngularTruncation, geometric_boundaries, make_grid
from infravac.transforms import (
    AngularFunction,
    RadialProfile,
    Z_AXIS,
    build_test_function,
    bump,
    cap,
    constant,
    parts_transform,
)


@pytest.fixture(scope="module")
def t6():
    return AngularTruncation(6)


def test_special_charge_q(grid):
    for q in (1.0, -2.5):
        g = make_special_charge(q, 1.0, 2.0)
        assert g.q == pytest.approx(q, rel=1e-12)
        assert g.special_form and not g.sigma_parts


def test_make_charge_validation():
    with pytest.raises(ValueError):
        make_charge(rho=(RadialProfile(lambda r: r, (1.0, np.inf)), constant()))
    with pytest.raises(ValueError):
        make_charge(rho=(RadialProfile(lambda r: (1 + 1j) * r, (1.0, 2.0)), constant()))


def test_charge_algebra():
    a = make_special_charge(1.0, 1.0, 2.0)
    b = make_special_charge(0.5, 0.5, 1.5)
    assert (a + b).q == pytest.approx(1.5)
    assert (a - b).q == pytest.approx(0.5)
    assert (-a).q == pytest.approx(-1.0)
    assert a.scaled(3.0).phi.params["q"] == pytest.approx(3.0)


def test_split_recovers_generating_data(grid, t6):
    h = [(bump(1.0, 2.0), cap(0.7, np.array([0, 1.0, 0]), 6))]
    g = [(bump(0.5, 1.5, -0.4), constant())]
    f = build_test_function(h, g, grid, t6)
    hh, gg = split_test_function(f)
    assert np.allclose(hh, parts_transform(h, grid, t6), atol=1e-13)
    assert np.allclose(gg, parts_transform(g, grid, t6), atol=1e-13)


def test_coulomb_pairing_l0_against_double_quadrature():
    # rotation-invariant data: (4 pi)^2 int int rho h r^2 s^2 / (4 pi max(r, s)) dr ds
    rho, h = bump(0.5, 2.0), bump(1.0, 3.0, -0.7)
    f = lambda s, r: rho(np.array([r]))[0] * h(np.array([s]))[0] * r * r * s * s / max(r, s)
    ref, _ = dblquad(f, 0.5, 2.0, 1.0, 3.0, epsabs=1e-13, epsrel=1e-11)
    ref *= 4 * np.pi
    got = coulomb_pairing([(rho, constant())], [(h, constant())])
    assert got == pytest.approx(ref, rel=1e-9)


def test_shell_theorem_for_separated_supports():
    # outside a spherical charge the potential is q/(4 pi r), so the pairing is q kappa_h
    gamma = make_special_charge(1.7, 0.5, 1.0)
    h = [(bump(2.0, 3.0), constant()), (bump(2.0, 3.0, 0.4), cap(0.6, np.array([1.0, 0, 0]), 8))]
    assert coulomb_pairing(gamma.rho_parts, h) == pytest.approx(1.7 * kappa(h), rel=1e-11)


def test_overlap_matches_quadrature():
    s, g = bump(0.5, 2.0), bump(1.0, 3.0)
    a = AngularFunction(np.array([0.2, 0.5]), Z_AXIS)
    b = AngularFunction(np.array([1.0, -0.3]), np.array([0.0, 1.0, 0.0]))
    r = np.linspace(1.0, 2.0, 200001)
    radial = np.trapezoid(s(r) * g(r) * r * r, r)
    # angular overlap: 4 pi (a0 b0 + a1 b1 cos(angle)/3), axes are orthogonal
    ang = 4 * np.pi * 0.2 * 1.0
    assert overlap([(s, a)], [(g, b)]) == pytest.approx(radial * ang, rel=1e-8)


def test_dual_oracle_special_charge(grid, t6):
    gamma = make_special_charge(1.0, 1.0, 2.0)
    f = build_test_function([(bump(1.5, 3.0), cap(0.9, np.array([0.3, 0.0, 1.0]), 6))],
                            [(bump(0.5, 2.5, 0.6), constant())], grid, t6)
    rep = linear_form(gamma, f)
    assert rep.discrepancy <= 1e-9 * (abs(rep.value_position) + 1)


def test_dual_oracle_random_scenarios(grid, t6, rng):
    for _ in range(5):
        gamma, h, g = random_scenario(rng)
        rep = linear_form(gamma, build_test_function(h, g, grid, t6))
        assert rep.discrepancy <= 1e-8 * (abs(rep.value_position) + 1)


def test_linear_form_without_provenance(grid, t6, rng):
    gamma, h, g = random_scenario(rng)
    f = build_test_function(h, g, grid, t6)
    bare = f.with_coeff(f.coeff)
    rep = linear_form(gamma, bare)
    assert rep.value_position is None and rep.value_momentum == pytest.approx(linear_form(gamma, f).value_momentum)


def test_identity_charge_gives_zero(grid, t6):
    f = build_test_function([(bump(1.0, 2.0), constant())], [], grid, t6)
    empty = make_charge()
    assert empty.is_identity
    assert linear_form(empty, f).value_momentum == 0.0


def test_weyl_phase_on_unit_circle(grid, t6, rng):
    gamma, h, g = random_scenario(rng)
    f = build_test_function(h, g, grid, t6)
    assert abs(weyl_phase(gamma, f)) == pytest.approx(1.0)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3.0, 3.0))
def test_linear_form_real_linear(seed, c):
    grid = make_grid(geometric_boundaries(1.0, 0.5, 12), 16, 128.0)
    t = AngularTruncation(4)
    rng = np.random.default_rng(seed)
    g1, h1, k1 = random_scenario(rng, 4)
    g2, h2, k2 = random_scenario(rng, 4)
    f1 = build_test_function(h1, k1, grid, t)
    f2 = build_test_function(h2, k2, grid, t)
    lhs = linear_form_momentum(g1, f1 + c * f2)[0]
    rhs = linear_form_momentum(g1, f1)[0] + c * linear_form_momentum(g1, f2)[0]
    assert lhs == pytest.approx(rhs, abs=1e-12)
    both = linear_form_momentum(g1 + g2, f1)[0]
    assert both == pytest.approx(linear_form_momentum(g1, f1)[0] + linear_form_momentum(g2, f1)[0], abs=1e-12)
    assert linear_form_position(g1 + g2, f1.provenance) == pytest.approx(
        linear_form_position(g1, f1.provenance) + linear_form_position(g2, f1.provenance), abs=1e-12
    )


def test_kappa_routes_agree(grid):
    t = AngularTruncation(4)
    h = [(bump(1.0, 2.0), constant()), (bump(0.5, 1.0, 0.3), cap(0.5, Z_AXIS, 4))]
    f = build_test_function(h, [], grid, t)
    k = kappa(h)
    # radial quadrature of int h(r) r dr by an independent fine trapezoid rule
    r = np.linspace(0.4, 2.1, 400001)
    ref = np.trapezoid(h[0][0](r) * r, r) + cap(0.5, Z_AXIS, 4).spherical_mean() * np.trapezoid(h[1][0](r) * r, r)
    assert k == pytest.approx(ref, rel=1e-9)
    assert kappa_momentum(f) == pytest.approx(k, rel=1e-6)
    assert kappa(f) == kappa(f.provenance) == k


def test_scaled_momentum_route_matches_rescaled_data(grid, t6):
    gamma = make_special_charge(1.0, 0.5, 1.0)
    h = [(bump(0.5, 1.0), cap(0.8, Z_AXIS, 6))]
    f = build_test_function(h, [], grid, t6)
    lam = 6.0
    scaled = linear_form_momentum(gamma, f, lam)[0]
    direct = coulomb_pairing(gamma.rho_parts, [(p.rescaled(lam, -2.0), a) for p, a in h])
    assert scaled == pytest.approx(direct, rel=1e-8)


def test_materialize_difference(grid, t6):
    a = make_special_charge(1.0, 1.0, 2.0)
    b = make_special_charge(1.0, 1.5, 2.5)
    d = materialize_difference(a, b, grid, t6)
    d_fine = materialize_difference(a, b, grid.with_extra_ir_shells(2), t6)
    assert np.isfinite(d.norm()) and d.norm() > 0
    assert d_fine.norm() == pytest.approx(d.norm(), rel=1e-6)
    with pytest.raises(ChargeMismatchError, match="not square integrable"):
        materialize_difference(a, make_special_charge(2.0, 1.0, 2.0), grid, t6)
