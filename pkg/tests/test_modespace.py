import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infravac.harmonics import ylm_table
from infravac.infravacuum import make_kpr_config
from infravac.modespace import (
    IR_CUTOFF,
    MOMENTUM_CONJ,
    POSITION_CONJ,
    REGULAR,
    AngularTruncation,
    GridError,
    ModeFunction,
    TruncationError,
    apply_involution,
    apply_Q,
    apply_radial_power,
    from_channels,
    geometric_boundaries,
    inner_product,
    make_grid,
    project_above,
    project_shell,
    project_top,
    random_mode_function,
    symplectic_form,
    synthesize,
    xi_norm_sq,
    zeros,
)


@pytest.fixture(scope="module")
def g6():
    return make_grid(geometric_boundaries(1.0, 0.5, 6), 12, 32.0)


@pytest.fixture(scope="module")
def t4():
    return AngularTruncation(4)


# ---------------------------------------------------------------- grid


def test_grid_layout(g6):
    assert np.all(np.diff(g6.nodes) > 0)
    assert g6.n_nodes == g6.n_panels * g6.nodes_per_shell
    for i in range(1, g6.n_shells + 1):
        om = g6.nodes[g6.shell_slice(i)]
        assert np.all((om > g6.shell_boundaries[i]) & (om < g6.shell_boundaries[i - 1]))
    assert np.all(g6.nodes[g6.top_slice] > g6.eps1)
    assert g6.nodes[-1] < g6.uv_cutoff


def test_top_panels_bounded_width(g6):
    widths = np.diff(g6.panel_edges[g6.n_shells :])
    assert widths.max() <= g6.max_panel_width + 1e-12
    assert g6.panel_edges[-1] == g6.uv_cutoff


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.0, 4.0))
def test_grid_integrates_powers(p):
    grid = make_grid(geometric_boundaries(1.0, 0.5, 8), 16, 64.0)
    lo, hi = grid.ir_cutoff, grid.uv_cutoff
    exact = np.log(hi / lo) if p == -3 else (hi ** (p + 3) - lo ** (p + 3)) / (p + 3)
    assert np.sum(grid.weights * grid.nodes**p) == pytest.approx(exact, rel=1e-12)


def test_panel_moments_exact_at_low_order():
    grid = make_grid(geometric_boundaries(1.0, 0.25, 3), 3, 8.0)
    for a, b, sl in zip(grid.panel_edges[:-1], grid.panel_edges[1:], np.split(np.arange(grid.n_nodes), grid.n_panels)):
        assert np.sum(grid.weights[sl]) == pytest.approx((b**3 - a**3) / 3, rel=1e-13)
        assert np.sum(grid.weights[sl] * grid.nodes[sl] ** -3.0) == pytest.approx(np.log(b / a), rel=1e-13)


def test_xi_norm_is_log_ratio(g6):
    for i in range(1, g6.n_shells + 1):
        b = g6.shell_boundaries
        assert xi_norm_sq(g6, i) == pytest.approx(np.log(b[i - 1] / b[i]), rel=1e-14)


@pytest.mark.parametrize(
    "bounds, kw",
    [
        ([1.0], {}),
        ([1.0, 2.0], {}),
        ([1.0, -0.5], {}),
        ([1.0, 0.5], {"nodes_per_shell": 1}),
        ([1.0, 0.5], {"uv_cutoff": 0.9}),
        ([1.0, 0.5], {"max_panel_width": 0.0}),
    ],
)
def test_make_grid_rejects(bounds, kw):
    with pytest.raises(GridError):
        make_grid(bounds, **kw)


def test_boundary_index_and_extra_shells(g6):
    assert g6.boundary_index(0.25) == 3
    with pytest.raises(GridError):
        g6.boundary_index(0.3)
    finer = g6.with_extra_ir_shells(2)
    assert finer.n_shells == g6.n_shells + 2
    assert finer.ir_cutoff == pytest.approx(g6.ir_cutoff / 4)
    assert np.allclose(finer.nodes[-g6.n_nodes :], g6.nodes)


def test_shell_slice_range(g6):
    with pytest.raises(GridError):
        g6.shell_slice(0)
    with pytest.raises(GridError):
        g6.shell_slice(g6.n_shells + 1)


# ---------------------------------------------------------------- truncation


@pytest.mark.parametrize("l_max, m_max, n", [(0, None, 1), (4, None, 25), (4, 0, 5), (4, 1, 13)])
def test_truncation_channel_count(l_max, m_max, n):
    t = AngularTruncation(l_max, m_max)
    assert t.n_channels == n
    assert np.all(t.conj_perm[t.conj_perm] == np.arange(n))
    assert all(t.channels[t.conj_perm[c]] == (l, -m) for c, (l, m) in enumerate(t.channels))


def test_truncation_rejects_negative():
    with pytest.raises(TruncationError):
        AngularTruncation(-1)


# ---------------------------------------------------------------- mode functions


def test_mode_function_shape_check(g6, t4):
    with pytest.raises(GridError):
        ModeFunction(g6, t4, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ModeFunction(g6, t4, np.zeros((t4.n_channels, g6.n_nodes)), ir_flag="bogus")


def test_incompatible_grids_rejected(g6, t4):
    u = zeros(g6, t4)
    v = zeros(g6.with_extra_ir_shells(1), t4)
    with pytest.raises(GridError):
        inner_product(u, v)
    with pytest.raises(GridError):
        u + zeros(g6, AngularTruncation(3))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_inner_product_sesquilinear(seed, a):
    g = make_grid(geometric_boundaries(1.0, 0.5, 3), 4, 4.0)
    t = AngularTruncation(2)
    rng = np.random.default_rng(seed)
    u, v, w = (random_mode_function(g, t, rng) for _ in range(3))
    assert np.isclose(inner_product(u, v), np.conj(inner_product(v, u)), rtol=1e-12)
    assert np.isclose(inner_product(u, a * v + w), a * inner_product(u, v) + inner_product(u, w), rtol=1e-10)
    assert np.isclose(inner_product(a * u, v), np.conj(a) * inner_product(u, v), rtol=1e-10)
    assert inner_product(u, u).real == pytest.approx(u.norm() ** 2)
    assert symplectic_form(u, v) == pytest.approx(-symplectic_form(v, u))


@pytest.mark.parametrize("kind", [POSITION_CONJ, MOMENTUM_CONJ])
def test_involution_antiunitary(g6, t4, rng, kind):
    u, v = random_mode_function(g6, t4, rng), random_mode_function(g6, t4, rng)
    gu, gv = apply_involution(kind, u), apply_involution(kind, v)
    assert np.allclose(apply_involution(kind, gu).coeff, u.coeff)
    assert np.isclose(inner_product(gu, gv), np.conj(inner_product(u, v)), rtol=1e-12)


def test_involutions_pointwise(g6, t4, rng):
    # position_conj: conj(u(-k)); momentum_conj: conj(u(k)), checked by synthesis
    u = random_mode_function(g6, t4, rng)
    dirs = rng.normal(size=(7, 3))
    j = 5
    pos = synthesize(apply_involution(POSITION_CONJ, u), j, dirs)
    mom = synthesize(apply_involution(MOMENTUM_CONJ, u), j, dirs)
    assert np.allclose(pos, np.conj(synthesize(u, j, -dirs)), atol=1e-12)
    assert np.allclose(mom, np.conj(synthesize(u, j, dirs)), atol=1e-12)


def test_synthesize_matches_ylm(g6, t4):
    u = from_channels(g6, t4, {(2, -1): np.ones(g6.n_nodes)})
    d = np.array([[0.3, -0.2, 0.9]])
    th = np.arccos(0.9 / np.linalg.norm(d))
    ph = np.arctan2(-0.2, 0.3)
    assert np.allclose(synthesize(u, 0, d), ylm_table([2], [-1], [th], [ph])[0])


def test_radial_power_roundtrip_and_flags(g6, t4, rng):
    u = random_mode_function(g6, t4, rng)
    back = apply_radial_power(0.7, apply_radial_power(-0.7, u))
    assert np.allclose(back.coeff, u.coeff)
    assert apply_radial_power(-1.0, u).ir_flag == IR_CUTOFF
    assert apply_radial_power(-1.0, project_above(g6.shell_boundaries[-2], u)).ir_flag == REGULAR


def test_regularised_power_constant_above_eps1(g6, t4):
    one = from_channels(g6, t4, {(0, 0): np.ones(g6.n_nodes)})
    r = apply_radial_power(0.5, one, regularized=True).channel(0)
    top = g6.nodes >= g6.eps1
    assert np.allclose(r[top], 1.0)
    assert np.allclose(r[~top], g6.nodes[~top] ** 0.5)


def test_projections(g6, t4, rng):
    u = random_mode_function(g6, t4, rng)
    eps = g6.shell_boundaries[2]
    p = project_above(eps, u)
    assert np.allclose(project_above(eps, p).coeff, p.coeff)
    v = random_mode_function(g6, t4, rng)
    assert np.isclose(inner_product(p, v), inner_product(u, project_above(eps, v)))
    with pytest.raises(GridError):
        project_above(0.3, u)
    total = project_top(u)
    for i in range(1, g6.n_shells + 1):
        total = total + project_shell(i, u)
    assert np.allclose(total.coeff, u.coeff)


def test_white_noise_spreads_over_shells(rng):
    grid = make_grid(geometric_boundaries(1.0, 0.5, 12), 16, 32.0)
    t = AngularTruncation(3)
    u = random_mode_function(grid, t, rng)
    a2 = np.sum(np.abs(u.coeff) ** 2, axis=0) * grid.weights
    per_shell = np.array([a2[grid.shell_slice(i)].mean() for i in range(1, 13)])
    assert per_shell.max() / per_shell.min() < 2.0


def test_random_mode_function_above(g6, t4, rng):
    u = random_mode_function(g6, t4, rng, above=g6.shell_boundaries[3])
    assert np.all(u.coeff[:, g6.nodes < g6.shell_boundaries[3]] == 0)


def test_apply_Q_is_projection_without_monopole(g6, rng):
    cfg = make_kpr_config(n_shells=6)
    t = AngularTruncation(6)
    u = random_mode_function(g6, t, rng)
    for i in (1, 4, 6):
        q = apply_Q(i, u, cfg)
        assert np.allclose(apply_Q(i, q, cfg).coeff, q.coeff, atol=1e-12 * u.norm())
        assert np.all(q.coeff[t.ls == 0] == 0)
        assert np.all(q.coeff[t.ls > cfg.max_l(i)] == 0)
        v = random_mode_function(g6, t, rng)
        assert np.isclose(inner_product(q, v), inner_product(u, apply_Q(i, v, cfg)))


def test_apply_Q_errors(g6, rng):
    cfg = make_kpr_config(n_shells=6)
    with pytest.raises(TruncationError):
        apply_Q(6, random_mode_function(g6, AngularTruncation(2), rng), cfg)
    shifted = make_grid(geometric_boundaries(0.9, 0.5, 6), 12, 32.0)
    with pytest.raises(GridError):
        apply_Q(1, random_mode_function(shifted, AngularTruncation(6), rng), cfg)
