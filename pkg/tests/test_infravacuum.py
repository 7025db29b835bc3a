import numpy as np
import pytest

from infravac.infravacuum import (
    KprConfigError,
    apply_T,
    apply_T1,
    apply_T2,
    gamma_split,
    make_kpr_config,
    mean_energy_bound,
    power_iteration_norm,
    state_value,
    symplectic_check,
    t2_amplification,
    t2_regularized_bound,
)
from infravac.modespace import (
    MOMENTUM_CONJ,
    POSITION_CONJ,
    AngularTruncation,
    GridError,
    ModeFunction,
    TruncationError,
    apply_involution,
    from_channels,
    inner_product,
    make_grid,
    random_mode_function,
)


@pytest.fixture(scope="module")
def tiny():
    cfg = make_kpr_config(n_shells=10, l_cap=2)
    return cfg, make_grid(cfg.shell_boundaries, 3, 2.0), AngularTruncation(2)


# ---------------------------------------------------------------- configuration


@pytest.mark.parametrize(
    "kw",
    [
        {"q_ratio": 1.0},
        {"q_ratio": 0.0},
        {"n_shells": 0},
        {"n_shells": 2.5},
        {"b_scale": 1.0},
        {"b_alpha": 0.0},
        {"involution": "bogus"},
        {"l_rule": "x"},
        {"l_rule": "0"},
    ],
)
def test_config_rejects_bad_parameters(kw):
    with pytest.raises(KprConfigError):
        make_kpr_config(**kw)


@pytest.mark.parametrize("alpha", [0.4, 0.5])
def test_slow_b_decay_rejected_with_report(alpha):
    with pytest.raises(KprConfigError, match="diverges") as exc:
        make_kpr_config(b_alpha=alpha)
    assert exc.value.report is not None
    assert exc.value.report.kpr_raabe[-1] <= 1.0 + 1e-9


def test_default_summability():
    rep = make_kpr_config().summability
    assert rep.ok
    assert rep.energy_ratio_index == 5
    assert np.all(np.diff(rep.energy_terms[4:]) < 0)
    # last ratio: q (rk_20 / rk_19) (b_19 / b_20)^2
    assert rep.energy_ratios[-1] == pytest.approx(0.5 * (440 / 399) * (20 / 19) ** 2, rel=1e-12)


@pytest.mark.parametrize("alpha", [0.75, 1.0, 2.0])
def test_raabe_value_tends_to_two_alpha(alpha):
    rep = make_kpr_config(b_alpha=alpha, n_shells=400, l_rule="1").summability
    assert rep.kpr_raabe[-1] == pytest.approx(2 * alpha, rel=5e-3)


def test_ranks_follow_l_rule():
    cfg = make_kpr_config(n_shells=10)
    assert list(cfg.ranks[:3]) == [3, 8, 15]
    assert make_kpr_config(n_shells=10, l_rule="2").ranks.tolist() == [8] * 10
    assert make_kpr_config(n_shells=10, l_cap=2).max_l(7) == 2
    assert cfg.required_l_max == 10


# ---------------------------------------------------------------- operators


def test_inverse_pair(grid, trunc8, kpr, rng):
    u = random_mode_function(grid, trunc8, rng)
    assert (apply_T1(apply_T2(u, kpr), kpr) - u).norm() <= 1e-12 * u.norm()
    assert (apply_T2(apply_T1(u, kpr), kpr) - u).norm() <= 1e-12 * u.norm()


def test_t1_is_a_contraction_of_norm_one(grid, trunc8, kpr, rng):
    u0 = random_mode_function(grid, trunc8, rng)
    n = power_iteration_norm(lambda v: apply_T1(apply_T1(v, kpr), kpr), u0, iters=400)
    assert np.sqrt(n) == pytest.approx(1.0, abs=1e-10)


def test_t1_t2_self_adjoint(grid, trunc8, kpr, rng):
    u, v = random_mode_function(grid, trunc8, rng), random_mode_function(grid, trunc8, rng)
    assert np.isclose(inner_product(apply_T2(u, kpr), v), inner_product(u, apply_T2(v, kpr)), rtol=1e-12)


def test_t2_norm_grows_with_shell_count(grid, trunc8, kpr, rng):
    u0 = random_mode_function(grid, trunc8, rng)
    norms = [np.sqrt(power_iteration_norm(lambda v, n=n: apply_T2(apply_T2(v, kpr, n), kpr, n), u0, iters=300))
             for n in (2, 4, 8, 16)]
    assert np.all(np.diff(norms) > 0)
    assert norms == pytest.approx([t2_amplification(kpr, n) for n in (2, 4, 8, 16)], rel=1e-6)


def test_shell_operator_acts_on_xi_ray_only(grid, trunc8, kpr):
    # a channel profile orthogonal to xi_i on shell i is untouched
    i = 3
    sl = grid.shell_slice(i)
    om = grid.nodes[sl]
    xi = om**-1.5
    w = grid.weights[sl]
    prof = np.zeros(grid.n_nodes)
    prof[sl] = om - xi * np.sum(w * xi * om) / np.sum(w * xi * xi)
    u = from_channels(grid, trunc8, {(1, 0): prof})
    assert np.allclose(apply_T1(u, kpr).coeff, u.coeff, atol=1e-14)
    ray = np.zeros(grid.n_nodes)
    ray[sl] = xi
    r = from_channels(grid, trunc8, {(1, 0): ray})
    assert np.allclose(apply_T1(r, kpr).coeff, kpr.b[i - 1] * r.coeff)


def test_gamma_split(grid, trunc8, rng):
    u = random_mode_function(grid, trunc8, rng)
    for kind in (POSITION_CONJ, MOMENTUM_CONJ):
        even, odd = gamma_split(u, kind)
        assert np.allclose((even + odd).coeff, u.coeff)
        assert np.allclose(apply_involution(kind, even).coeff, even.coeff)
        assert np.allclose(apply_involution(kind, odd).coeff, -odd.coeff)


@pytest.mark.parametrize("kind", [POSITION_CONJ, MOMENTUM_CONJ])
def test_T_commutes_with_involution(grid, trunc8, rng, kind):
    # T G = G T^{-1}-type relation: G T2 G = T2 on even parts, so G T u = T2 u+ - T1 u-
    cfg = make_kpr_config(l_cap=8, involution=kind)
    u = random_mode_function(grid, trunc8, rng)
    even, odd = gamma_split(u, kind)
    gt = apply_involution(kind, apply_T(u, cfg))
    assert np.allclose(gt.coeff, (apply_T2(even, cfg) - apply_T1(odd, cfg)).coeff, atol=1e-10 * u.norm())


def test_T_fixes_rotation_invariant_data(grid, trunc8, kpr, rng):
    c = rng.standard_normal(grid.n_nodes) + 1j * rng.standard_normal(grid.n_nodes)
    u = from_channels(grid, trunc8, {(0, 0): c})
    assert np.array_equal(apply_T(u, kpr).coeff, u.coeff)


def test_finite_rank_truncations_converge(grid, trunc8, kpr, rng):
    # T_n f -> T f for data supported away from the infrared: the increments vanish past the support
    u = random_mode_function(grid, trunc8, rng, above=kpr.shell_boundaries[8])
    full = apply_T(u, kpr)
    diffs = [(apply_T(u, kpr, n) - full).norm() for n in (2, 4, 6, 8)]
    assert diffs[0] > diffs[1] > diffs[2] > 0
    assert diffs[3] == 0.0


def test_truncation_and_grid_errors(grid, kpr, rng):
    u = random_mode_function(grid, AngularTruncation(3), rng)
    with pytest.raises(TruncationError):
        apply_T(u, kpr)
    shifted = make_grid(kpr.shell_boundaries * 0.9, 8, 32.0)
    with pytest.raises(GridError):
        apply_T1(random_mode_function(shifted, AngularTruncation(8), rng), kpr)


# ---------------------------------------------------------------- symplecticity


def test_symplectic_random_pairs(grid, trunc8, kpr, rng):
    rep = symplectic_check(kpr, grid, trunc8, 20, rng)
    assert rep.sigma_residual <= 1e-10 and rep.pair_residual <= 1e-10


def test_symplectic_fault_injection(grid, trunc8, kpr, rng):
    bad = kpr.b.copy()
    bad[2] *= 1.01
    rep = symplectic_check(kpr, grid, trunc8, 10, rng, b_override=bad)
    assert rep.sigma_residual > 1e-6 and rep.pair_residual > 1e-6


def test_symplectic_dense_matrix(tiny):
    # real matrix M of T on a small grid: M^T Omega M = Omega with Omega the matrix of Im<,>
    cfg, grid, trunc = tiny
    shape = (trunc.n_channels, grid.n_nodes)
    n = shape[0] * shape[1]
    basis = []
    for k in range(n):
        e = np.zeros(n, complex)
        e[k] = 1.0
        basis.append(e)
        basis.append(1j * e)

    def vec(u):
        return np.concatenate([u.coeff.real.ravel(), u.coeff.imag.ravel()])

    M = np.stack([vec(apply_T(ModeFunction(grid, trunc, b.reshape(shape)), cfg)) for b in basis], axis=1)
    E = np.stack([vec(ModeFunction(grid, trunc, b.reshape(shape))) for b in basis], axis=1)
    w = np.tile(grid.weights, shape[0])
    W = np.diag(w)
    Z = np.zeros_like(W)
    # Im<u,v> = sum w (Re u Im v - Im u Re v)
    omega = np.block([[Z, W], [-W, Z]])
    lhs = M.T @ omega @ M
    rhs = E.T @ omega @ E
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(rhs))
    # the inverse-pair matrices are not orthogonal, so T is not unitary
    G = np.block([[W, Z], [Z, W]])
    assert np.max(np.abs(M.T @ G @ M - E.T @ G @ E)) > 1e-2 * np.max(w)


# ---------------------------------------------------------------- energy and states


def test_mean_energy_bound_shells():
    r20, r40 = mean_energy_bound(make_kpr_config(n_shells=20)), mean_energy_bound(make_kpr_config(n_shells=40))
    assert r20.decreasing_from == r40.decreasing_from == 5
    assert np.allclose(r40.partial_sums[:20], r20.partial_sums)
    assert r40.total == pytest.approx(r20.extrapolated_total, rel=0.05)
    assert r40.extrapolated_total == pytest.approx(r40.total, rel=1e-4)


def test_t2_regularized_bound(grid, trunc8, kpr, rng):
    rep = t2_regularized_bound(kpr, grid, trunc8, rng, n_samples=5, iters=100)
    assert rep.ok
    assert rep.power_iteration > 1.0


def test_state_value_rotation_invariant_exact(grid, trunc8, kpr, rng):
    c = rng.standard_normal(grid.n_nodes) * np.exp(-grid.nodes)
    f = from_channels(grid, trunc8, {(0, 0): c})
    rep = state_value(kpr, f)
    assert rep.state_value == rep.vacuum_value
    assert rep.Tf_norm == rep.f_norm


def test_state_value_differs_off_l0(grid, trunc8, kpr):
    prof = np.zeros(grid.n_nodes)
    prof[grid.shell_slice(4)] = 0.1 * grid.nodes[grid.shell_slice(4)] ** -1.5
    f = from_channels(grid, trunc8, {(2, 0): 1j * prof})
    rep = state_value(kpr, f)
    assert rep.state_value != pytest.approx(rep.vacuum_value)
