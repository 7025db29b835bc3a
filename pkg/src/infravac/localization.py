"""Charge detection at infinity and cone-localised intertwiners.

Two diagnostics live here.  The dilation limit evaluates l_gamma(f_lam)
for growing lam and compares with q kappa_f.  The cone pipeline builds
u^C (the Fourier transform of -Laplacian(Phi chi^C)), the sequence
v_n = i w^{-3/2} P_{eps_n} u^C, its T-images and the phase identity
Im<v_T, T f> = -l_gamma(f) for test functions supported off the cone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .charges import kappa, kappa_momentum, linear_form, linear_form_momentum, linear_form_position
from .charges import make_special_charge, materialize_difference
from .harmonics import spherical_jn_integral_inv_x
from .infravacuum import KprConfig, apply_T
from .modespace import (
    POSITION_CONJ,
    AngularTruncation,
    ModeFunction,
    REGULAR,
    apply_involution,
    apply_radial_power,
    check_aligned,
    inner_product,
    make_grid,
)
from .transforms import (
    AngularFunction,
    DilationRangeError,
    TestFunctionData,
    Z_AXIS,
    _unit,
    angular_bump_coefficients,
    bump_shape,
    build_test_function,
    constant,
    dilate,
    dilation_loss,
    laplacian_radial,
    potential_over_r2_plateau,
    potential_over_r2_transform_orders,
    sbt_orders,
)


class SupportError(ValueError):
    """Test function support meets the cone."""


# --------------------------------------------------------------------------
# dilation limit
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DilationLimitReport:
    lambdas: np.ndarray
    values_momentum: np.ndarray
    values_resampled: np.ndarray
    values_position: np.ndarray
    norms: np.ndarray
    q: float
    kappa: float
    kappa_momentum: float
    target: float
    errors: np.ndarray
    extrapolated: float
    fitted_exponent: float
    fit_points: int
    phase: complex

    @property
    def relative_error_last(self):
        scale = abs(self.target) if self.target != 0 else 1.0
        return float(abs(self.values_momentum[-1] - self.target) / scale)


def _power_fit(x, y):
    """Exponent p of |y| ~ C x^{-p} by least squares in log-log."""
    x, y = np.asarray(x, float), np.abs(np.asarray(y, float))
    keep = y > 0
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(-slope)


def dilation_limit(gamma, f, lambdas, fit_from=None, ir_tol=1e-6):
    """l_gamma(f_lam) along ``lambdas`` against the limit q kappa_f.

    Three evaluations per lam: momentum quadrature with rho^(k/lam) against
    the undilated f, momentum quadrature against the resampled f_lam, and
    the position-space oracle on rescaled generating data.  The error
    exponent is fitted on lam >= ``fit_from`` (default: the upper half of
    the schedule).
    """
    lam = np.asarray(lambdas, float)
    if np.any(np.diff(lam) <= 0) or np.any(lam <= 0):
        raise ValueError("lambda schedule must be positive and increasing")
    for x in lam:
        loss = dilation_loss(f, x)
        if x > 1 and loss > ir_tol:
            raise DilationRangeError(
                f"lambda={x} exceeds the infrared reach of the grid (lost weight {loss:.2e}); "
                f"lower the infrared cutoff below {f.grid.ir_cutoff / x:.3e}"
            )
    vm, vr, vp, nr = [], [], [], []
    for x in lam:
        vm.append(linear_form_momentum(gamma, f, x)[0])
        fl = dilate(f, x, ir_tol=ir_tol)
        rep = linear_form(gamma, fl)
        vr.append(rep.value_momentum)
        vp.append(np.nan if rep.value_position is None else rep.value_position)
        nr.append(fl.norm())
    vm, vr, vp = np.array(vm), np.array(vr), np.array(vp)
    kap = kappa(f.provenance) if isinstance(f.provenance, TestFunctionData) else kappa_momentum(f)
    kap_m = kappa_momentum(f)
    target = gamma.q * kap
    err = vm - target
    start = fit_from if fit_from is not None else lam[len(lam) // 2]
    sel = lam >= start
    p = _power_fit(lam[sel], err[sel])
    # Richardson with the fitted exponent (2 if the fit is unusable)
    pe = p if np.isfinite(p) and p > 0 else 2.0
    l1, l2 = lam[-2], lam[-1]
    extra = float((l2**pe * vm[-1] - l1**pe * vm[-2]) / (l2**pe - l1**pe))
    return DilationLimitReport(
        lam, vm, vr, vp, np.array(nr), gamma.q, kap, kap_m, target, err, extra, p, int(sel.sum()),
        complex(np.exp(1j * target)),
    )


def rescale_for_phase(f_parts, q_gap, phase=np.pi):
    """Factor c such that q_gap * kappa(c h) equals ``phase``."""
    return float(phase / (q_gap * kappa(f_parts)))


# --------------------------------------------------------------------------
# cone geometry and cutoff
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConeSpec:
    axis: np.ndarray = field(default_factory=lambda: Z_AXIS.copy())
    half_angle: float = np.pi / 6

    def __post_init__(self):
        if not 0 < self.half_angle < np.pi / 2:
            raise ValueError("cone half-angle must lie in (0, pi/2)")
        object.__setattr__(self, "axis", _unit(self.axis))

    def contains_direction(self, d):
        d = _unit(d)
        return bool(np.arccos(np.clip(d @ self.axis, -1, 1)) < self.half_angle)


def make_cone_cutoff(cone, bump_sharpness=1.0, l_max=64):
    """chi = 1 - A psi(theta/theta0) with zero spherical mean.

    ``A = 2 / int_0^theta0 psi sin(theta) d theta``.  The Legendre
    coefficient a_0 is set to exactly zero; the residual it replaced is
    kept in ``meta['a0_residual']``.
    """
    th0 = cone.half_angle
    b, integral = angular_bump_coefficients(th0, l_max, bump_sharpness, panels=128)
    A = 2.0 / integral
    a = -A * b
    a[0] += 1.0
    residual = float(a[0])
    a[0] = 0.0
    return AngularFunction(
        a,
        cone.axis,
        support_half_angle=float(th0),
        exterior_value=1.0,
        meta={"kind": "cone_cutoff", "A": A, "sharpness": bump_sharpness, "a0_residual": residual},
        exact=lambda th: 1.0 - A * bump_shape(th / th0, bump_sharpness),
    )


# --------------------------------------------------------------------------
# u^C and its small-k structure
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SmallKSplit:
    """u^C(k) = eta(k/|k|) + R(k) with R(0) = 0, channel by channel.

    ``plateau`` holds the closed-form k -> 0 limits; ``extrapolated`` the
    linear extrapolation from the two lowest nodes.  ``u00_slope`` is
    |u_00(k_min)| / k_min.
    """

    plateau: np.ndarray
    extrapolated: np.ndarray
    u00_slope: float
    y00_overlap: complex
    eta_norm: float

    def eta_legendre(self, trunc):
        """Legendre coefficients of eta about the z axis (m = 0 channels)."""
        out = np.zeros(trunc.l_max + 1, complex)
        for c, (l, m) in enumerate(trunc.channels):
            if m == 0:
                out[l] = self.plateau[c] / np.sqrt(4 * np.pi / (2 * l + 1))
        return out


@dataclass(eq=False)
class ConePipeline:
    cone: ConeSpec
    chi: AngularFunction
    phi: object
    gamma: object
    grid: object
    trunc: AngularTruncation
    u_c: ModeFunction
    eta: SmallKSplit
    control: bool = False
    _t_cache: dict = field(default_factory=dict, repr=False)

    def v(self, n=None):
        """v_n = i w^{-3/2} P_{eps_n} u^C (n=None keeps every grid shell)."""
        w = apply_radial_power(-1.5, 1j * self.u_c)
        if n is None:
            return w
        return _above_index(w, n)

    def t_image(self, config):
        """T applied to i w^{-3/2} u^C on the whole grid; T commutes with P_eps."""
        key = id(config)
        if key not in self._t_cache:
            self._t_cache[key] = (config, apply_T(self.v(), config))
        return self._t_cache[key][1]


def _above_index(u, n):
    """P_{eps_n} for 1 <= n <= n_shells + 1 (n = n_shells + 1 keeps every shell)."""
    grid = u.grid
    if not 1 <= n <= grid.n_shells + 1:
        raise ValueError(f"n={n} outside 1..{grid.n_shells + 1}")
    keep = grid.nodes > grid.shell_boundaries[n - 1] if n <= grid.n_shells else np.ones(grid.n_nodes, bool)
    return u.with_coeff(u.coeff * keep)


def cone_truncation(cone, l_max):
    """Axisymmetric (m = 0) truncation when the cone axis is z, full otherwise."""
    on_z = np.allclose(cone.axis, Z_AXIS)
    return AngularTruncation(l_max, 0 if on_z else None)


def build_u_c(cone, q, r1, r2, grid, l_max=64, bump_sharpness=1.0, control=False, trunc=None):
    """Assemble u^C channelwise from rho chi_l and l(l+1) Phi/r^2 chi_l.

    ``control=True`` replaces chi by the constant 1, which violates the
    zero-mean condition on purpose.
    """
    gamma = make_special_charge(q, r1, r2)
    phi = gamma.phi
    rho = gamma.rho_parts[0][0]
    chi = constant(1.0, cone.axis) if control else make_cone_cutoff(cone, bump_sharpness, l_max)
    trunc = trunc or cone_truncation(cone, l_max)
    yc = chi.ylm_coefficients(trunc)
    coeff = np.zeros((trunc.n_channels, grid.n_nodes), complex)
    plateau = np.zeros(trunc.n_channels, complex)
    top = min(l_max, chi.l_max, trunc.l_max)
    ls = np.arange(top + 1)
    radial = sbt_orders(rho, top, grid)
    if top >= 1:
        radial = radial + (ls * (ls + 1))[:, None] * potential_over_r2_transform_orders(phi, top, grid)
    limits = np.zeros(top + 1, complex)
    limits[0] = np.sqrt(2 / np.pi) * gamma.q / (4 * np.pi)
    for l in range(1, top + 1):
        limits[l] = l * (l + 1) * potential_over_r2_plateau(phi, l)
    live = np.nonzero((yc != 0) & (trunc.ls <= top))[0]
    coeff[live] = yc[live, None] * radial[trunc.ls[live]]
    plateau[live] = yc[live] * limits[trunc.ls[live]]
    u = ModeFunction(grid, trunc, coeff, REGULAR, ("u_c", cone, q, r1, r2, control))
    k0, k1 = grid.nodes[0], grid.nodes[1]
    extrap = (k1 * coeff[:, 0] - k0 * coeff[:, 1]) / (k1 - k0)
    c00 = trunc.index.get((0, 0))
    slope = 0.0 if c00 is None else float(abs(coeff[c00, 0]) / k0)
    y00 = 0j if c00 is None else complex(plateau[c00])
    split = SmallKSplit(plateau, extrap, slope, y00, float(np.linalg.norm(plateau)))
    return ConePipeline(cone, chi, phi, gamma, grid, trunc, u, split, control)


# --------------------------------------------------------------------------
# the sequence T v_n and its convergence verdict
# --------------------------------------------------------------------------

CAUCHY = "cauchy"
DIVERGENT = "divergent"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class VerdictRules:
    """Thresholds of the finite-stage convergence verdict.

    cauchy: the increments over the last two full octaves decrease, the
    increment two octaves before the last exceeds the last one by
    ``min_decrease``, the per-shell contributions decay like i^{-p} with
    p >= 1 + ``p_margin``, and the extrapolated tail is at most
    ``tail_tol`` of the norm.  divergent: increments do not decrease over
    the last two octaves, or p <= 1.  Anything else is inconclusive.
    """

    min_decrease: float = 1.5
    p_margin: float = 0.25
    tail_tol: float = 0.5


@dataclass(frozen=True)
class ConvergenceReport:
    schedule: np.ndarray
    increments: np.ndarray
    norms: np.ndarray
    shell_sq: np.ndarray
    top_sq: float
    verdict: str
    decay_exponent: float
    decay_prefactor: float
    tail_estimate: float
    growth_slope: float
    majorant: np.ndarray | None
    c_n: float | None
    rules: VerdictRules

    @property
    def majorised(self):
        if self.majorant is None:
            return None
        return bool(np.all(self.increments <= self.majorant))


def dyadic_schedule(n_max):
    s = [1]
    while 2 * s[-1] <= n_max:
        s.append(2 * s[-1])
    if s[-1] != n_max:
        s.append(n_max)
    return np.array(s)


def convergence_verdict(schedule, increments, shell_sq, top_sq, rules=VerdictRules()):
    """Verdict plus fitted decay model d_i ~ C i^{-p} over the last octave."""
    schedule = np.asarray(schedule)
    full = [k for k in range(len(increments)) if schedule[k + 1] == 2 * schedule[k]]
    n = len(shell_sq)
    i = np.arange(1, n + 1)
    lo = max(1, n // 2)
    sel = (i >= lo) & (shell_sq > 0)
    if sel.sum() >= 2:
        slope, icpt = np.polyfit(np.log(i[sel]), np.log(shell_sq[sel]), 1)
        p, C = float(-slope), float(np.exp(icpt))
    else:
        p, C = float("inf"), 0.0
    norm_sq = top_sq + float(np.sum(shell_sq))
    if np.isfinite(p) and p > 1:
        tail = C * n ** (1 - p) / (p - 1)
    elif np.isinf(p):
        tail = 0.0
    else:
        tail = float("inf")
    tail_rel = float(np.sqrt(tail / norm_sq)) if norm_sq > 0 else 0.0
    if len(full) >= 3:
        a, b, c = (increments[k] for k in full[-3:])
        decreasing = a > b > c
        nondecreasing = c >= b
        strong = a >= rules.min_decrease * c
    elif len(full) >= 2:
        b, c = (increments[k] for k in full[-2:])
        decreasing = b > c
        nondecreasing = c >= b
        strong = b >= rules.min_decrease * c
    else:
        decreasing = strong = False
        nondecreasing = False
    if norm_sq == 0 or np.all(np.asarray(increments) == 0):
        verdict = CAUCHY
    elif nondecreasing or p <= 1:
        verdict = DIVERGENT
    elif decreasing and strong and p >= 1 + rules.p_margin and tail_rel <= rules.tail_tol:
        verdict = CAUCHY
    else:
        verdict = INCONCLUSIVE
    return verdict, p, C, tail_rel


def _shell_norms_sq(u):
    grid = u.grid
    a2 = np.sum(np.abs(u.coeff) ** 2, axis=0) * grid.weights
    shells = np.array([a2[grid.shell_slice(i)].sum() for i in range(1, grid.n_shells + 1)])
    return shells, float(a2[grid.top_slice].sum())


def increment_majorant(pipeline, config, schedule, order=4):
    """Increment bound sqrt(sum ln(eps_i/eps_i+1) (c_N i^{-N} + b_i^2 |eta|^2)) per dyadic step.

    c_N = max_i i^N |(1 - Q~_i) eta|^2 over the shells of the schedule, with
    eta the measured plateau values.
    """
    eta2 = np.abs(pipeline.eta.plateau) ** 2
    ls = pipeline.trunc.ls
    n = int(schedule[-1]) - 1
    eps = config.shell_boundaries
    outside = np.array([eta2[(ls > config.max_l(i)) | (ls == 0)].sum() for i in range(1, n + 1)])
    i = np.arange(1, n + 1)
    c_n = float(np.max(i**order * outside)) if n else 0.0
    per = np.log(eps[:n] / eps[1 : n + 1]) * (c_n * i ** (-float(order)) + config.b[:n] ** 2 * eta2.sum())
    bounds = np.array([np.sqrt(per[a - 1 : b - 1].sum()) for a, b in zip(schedule[:-1], schedule[1:])])
    return bounds, c_n


def intertwiner_sequence(pipeline, config, n_max=None, rules=VerdictRules(), with_majorant=True):
    """Dyadic increments |T v_m - T v_n| and the convergence verdict.

    Refuses configurations that are not KPR-like: l = 0 in some Q_i, or a
    failed summability test.
    """
    if not isinstance(config, KprConfig):
        raise TypeError("config must be a KprConfig")
    if config.summability is not None and not config.summability.kpr_converges:
        raise ValueError("configuration is not KPR-like: b_i^2 ln(eps_i/eps_i+1) is not summable")
    check_aligned(pipeline.grid, config)
    grid = pipeline.grid
    n_max = n_max or grid.n_shells + 1
    if n_max > grid.n_shells + 1:
        raise ValueError(f"grid has only {grid.n_shells} shells; n_max <= {grid.n_shells + 1}")
    y = pipeline.t_image(config)
    shells, top = _shell_norms_sq(y)
    shells = shells[: n_max - 1]
    sched = dyadic_schedule(n_max)
    incs = np.array([np.sqrt(shells[a - 1 : b - 1].sum()) for a, b in zip(sched[:-1], sched[1:])])
    norms = np.sqrt(top + np.concatenate([[0.0], np.cumsum(shells)]))
    verdict, p, C, tail = convergence_verdict(sched, incs, shells, top, rules)
    n = np.arange(1, len(norms) + 1)
    lo = max(2, len(n) // 4)
    growth = float(np.polyfit(n[lo - 1 :], norms[lo - 1 :] ** 2, 1)[0]) if len(n) > lo else float("nan")
    maj, c_n = (increment_majorant(pipeline, config, sched) if with_majorant and not pipeline.control else (None, None))
    return ConvergenceReport(sched, incs, norms, shells, top, verdict, p, C, tail, growth, maj, c_n, rules)


def v_T(pipeline, config, n=None):
    """T v_n on the grid (n=None uses every shell)."""
    y = pipeline.t_image(config)
    return y if n is None else _above_index(y, n)


# --------------------------------------------------------------------------
# the phase identity
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IntertwinerReport:
    l_gamma: float
    l_gamma_momentum: float
    t_pairing: float
    residual: float
    relative_residual: float
    direct_sequence: np.ndarray
    direct_residual: float
    direct_relative: float
    transport_residual: float
    phase: complex


def _check_probe_support(f, cone):
    data = f.provenance
    if not isinstance(data, TestFunctionData):
        raise SupportError("test function carries no generating data; support cannot be checked")
    for _, ang in data.h_parts + data.g_parts:
        if ang.support_half_angle is None:
            raise SupportError("test function has full angular support and meets the cone")
        sep = np.arccos(np.clip(cone.axis @ ang.axis, -1.0, 1.0))
        if sep <= ang.support_half_angle + cone.half_angle:
            raise SupportError(
                f"probe support (axis at {np.degrees(sep):.1f} deg, half-angle "
                f"{np.degrees(ang.support_half_angle):.1f} deg) meets the cone"
            )


def intertwiner_check(pipeline, config, f, require_outside=True):
    """Residual |Im<v_T, T f> + l_gamma(f)| and the direct limit without T.

    ``direct_sequence[n-1]`` is -Im<v_n, f> for n = 1 .. n_shells + 1.
    ``transport_residual`` is max_n |Im<T v_n, T f> - Im<v_n, f>|.
    """
    if require_outside:
        _check_probe_support(f, pipeline.cone)
    rep = linear_form(pipeline.gamma, f)
    lg = rep.value_position if rep.value_position is not None else rep.value_momentum
    tf = apply_T(f, config)
    y = pipeline.t_image(config)
    t_pair = inner_product(y, tf).imag
    w = pipeline.v()
    grid = pipeline.grid
    # per-node contributions to Im<w, f> and Im<T w, T f>, accumulated from the top down
    contrib = np.imag(np.sum(np.conj(w.coeff) * f.coeff, axis=0) * grid.weights)
    tcontrib = np.imag(np.sum(np.conj(y.coeff) * tf.coeff, axis=0) * grid.weights)
    top = contrib[grid.top_slice].sum()
    ttop = tcontrib[grid.top_slice].sum()
    seq, tseq = [top], [ttop]
    for i in range(1, grid.n_shells + 1):
        sl = grid.shell_slice(i)
        seq.append(seq[-1] + contrib[sl].sum())
        tseq.append(tseq[-1] + tcontrib[sl].sum())
    seq, tseq = np.array(seq), np.array(tseq)
    direct = -seq
    scale = abs(lg) if lg != 0 else 1.0
    res = abs(t_pair + lg)
    return IntertwinerReport(
        float(lg), float(rep.value_momentum), float(t_pair), float(res), float(res / scale),
        direct, float(abs(direct[-1] - lg)), float(abs(direct[-1] - lg) / scale),
        float(np.max(np.abs(tseq - seq))), complex(np.exp(1j * lg)),
    )


def opposite_cone_probe(cone, grid, trunc, r_lo=2.5, r_hi=5.0, half_angle=2 * np.pi / 3, amplitude=1.0,
                        g_amplitude=0.0):
    """Test function h (and optionally g) = radial bump x angular cap around -axis."""
    from .transforms import bump, cap

    ang = cap(half_angle, -cone.axis, trunc.l_max)
    h = [(bump(r_lo, r_hi, amplitude), ang)]
    g = [(bump(r_lo, r_hi, g_amplitude), ang)] if g_amplitude else []
    return build_test_function(h, g, grid, trunc, exclude_cone=(cone.axis, cone.half_angle))


# --------------------------------------------------------------------------
# sector equivalence
# --------------------------------------------------------------------------

EQUIVALENT = "equivalent"
INEQUIVALENT = "inequivalent"


@dataclass(frozen=True)
class SectorReport:
    verdict: str
    q1: float
    q2: float
    witness_norm: float | None = None
    witness_norm_refined: float | None = None
    ir_drift: float | None = None
    t_fixes_witness: float | None = None
    probe_scale: float | None = None
    kappa: float | None = None
    phase_gap: float | None = None
    phase_gap_dilated: float | None = None
    t_fixes_probe: float | None = None


def sector_equiv_test(config, gamma1, gamma2, probe_profile, grid, trunc, lambdas=(1.0, 4.0, 16.0, 64.0),
                      tol=1e-8):
    """Witness of equivalence (equal charges) or inequivalence (unequal charges).

    Equal charges: the charge-neutral difference and its T-image norm,
    recomputed with one more infrared shell.  Unequal charges: a
    rotation-invariant probe rescaled so that (q2 - q1) kappa = pi, with
    its dilation phases.
    """
    q1, q2 = gamma1.q, gamma2.q
    if abs(q1 - q2) <= tol * max(1.0, abs(q1), abs(q2)):
        d = materialize_difference(gamma1, gamma2, grid, trunc)
        td = apply_T(d, config)
        n0 = td.norm()
        fine = grid.with_extra_ir_shells(1)
        d2 = materialize_difference(gamma1, gamma2, fine, trunc)
        n1 = apply_T(d2, config).norm()
        drift = abs(n1 - n0) / n0 if n0 else 0.0
        return SectorReport(EQUIVALENT, q1, q2, float(n0), float(n1), float(drift), float((td - d).norm()))
    parts = [(probe_profile, constant())]
    c = rescale_for_phase(parts, q2 - q1)
    scaled = [(probe_profile.scaled(c), constant())]
    kap = kappa(scaled)
    gap = abs(np.exp(1j * (q2 - q1) * kap) - 1.0)
    f = build_test_function(scaled, [], grid, trunc)
    fl = dilate(f, float(lambdas[-1]), ir_tol=1e-6)
    l1 = linear_form_momentum(gamma1, f, float(lambdas[-1]))[0]
    l2 = linear_form_momentum(gamma2, f, float(lambdas[-1]))[0]
    gap_d = abs(np.exp(1j * (l2 - l1)) - 1.0)
    fixes = (apply_T(fl, config) - fl).norm()
    return SectorReport(
        INEQUIVALENT, q1, q2, probe_scale=c, kappa=float(kap), phase_gap=float(gap),
        phase_gap_dilated=float(gap_d), t_fixes_probe=float(fixes),
    )
