"""KPR-like backgrounds: shell data (eps_i, b_i, Q_i), the operators T1, T2, T and state values.

On shell ``i`` the projection ``Q_i`` maps onto the radial ray
``xi_i = omega^{-3/2}`` tensored with all channels ``1 <= l <= L_i``.
``T1 = 1 + sum (b_i - 1) Q_i`` and ``T2 = 1 + sum (1/b_i - 1) Q_i`` are
mutually inverse, and ``T = T2 (1 + G)/2 + T1 (1 - G)/2`` for the chosen
antiunitary involution ``G``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .modespace import (
    POSITION_CONJ,
    MOMENTUM_CONJ,
    apply_involution,
    apply_radial_power,
    check_aligned,
    geometric_boundaries,
    inner_product,
    q_channel_mask,
    random_mode_function,
    xi_ray,
)


class KprConfigError(ValueError):
    """Configuration violates a KPR condition."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SummabilityReport:
    """Diagnostics of the two series a KPR-like configuration must sum.

    ``energy``: eps_i rk(Q_i) / b_i^2, judged by the ratio test.
    ``kpr``: b_i^2 ln(eps_i/eps_{i+1}), judged by Raabe's test since its
    ratio tends to 1 for power-law b_i.
    """

    energy_terms: np.ndarray
    energy_partial: np.ndarray
    energy_ratios: np.ndarray
    energy_ratio_index: int | None
    energy_converges: bool
    kpr_terms: np.ndarray
    kpr_partial: np.ndarray
    kpr_raabe: np.ndarray
    kpr_converges: bool
    log_ratio_bounded: bool

    @property
    def ok(self):
        return self.energy_converges and self.kpr_converges and self.log_ratio_bounded

    def as_dict(self):
        return {
            "energy_partial_sum": float(self.energy_partial[-1]),
            "energy_last_ratio": float(self.energy_ratios[-1]) if len(self.energy_ratios) else None,
            "energy_ratio_index": self.energy_ratio_index,
            "energy_converges": self.energy_converges,
            "kpr_partial_sum": float(self.kpr_partial[-1]),
            "kpr_last_raabe": float(self.kpr_raabe[-1]) if len(self.kpr_raabe) else None,
            "kpr_converges": self.kpr_converges,
            "log_ratio_bounded": self.log_ratio_bounded,
        }


def _tail_start(mask):
    """First index from which ``mask`` holds to the end, or None."""
    bad = np.nonzero(~mask)[0]
    if len(bad) == 0:
        return 0
    start = bad[-1] + 1
    return int(start) if start < len(mask) else None


def summability(eps, b, ranks):
    eps = np.asarray(eps, float)
    b = np.asarray(b, float)
    ranks = np.asarray(ranks, float)
    n = len(b)
    i = np.arange(1, n + 1)
    e_terms = eps[:-1] * ranks / b**2
    logr = np.log(eps[:-1] / eps[1:])
    k_terms = b**2 * logr
    e_ratio = e_terms[1:] / e_terms[:-1]
    start = _tail_start(e_ratio < 1.0)
    # ratio index is 1-based: terms decrease from this shell on
    e_index = None if start is None else int(start + 1)
    e_conv = bool(n == 1 or (start is not None and e_ratio[-1] < 1.0))
    raabe = i[:-1] * (k_terms[:-1] / k_terms[1:] - 1.0)
    k_conv = bool(n == 1 or raabe[-1] > 1.0)
    # polynomially bounded log ratios: ln(eps_i/eps_{i+1}) <= C i^p with modest p
    log_ok = bool(np.all(logr > 0) and np.all(logr <= logr[0] * i**2 + 1e-12))
    return SummabilityReport(
        e_terms, np.cumsum(e_terms), e_ratio, e_index, e_conv,
        k_terms, np.cumsum(k_terms), raabe, k_conv, log_ok,
    )


@dataclass(frozen=True, eq=False)
class KprConfig:
    shell_boundaries: np.ndarray
    b: np.ndarray
    l_rule: str = "i"
    l_cap: int | None = None
    involution: str = POSITION_CONJ
    xi_exponent: float = -1.5
    params: dict = field(default_factory=dict)
    summability: SummabilityReport | None = None

    @property
    def n_shells(self):
        return len(self.b)

    def max_l(self, i):
        """Largest l in the angular part of Q_i."""
        if self.l_rule == "i":
            top = i
        else:
            top = int(self.l_rule)
        return top if self.l_cap is None else min(top, self.l_cap)

    def rank(self, i):
        top = self.max_l(i)
        return top * (top + 2)

    @property
    def ranks(self):
        return np.array([self.rank(i) for i in range(1, self.n_shells + 1)])

    @property
    def required_l_max(self):
        return max(self.max_l(i) for i in range(1, self.n_shells + 1))

    def with_b(self, b):
        return KprConfig(
            self.shell_boundaries, np.asarray(b, float), self.l_rule, self.l_cap, self.involution,
            self.xi_exponent, dict(self.params), self.summability,
        )

    def as_dict(self):
        return dict(self.params, n_shells=self.n_shells, l_rule=self.l_rule, l_cap=self.l_cap,
                    involution=self.involution)


def make_kpr_config(
    q_ratio=0.5,
    b_alpha=1.0,
    n_shells=20,
    l_rule="i",
    eps1=1.0,
    b_scale=0.5,
    l_cap=None,
    involution=POSITION_CONJ,
):
    """Geometric shells eps_i = eps1 q^(i-1) with b_i = b_scale i^(-b_alpha)."""
    if not 0 < q_ratio < 1:
        raise KprConfigError("q_ratio must lie in (0, 1)")
    if int(n_shells) != n_shells or n_shells < 1:
        raise KprConfigError("n_shells must be a positive integer")
    if not 0 < b_scale < 1:
        raise KprConfigError("b_scale must lie in (0, 1) so that every b_i < 1")
    if b_alpha <= 0:
        raise KprConfigError("b_alpha must be positive so that b_i decreases to 0")
    if involution not in (POSITION_CONJ, MOMENTUM_CONJ):
        raise KprConfigError(f"unknown involution {involution!r}")
    if l_rule != "i":
        try:
            if int(l_rule) < 1:
                raise ValueError
        except ValueError:
            raise KprConfigError(f"l_rule must be 'i' or a positive integer, got {l_rule!r}") from None
    n = int(n_shells)
    eps = geometric_boundaries(eps1, q_ratio, n)
    i = np.arange(1, n + 1)
    b = b_scale * i ** (-float(b_alpha))
    cfg = KprConfig(
        eps, b, str(l_rule), l_cap, involution,
        params={"q_ratio": q_ratio, "b_alpha": b_alpha, "b_scale": b_scale, "eps1": eps1},
    )
    report = summability(eps, b, cfg.ranks)
    if b_alpha <= 0.5 or not report.kpr_converges:
        raise KprConfigError(
            f"sum of b_i^2 ln(eps_i/eps_i+1) diverges for b_alpha={b_alpha} "
            f"(Raabe value {report.kpr_raabe[-1] if len(report.kpr_raabe) else float('nan'):.3f} <= 1; "
            "geometric shells need b_alpha > 1/2)",
            report,
        )
    if not report.energy_converges:
        raise KprConfigError("sum of eps_i rk(Q_i)/b_i^2 fails the ratio test", report)
    return KprConfig(eps, b, cfg.l_rule, l_cap, involution, cfg.xi_exponent, cfg.params, report)


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


def _shell_scale(u, config, factors, n_trunc=None):
    """1 + sum_i (factors_i - 1) Q_i applied to u."""
    check_aligned(u.grid, config)
    n = config.n_shells if n_trunc is None else min(int(n_trunc), config.n_shells)
    if n >= 1 and u.trunc.l_max < config.max_l(n):
        from .modespace import TruncationError

        raise TruncationError(
            f"T needs l up to {config.max_l(n)}; truncation has l_max={u.trunc.l_max}"
        )
    grid, trunc = u.grid, u.trunc
    coeff = u.coeff.copy()
    w = grid.weights
    for i in range(1, n + 1):
        mask = q_channel_mask(trunc, config.max_l(i))
        if not mask.any():
            continue
        sl = grid.shell_slice(i)
        xi = xi_ray(grid, i)
        wx = w[sl] * xi
        block = coeff[mask, sl]
        amp = block @ wx / np.sum(wx * xi)
        coeff[mask, sl] = block + (factors[i - 1] - 1.0) * amp[:, None] * xi[None, :]
    return u.with_coeff(coeff)


def apply_T1(u, config, n_trunc=None):
    return _shell_scale(u, config, config.b, n_trunc)


def apply_T2(u, config, n_trunc=None):
    return _shell_scale(u, config, 1.0 / config.b, n_trunc)


def gamma_split(u, kind):
    """(even, odd) parts u = u+ + u- with G u+- = +-u+-."""
    gu = apply_involution(kind, u)
    return 0.5 * (u + gu), 0.5 * (u - gu)


def apply_T(u, config, n_trunc=None):
    """T u = T2 u+ + T1 u-, with u+- the involution eigen-parts."""
    even, odd = gamma_split(u, config.involution)
    return apply_T2(even, config, n_trunc) + apply_T1(odd, config, n_trunc)


def t2_amplification(config, n_trunc=None):
    n = config.n_shells if n_trunc is None else n_trunc
    return float(np.max(1.0 / config.b[:n]))


def power_iteration_norm(apply, u0, iters=200, tol=1e-14):
    """Operator norm of a self-adjoint ``apply`` by power iteration from ``u0``."""
    v = (1.0 / u0.norm()) * u0
    est = 0.0
    for _ in range(iters):
        w = apply(v)
        nw = w.norm()
        if nw == 0:
            return 0.0
        new = nw
        v = (1.0 / nw) * w
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(est)


@dataclass(frozen=True)
class T2BoundReport:
    majorant_sq: float
    bound: float
    power_iteration: float
    sample_max: float
    ok: bool


def t2_regularized_bound(config, grid, trunc, rng, n_samples=50, iters=200):
    """Majorant sum (1/b_i - 1)^2 rk(Q_i) eps_i of ||(T2 - 1) w_r^{1/2}||^2 and empirical checks."""
    eps = config.shell_boundaries[:-1]
    maj = float(np.sum((1.0 / config.b - 1.0) ** 2 * config.ranks * eps))
    bound = 1.0 + np.sqrt(maj)

    def A(v):
        return apply_T2(apply_radial_power(0.5, v, regularized=True), config)

    def AtA(v):
        return apply_radial_power(0.5, apply_T2(A(v), config), regularized=True)

    u0 = random_mode_function(grid, trunc, rng)
    pi = np.sqrt(power_iteration_norm(AtA, u0, iters=iters, tol=1e-12))
    smax = 0.0
    for _ in range(n_samples):
        v = random_mode_function(grid, trunc, rng)
        smax = max(smax, A(v).norm() / v.norm())
    return T2BoundReport(maj, float(bound), float(pi), float(smax), bool(pi <= bound and smax <= bound))


@dataclass(frozen=True)
class SymplecticReport:
    sigma_residual: float
    pair_residual: float
    trials: int


def symplectic_check(config, grid, trunc, trials, rng, above=None, b_override=None):
    """Max normalised residuals of Im<Tu,Tv> = Im<u,v> and <T1 u, T2 v> = <u,v>.

    Random pairs are supported above ``above`` (default: the last KPR
    shell boundary); ``v`` is correlated with ``u`` so that both identities
    are tested on pairs with large overlap.  ``b_override`` replaces the b-sequence used for T2
    only, breaking the inverse pair on purpose.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    above = config.shell_boundaries[-1] if above is None else above
    cfg2 = config if b_override is None else config.with_b(b_override)

    def T(u):
        even, odd = gamma_split(u, config.involution)
        return apply_T2(even, cfg2) + apply_T1(odd, config)

    def probe():
        # white noise enriched so that the Q-ranges carry half the weight
        w = random_mode_function(grid, trunc, rng, above=above)
        qw = apply_T1(w, config.with_b(np.full(config.n_shells, 2.0))) - w
        nq = qw.norm()
        return w if nq == 0 else w + (w.norm() / nq) * qw

    s_res = p_res = 0.0
    for _ in range(trials):
        u = probe()
        v = complex(np.exp(2j * np.pi * rng.random())) * u + probe()
        scale = u.norm() * v.norm()
        s = abs(inner_product(T(u), T(v)).imag - inner_product(u, v).imag) / scale
        p = abs(inner_product(apply_T1(u, config), apply_T2(v, cfg2)) - inner_product(u, v)) / scale
        s_res, p_res = max(s_res, s), max(p_res, p)
    return SymplecticReport(float(s_res), float(p_res), int(trials))


@dataclass(frozen=True)
class StateValueReport:
    f_norm: float
    Tf_norm: float
    state_value: float
    vacuum_value: float
    t2_amplification: float


def state_value(config, f):
    """omega_T(W(f)) = exp(-||T f||^2 / 4) next to the vacuum value."""
    tf = apply_T(f, config)
    fn, tn = f.norm(), tf.norm()
    return StateValueReport(fn, tn, float(np.exp(-tn * tn / 4)), float(np.exp(-fn * fn / 4)),
                            t2_amplification(config))


@dataclass(frozen=True)
class MeanEnergyReport:
    terms: np.ndarray
    partial_sums: np.ndarray
    total: float
    decreasing_from: int | None
    extrapolated_total: float


def mean_energy_bound(config):
    """Per-shell energy bounds eps_i rk(Q_i) / b_i^2 and their sum.

    The extrapolated total adds a geometric tail fitted to the last ratio.
    """
    eps = config.shell_boundaries[:-1]
    terms = eps * config.ranks / config.b**2
    partial = np.cumsum(terms)
    ratios = terms[1:] / terms[:-1]
    start = _tail_start(ratios < 1.0)
    dec = None if start is None else int(start + 1)
    total = float(partial[-1])
    extra = total
    if len(ratios) and ratios[-1] < 1:
        r = ratios[-1]
        extra = total + float(terms[-1] * r / (1 - r))
    return MeanEnergyReport(terms, partial, total, dec, extra)
