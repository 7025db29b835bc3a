"""Charge automorphisms gamma = w^{-1/2} sigma^ + i w^{-3/2} rho^ and the linear form l_gamma.

Real position-space data ``(sigma, rho)`` define the automorphism
``W(f) -> exp(i l_gamma(f)) W(f)``.  A charge with ``q = int rho != 0`` is
never sampled as a mode function, since it is not square integrable at
``k = 0``; only charge-neutral differences are.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss, legval

from .modespace import POSITION_CONJ, REGULAR, ModeFunction, apply_involution
from .transforms import (
    TestFunctionData,
    _composite_gl,
    constant,
    laplacian_radial,
    parts_transform,
    smoothstep_coulomb,
)


class ChargeMismatchError(ValueError):
    """Difference of charges with unequal q is not square integrable."""


def _as_parts(x):
    if x is None:
        return ()
    if isinstance(x, tuple) and len(x) == 2 and not isinstance(x[0], tuple):
        return (x,)
    return tuple(tuple(p) for p in x)


def _check_real(parts, name):
    for prof, ang in parts:
        if not prof.compact:
            raise ValueError(f"{name} profile must be compactly supported")
        vals = prof.func(prof.samples[0])
        if np.iscomplexobj(vals) and np.any(np.imag(vals) != 0):
            raise ValueError(f"{name} profile must be real-valued")
        if np.iscomplexobj(ang.legendre_coeff):
            raise ValueError(f"{name} angular factor must be real-valued")


def _charge_of(parts):
    return float(sum(4.0 * np.pi * ang.spherical_mean() * prof.integrate(2) for prof, ang in parts))


@dataclass(frozen=True, eq=False)
class ChargeAutomorphism:
    sigma_parts: tuple
    rho_parts: tuple
    q: float
    special_form: bool = False
    phi: object = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def sigma(self):
        return self.sigma_parts

    @property
    def rho(self):
        return self.rho_parts

    @property
    def is_identity(self):
        return not self.sigma_parts and not self.rho_parts

    def __add__(self, other):
        return ChargeAutomorphism(
            self.sigma_parts + other.sigma_parts, self.rho_parts + other.rho_parts, self.q + other.q
        )

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, c):
        phi = None if self.phi is None else self.phi.scaled(c)
        return ChargeAutomorphism(
            tuple((p.scaled(c), a) for p, a in self.sigma_parts),
            tuple((p.scaled(c), a) for p, a in self.rho_parts),
            c * self.q,
            self.special_form,
            phi,
        )

    def transforms(self, grid, trunc):
        """(sigma^, rho^) channel coefficients on the grid, cached per grid."""
        key = (grid.key, trunc.key)
        if key not in self._cache:
            self._cache[key] = (
                parts_transform(self.sigma_parts, grid, trunc),
                parts_transform(self.rho_parts, grid, trunc),
            )
        return self._cache[key]


def make_charge(sigma=None, rho=None):
    """Charge from position-space parts ``(RadialProfile, AngularFunction)``."""
    sp, rp = _as_parts(sigma), _as_parts(rho)
    _check_real(sp, "sigma")
    _check_real(rp, "rho")
    return ChargeAutomorphism(sp, rp, _charge_of(rp))


def make_special_charge(q, r1, r2):
    """sigma = 0, rho = -Laplacian(Phi) with Phi the smoothstep-Coulomb potential."""
    phi = smoothstep_coulomb(q, r1, r2)
    rho = laplacian_radial(phi)
    parts = ((rho, constant()),)
    return ChargeAutomorphism((), parts, _charge_of(parts), True, phi)


# --------------------------------------------------------------------------
# linear form
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearFormReport:
    value_momentum: float
    value_position: float | None
    discrepancy: float | None
    ir_tail: float
    grid_metadata: dict

    @property
    def value(self):
        return self.value_momentum


def split_test_function(f):
    """(h^, g^) coefficient arrays with f = w^{-1/2} h^ + i w^{1/2} g^ for real h, g."""
    gf = apply_involution(POSITION_CONJ, f).coeff
    om = f.grid.nodes
    h = om**0.5 * 0.5 * (f.coeff + gf)
    g = -1j * om**-0.5 * 0.5 * (f.coeff - gf)
    return h, g


def _ir_tail_00(trunc, grid, a, b):
    """Constant extrapolation of the l = 0 integrand conj(a) b over [0, ir_cutoff]."""
    if (0, 0) not in trunc.index:
        return 0.0
    c = trunc.index[(0, 0)]
    return float(grid.ir_cutoff * np.real(np.conj(a[c, 0]) * b[c, 0]))


def linear_form_momentum(gamma, f, scale=1.0):
    """Momentum-space quadrature of l_gamma(f).

    ``scale = lam`` returns l_gamma(f_lam) through rho^(k/lam), sigma^(k/lam)
    without resampling ``f``.
    """
    grid, trunc = f.grid, f.trunc
    om, w = grid.nodes, grid.weights
    h, g = split_test_function(f)
    if scale == 1.0:
        sig, rho = gamma.transforms(grid, trunc)
    else:
        sig = parts_transform(gamma.sigma_parts, _Scaled(grid, scale), trunc)
        rho = parts_transform(gamma.rho_parts, _Scaled(grid, scale), trunc)
    first = np.sum(np.real(np.conj(rho) * h) @ (w * om**-2.0))
    second = np.sum(np.real(np.conj(sig) * g) @ w) / scale
    tail = _ir_tail_00(trunc, grid, rho, h)
    return float(first - second + tail), tail


@dataclass(frozen=True)
class _Scaled:
    grid: object
    lam: float

    @property
    def nodes(self):
        return self.grid.nodes / self.lam

    @property
    def n_nodes(self):
        return self.grid.n_nodes


def _radial_kernel_integral(rho_prof, h_prof, l, panels=16):
    """R_l = int int rho(r) h(s) r_<^l / r_>^(l+1) r^2 s^2 dr ds."""
    s, ws = h_prof.quadrature()
    hs = h_prof(s)
    keep = hs != 0
    s, ws, hs = s[keep], ws[keep], hs[keep]
    lo, hi = rho_prof.r_lo, rho_prof.r_hi
    c = np.clip(s, lo, hi)
    x, wx = leggauss(12)
    u = (np.arange(panels)[:, None] + 0.5 * (x[None, :] + 1.0)).ravel() / panels
    wu = np.tile(wx, panels) / (2.0 * panels)
    # inner part r < s: (r/s)^l / s
    ri = lo + (c - lo)[:, None] * u[None, :]
    wi = (c - lo)[:, None] * wu[None, :]
    inner = np.sum(wi * rho_prof(ri) * ri**2 * (ri / s[:, None]) ** l, axis=1) / s
    # outer part r > s: (s/r)^l / r
    ro = c[:, None] + (hi - c)[:, None] * u[None, :]
    wo = (hi - c)[:, None] * wu[None, :]
    outer = np.sum(wo * rho_prof(ro) * ro * (s[:, None] / ro) ** l, axis=1)
    return float(np.sum(ws * hs * s**2 * (inner + outer)))


def coulomb_pairing(rho_parts, h_parts):
    """int int rho(x) h(y) / (4 pi |x - y|) d^3x d^3y by multipole reduction."""
    total = 0.0
    for rp, ra in rho_parts:
        for hp, ha in h_parts:
            cosang = float(np.clip(ra.axis @ ha.axis, -1.0, 1.0))
            for l in range(min(ra.l_max, ha.l_max) + 1):
                ab = ra.coeff(l) * ha.coeff(l)
                if ab == 0:
                    continue
                pl = legval(cosang, np.eye(l + 1)[l])
                total += 4.0 * np.pi / (2 * l + 1) ** 2 * ab * pl * _radial_kernel_integral(rp, hp, l)
    return float(total)


def overlap(sigma_parts, g_parts):
    """int sigma(x) g(x) d^3x for axisymmetric factorised parts."""
    total = 0.0
    for sp, sa in sigma_parts:
        for gp, ga in g_parts:
            lo, hi = max(sp.r_lo, gp.r_lo), min(sp.r_hi, gp.r_hi)
            if lo >= hi:
                continue
            r, w = _composite_gl(lo, hi, max(sp.panels, gp.panels))
            radial = float(np.sum(w * sp(r) * gp(r) * r * r))
            cosang = float(np.clip(sa.axis @ ga.axis, -1.0, 1.0))
            for l in range(min(sa.l_max, ga.l_max) + 1):
                ab = sa.coeff(l) * ga.coeff(l)
                if ab:
                    total += 4.0 * np.pi / (2 * l + 1) * ab * legval(cosang, np.eye(l + 1)[l]) * radial
    return float(total)


def linear_form_position(gamma, data):
    """l_gamma(f) = int int rho h / (4 pi |x - y|) - int sigma g, from generating data."""
    return coulomb_pairing(gamma.rho_parts, data.h_parts) - overlap(gamma.sigma_parts, data.g_parts)


def linear_form(gamma, f):
    """Both evaluation paths of l_gamma(f); position path needs f's provenance."""
    meta = dict(f.grid.describe(), l_max=f.trunc.l_max)
    if gamma.is_identity:
        return LinearFormReport(0.0, 0.0, 0.0, 0.0, meta)
    vm, tail = linear_form_momentum(gamma, f)
    if isinstance(f.provenance, TestFunctionData):
        vp = linear_form_position(gamma, f.provenance)
        return LinearFormReport(vm, vp, abs(vm - vp), tail, meta)
    return LinearFormReport(vm, None, None, tail, meta)


def weyl_phase(gamma, f):
    """exp(i l_gamma(f))."""
    return complex(np.exp(1j * linear_form(gamma, f).value_momentum))


# --------------------------------------------------------------------------
# asymptotic pairing constant
# --------------------------------------------------------------------------


def kappa(h_parts):
    """(4 pi)^{-1} int h(x)/|x| d^3x; only the spherical mean of h contributes."""
    if isinstance(h_parts, ModeFunction):
        h_parts = h_parts.provenance.h_parts
    elif isinstance(h_parts, TestFunctionData):
        h_parts = h_parts.h_parts
    return float(sum(ang.spherical_mean() * prof.integrate(1) for prof, ang in _as_parts(h_parts)))


def kappa_momentum(f):
    """Momentum-space pairing (2 pi)^{-3/2} int h^(k) / |k|^2 d^3k from f's coefficients."""
    h, _ = split_test_function(f)
    c = f.trunc.index[(0, 0)]
    grid = f.grid
    h00 = h[c]
    val = np.sum(np.real(h00) * grid.weights * grid.nodes**-2.0) + grid.ir_cutoff * np.real(h00[0])
    return float((2.0 * np.pi) ** -1.5 * np.sqrt(4.0 * np.pi) * val)


# --------------------------------------------------------------------------
# charge-neutral differences
# --------------------------------------------------------------------------


def materialize_difference(gamma1, gamma2, grid, trunc, tol=1e-8):
    """Mode function of gamma1 - gamma2, which is square integrable iff q1 = q2."""
    if abs(gamma1.q - gamma2.q) > tol * max(1.0, abs(gamma1.q), abs(gamma2.q)):
        raise ChargeMismatchError(
            f"charges differ ({gamma1.q!r} vs {gamma2.q!r}); the difference is not square integrable"
        )
    s1, r1 = gamma1.transforms(grid, trunc)
    s2, r2 = gamma2.transforms(grid, trunc)
    om = grid.nodes
    coeff = om**-0.5 * (s1 - s2) + 1j * om**-1.5 * (r1 - r2)
    return ModeFunction(grid, trunc, coeff, REGULAR, ("charge_difference", gamma1, gamma2))


# --------------------------------------------------------------------------
# random scenarios
# --------------------------------------------------------------------------


def _random_axis(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _random_parts(rng, l_max, r_range, n_parts):
    from .transforms import bump, cap

    parts = []
    for _ in range(n_parts):
        lo = rng.uniform(*r_range)
        hi = lo + rng.uniform(0.5, 1.5)
        amp = rng.uniform(-1.0, 1.0)
        if rng.random() < 0.5:
            ang = constant()
        else:
            ang = cap(rng.uniform(0.4, 1.2), _random_axis(rng), l_max)
        parts.append((bump(lo, hi, amp), ang))
    return tuple(parts)


def random_scenario(rng, l_max=6):
    """Random smooth charge gamma and generating data (h, g) of a test function.

    rho and sigma live in r < 2.5; h and g are bumps anywhere in 0.5 < r < 4,
    so supports may overlap.
    """
    rho = _random_parts(rng, l_max, (0.2, 1.0), int(rng.integers(1, 3)))
    sigma = _random_parts(rng, l_max, (0.2, 1.0), int(rng.integers(0, 2)))
    h = _random_parts(rng, l_max, (0.5, 2.5), int(rng.integers(1, 3)))
    g = _random_parts(rng, l_max, (0.5, 2.5), int(rng.integers(0, 2)))
    return make_charge(sigma, rho), h, g
