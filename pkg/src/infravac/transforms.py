"""Position-space profiles and their momentum-space images.

Fourier convention: unitary, ``h^(k) = (2 pi)^{-3/2} int h(x) e^{-ik.x} d^3x``.
For ``g(r) Y_lm(x/|x|)`` this gives ``G_l(k) Y_lm(k/|k|)`` with
``G_l(k) = (-i)^l sqrt(2/pi) int g(r) j_l(kr) r^2 dr``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.special import spherical_jn

from .harmonics import direction_angles, legendre_eval, spherical_jn_integral_inv_x, spherical_jn_orders
from .modespace import IR_CUTOFF, REGULAR, ModeFunction

_GL_PANEL = 12
_SQRT_2_PI = np.sqrt(2.0 / np.pi)


class ProfileError(ValueError):
    """Invalid radial profile or profile operation."""


class DilationRangeError(ValueError):
    """Dilation moves a significant part of the function off the grid."""


class AliasingWarning(UserWarning):
    """Angular expansion is not resolved at the requested l_max."""


def _composite_gl(a, b, panels, order=_GL_PANEL):
    x, w = leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


# --------------------------------------------------------------------------
# smooth building blocks
# --------------------------------------------------------------------------


def bump_shape(t, sharpness=1.0):
    """exp(-s t^2/(1-t^2)) on |t| < 1, zero elsewhere; equals 1 at t = 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(-sharpness * ti * ti / (1.0 - ti * ti))
    return out


def _phi_step(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    a = _phi_step(x)
    b = _phi_step(1.0 - x)
    return a / (a + b)


def smoothstep_derivatives(x):
    """(s, s', s'') of :func:`smoothstep`, exact on the open unit interval."""
    x = np.asarray(x, dtype=float)
    s = smoothstep(x)
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    inside = (x > 0) & (x < 1)
    xi = x[inside]
    si = s[inside]
    g = 1.0 / xi**2 + 1.0 / (1.0 - xi) ** 2
    dg = -2.0 / xi**3 + 2.0 / (1.0 - xi) ** 3
    s1 = si * (1.0 - si) * g
    d1[inside] = s1
    d2[inside] = s1 * (1.0 - 2.0 * si) * g + si * (1.0 - si) * dg
    return s, d1, d2


# --------------------------------------------------------------------------
# radial profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Real radial function with support in ``[r_lo, r_hi]``.

    ``func`` is evaluated only inside the support.  ``r_hi`` may be
    infinite for potentials; such profiles cannot be transformed directly.
    """

    func: Callable
    support: tuple
    closed_form: str | None = None
    params: dict = field(default_factory=dict)
    panels: int = 24

    def __post_init__(self):
        lo, hi = self.support
        if not (0 <= lo < hi):
            raise ProfileError(f"degenerate support {self.support}")

    @property
    def r_lo(self):
        return float(self.support[0])

    @property
    def r_hi(self):
        return float(self.support[1])

    @property
    def compact(self):
        return np.isfinite(self.r_hi)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = (r >= self.r_lo) & (r <= self.r_hi)
        if inside.any():
            vals = self.func(r[inside])
            if np.iscomplexobj(vals) and np.any(np.imag(vals) != 0):
                raise ValueError("radial profile must be real-valued")
            out[inside] = np.real(vals)
        return out

    def quadrature(self, k_max=0.0):
        """Composite Gauss-Legendre rule on the support, fine enough for j_l(k r)."""
        if not self.compact:
            raise ProfileError("profile has unbounded support")
        width = self.r_hi - self.r_lo
        panels = max(self.panels, int(np.ceil(width * k_max / 4.0)))
        return _composite_gl(self.r_lo, self.r_hi, panels)

    @cached_property
    def samples(self):
        r, _ = self.quadrature()
        return r, self(r)

    def scaled(self, c):
        f = self.func
        params = dict(self.params)
        if "amplitude" in params:
            params["amplitude"] = c * params["amplitude"]
        if "q" in params:
            params["q"] = c * params["q"]
        return RadialProfile(lambda r: c * f(r), self.support, self.closed_form, params, self.panels)

    def rescaled(self, lam, power):
        """r -> lam^power * p(r / lam), support scaled by lam."""
        if lam <= 0:
            raise ProfileError("scale factor must be positive")
        f = self.func
        c = lam**power
        params = dict(self.params, scale=self.params.get("scale", 1.0) * lam)
        return RadialProfile(
            lambda r: c * f(r / lam),
            (self.r_lo * lam, self.r_hi * lam),
            None if self.closed_form is None else self.closed_form + "_rescaled",
            params,
            self.panels,
        )

    def integrate(self, weight_power=2):
        """int p(r) r^weight_power dr over the support."""
        r, w = self.quadrature()
        return float(np.sum(w * self(r) * r**weight_power))


def bump(r_lo, r_hi, amplitude=1.0):
    """amplitude * exp(-1/(1-t^2)) with t mapping [r_lo, r_hi] onto [-1, 1].

    The midpoint value is ``amplitude / e``.
    """
    if not (0 <= r_lo < r_hi):
        raise ProfileError(f"degenerate interval [{r_lo}, {r_hi}]")
    mid = 0.5 * (r_lo + r_hi)
    half = 0.5 * (r_hi - r_lo)

    def f(r):
        t = (r - mid) / half
        out = np.zeros_like(t)
        inside = np.abs(t) < 1.0
        out[inside] = amplitude * np.exp(-1.0 / (1.0 - t[inside] ** 2))
        return out

    return RadialProfile(f, (r_lo, r_hi), "bump", {"r_lo": r_lo, "r_hi": r_hi, "amplitude": amplitude})


def smoothstep_coulomb(q, r1, r2):
    """Phi(r) = s((r - r1)/(r2 - r1)) q/(4 pi r): zero below r1, Coulomb above r2."""
    if not (0 < r1 < r2):
        raise ProfileError("need 0 < r1 < r2")
    w = r2 - r1

    def f(r):
        return smoothstep((r - r1) / w) * q / (4.0 * np.pi * r)

    return RadialProfile(f, (r1, np.inf), "smoothstep_coulomb", {"q": q, "r1": r1, "r2": r2})


def _smoothstep_coulomb_laplacian(q, r1, r2):
    w = r2 - r1

    def f(r):
        _, _, d2 = smoothstep_derivatives((r - r1) / w)
        return -q / (4.0 * np.pi) * d2 / (w * w * r)

    return RadialProfile(
        f, (r1, r2), "smoothstep_coulomb_laplacian", {"q": q, "r1": r1, "r2": r2}, panels=32
    )


_FD6 = (np.array([-3, -2, -1, 1, 2, 3]), np.array([-1, 9, -45, 45, -9, 1]) / 60.0)
_FD6_2 = (
    np.array([-3, -2, -1, 0, 1, 2, 3]),
    np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90]),
)


def laplacian_radial(profile, step=None):
    """-(p'' + 2 p'/r) as a new profile.

    Tagged smoothstep-Coulomb profiles use the closed form; other profiles
    use sixth-order central differences.
    """
    if profile.closed_form == "smoothstep_coulomb":
        p = profile.params
        return _smoothstep_coulomb_laplacian(p["q"], p["r1"], p["r2"])
    if profile.r_lo == 0:
        raise ProfileError("support touches r = 0; no regularity data for the Laplacian")
    if not profile.compact:
        raise ProfileError("finite differences need a compactly supported profile")
    h = step or (profile.r_hi - profile.r_lo) * 2e-3
    off1, c1 = _FD6
    off2, c2 = _FD6_2

    def f(r):
        r = np.asarray(r, dtype=float)
        d1 = sum(c * profile(r + o * h) for o, c in zip(off1, c1)) / h
        d2 = sum(c * profile(r + o * h) for o, c in zip(off2, c2)) / (h * h)
        return -(d2 + 2.0 * d1 / r)

    return RadialProfile(f, profile.support, None, {"fd_step": h}, profile.panels)


# --------------------------------------------------------------------------
# spherical Bessel transforms
# --------------------------------------------------------------------------


def _nodes_of(k):
    return np.asarray(getattr(k, "nodes", k), dtype=float)


def sbt(profile, l, k, chunk=2048):
    """(-i)^l sqrt(2/pi) int p(r) j_l(k r) r^2 dr at momenta ``k`` (array or grid)."""
    k = _nodes_of(k)
    r, w = profile.quadrature(k_max=float(np.max(k, initial=0.0)))
    pw = w * profile(r) * r * r
    out = np.empty(k.shape, dtype=float)
    flat = k.ravel()
    res = out.ravel()
    for s in range(0, len(flat), chunk):
        kk = flat[s : s + chunk]
        res[s : s + chunk] = spherical_jn(l, np.outer(kk, r)) @ pw
    return (-1j) ** l * _SQRT_2_PI * out


def sbt_orders(profile, l_max, k, chunk=256):
    """:func:`sbt` for every order 0..l_max at once, shape ``(l_max + 1, len(k))``."""
    k = _nodes_of(k)
    r, w = profile.quadrature(k_max=float(np.max(k, initial=0.0)))
    pw = w * profile(r) * r * r
    out = np.empty((l_max + 1, k.size))
    for s in range(0, k.size, chunk):
        kk = k[s : s + chunk]
        out[:, s : s + chunk] = spherical_jn_orders(l_max, np.outer(kk, r)) @ pw
    phase = (-1j) ** np.arange(l_max + 1)
    return phase[:, None] * _SQRT_2_PI * out


def jl_over_x_tail_orders(l_max, x, max_width=0.5):
    """:func:`jl_over_x_tail` for orders 1..l_max; row 0 is left at zero."""
    x = np.asarray(x, dtype=float).ravel()
    order = np.argsort(x)
    breaks = np.unique(np.concatenate([[0.0], x[order]]))
    counts = np.maximum(1, np.ceil(np.diff(breaks) / max_width).astype(int))
    owner = np.repeat(np.arange(len(counts)), counts)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    frac = np.arange(len(owner)) - first[owner]
    width = np.diff(breaks)[owner] / counts[owner]
    a = breaks[owner] + frac * width
    gx, gw = leggauss(_GL_PANEL)
    t = a[:, None] + 0.5 * width[:, None] * (gx[None, :] + 1.0)
    wt = 0.5 * width[:, None] * gw[None, :] / t
    J = spherical_jn_orders(l_max, t)
    panel = np.sum(J * wt[None], axis=2)
    idx = np.searchsorted(breaks, x)
    out = np.zeros((l_max + 1, x.size))
    for l in range(1, l_max + 1):
        per_break = np.bincount(owner, weights=panel[l], minlength=len(counts))
        cum = np.concatenate([[0.0], np.cumsum(per_break)])
        out[l] = spherical_jn_integral_inv_x(l) - cum[idx]
    return out


def jl_over_x_tail(l, x, max_width=0.5):
    """int_x^inf j_l(t)/t dt for l >= 1, x >= 0 (array).

    Computed as the closed-form total minus a cumulative composite
    Gauss-Legendre integral over the sorted breakpoints.
    """
    x = np.asarray(x, dtype=float)
    total = spherical_jn_integral_inv_x(l)
    flat = x.ravel()
    order = np.argsort(flat)
    breaks = np.unique(np.concatenate([[0.0], flat[order]]))
    counts = np.maximum(1, np.ceil(np.diff(breaks) / max_width).astype(int))
    owner = np.repeat(np.arange(len(counts)), counts)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    frac = np.arange(len(owner)) - first[owner]
    width = np.diff(breaks)[owner] / counts[owner]
    a = breaks[owner] + frac * width
    gx, gw = leggauss(_GL_PANEL)
    t = a[:, None] + 0.5 * width[:, None] * (gx[None, :] + 1.0)
    panel = np.sum(0.5 * width[:, None] * gw[None, :] * spherical_jn(l, t) / t, axis=1)
    per_break = np.bincount(owner, weights=panel, minlength=len(counts))
    cum = np.concatenate([[0.0], np.cumsum(per_break)])
    out = np.empty_like(flat)
    out[order] = total - cum[np.searchsorted(breaks, flat[order])]
    return out.reshape(x.shape)


def potential_over_r2_transform(phi, l, k):
    """Order-l transform of Phi(r)/r^2 for a smoothstep-Coulomb Phi, l >= 1.

    Splits the radial integral at r2: a compact part over [r1, r2] plus the
    Coulomb tail, which reduces to an integral of j_l(x)/x.
    """
    if phi.closed_form != "smoothstep_coulomb":
        raise ProfileError("needs a smoothstep-Coulomb potential")
    if l < 1:
        raise ProfileError("order 0 transform of Phi/r^2 is not needed and not implemented")
    k = _nodes_of(k)
    p = phi.params
    q, r1, r2 = p["q"], p["r1"], p["r2"]
    panels = max(32, int(np.ceil((r2 - r1) * float(np.max(k, initial=0.0)) / 4.0)))
    r, w = _composite_gl(r1, r2, panels)
    inner = spherical_jn(l, np.outer(k, r)) @ (w * phi(r))
    tail = q / (4.0 * np.pi) * jl_over_x_tail(l, k * r2)
    return (-1j) ** l * _SQRT_2_PI * (inner + tail)


def potential_over_r2_transform_orders(phi, l_max, k):
    """:func:`potential_over_r2_transform` for orders 1..l_max; row 0 is zero."""
    if phi.closed_form != "smoothstep_coulomb":
        raise ProfileError("needs a smoothstep-Coulomb potential")
    k = _nodes_of(k)
    p = phi.params
    q, r1, r2 = p["q"], p["r1"], p["r2"]
    panels = max(32, int(np.ceil((r2 - r1) * float(np.max(k, initial=0.0)) / 4.0)))
    r, w = _composite_gl(r1, r2, panels)
    pw = w * phi(r)
    inner = np.empty((l_max + 1, k.size))
    for s in range(0, k.size, 256):
        kk = k[s : s + 256]
        inner[:, s : s + 256] = spherical_jn_orders(l_max, np.outer(kk, r)) @ pw
    tail = q / (4.0 * np.pi) * jl_over_x_tail_orders(l_max, k * r2)
    out = (-1j) ** np.arange(l_max + 1)[:, None] * _SQRT_2_PI * (inner + tail)
    out[0] = 0.0
    return out


def potential_over_r2_plateau(phi, l):
    """k -> 0 limit of :func:`potential_over_r2_transform`."""
    q = phi.params["q"]
    return (-1j) ** l * _SQRT_2_PI * q / (4.0 * np.pi) * spherical_jn_integral_inv_x(l)


# --------------------------------------------------------------------------
# axisymmetric angular functions
# --------------------------------------------------------------------------

Z_AXIS = np.array([0.0, 0.0, 1.0])


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("axis must be nonzero")
    return v / n


@dataclass(frozen=True, eq=False)
class AngularFunction:
    """f(x) = sum_l a_l P_l(axis . x) on the unit sphere.

    ``support_half_angle`` (if set) records that f is constant, equal to
    ``exterior_value``, at angles from the axis beyond that value.  ``exact``
    optionally evaluates the untruncated function of the polar angle.
    """

    legendre_coeff: np.ndarray
    axis: np.ndarray = field(default_factory=lambda: Z_AXIS.copy())
    support_half_angle: float | None = None
    exterior_value: float = 0.0
    meta: dict = field(default_factory=dict)
    exact: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "legendre_coeff", np.atleast_1d(np.asarray(self.legendre_coeff, float)))
        object.__setattr__(self, "axis", _unit(self.axis))

    @property
    def l_max(self):
        return len(self.legendre_coeff) - 1

    def coeff(self, l):
        return self.legendre_coeff[l] if l <= self.l_max else 0.0

    def at_angle(self, theta):
        """Value at polar angle ``theta`` from the axis (closed form when known)."""
        if self.exact is not None:
            return self.exact(np.asarray(theta, dtype=float))
        return self.series_at_angle(theta)

    def series_at_angle(self, theta):
        """Truncated Legendre series at polar angle ``theta``."""
        return legendre_eval(self.legendre_coeff, np.cos(theta))

    def evaluate(self, directions):
        d = np.asarray(directions, dtype=float)
        z = (d @ self.axis) / np.linalg.norm(d, axis=-1)
        return legendre_eval(self.legendre_coeff, z)

    def ylm_coefficients(self, trunc):
        """Coefficients against Y_lm for every channel of ``trunc``.

        Addition theorem: P_l(n.x) = 4 pi/(2l+1) sum_m conj(Y_lm(n)) Y_lm(x).
        """
        from scipy.special import sph_harm_y

        theta, phi = direction_angles(self.axis)
        ls, ms = trunc.ls, trunc.ms
        a = np.array([self.coeff(l) for l in ls])
        pref = 4.0 * np.pi / (2 * ls + 1) * a
        return pref * np.conj(sph_harm_y(ls, ms, theta, phi))

    def spherical_mean(self):
        """(4 pi)^{-1} int f dOmega = a_0."""
        return float(self.legendre_coeff[0])

    def y00_overlap(self):
        """<Y_00, f> = sqrt(4 pi) a_0."""
        return float(np.sqrt(4.0 * np.pi) * self.legendre_coeff[0])

    def l2_norm(self):
        l = np.arange(self.l_max + 1)
        return float(np.sqrt(np.sum(4.0 * np.pi / (2 * l + 1) * self.legendre_coeff**2)))

    def truncated(self, l_max):
        return AngularFunction(
            self.legendre_coeff[: l_max + 1], self.axis, self.support_half_angle, self.exterior_value,
            self.meta, self.exact,
        )

    def scaled(self, c):
        ex = self.exact
        return AngularFunction(
            c * self.legendre_coeff, self.axis, self.support_half_angle, c * self.exterior_value, self.meta,
            None if ex is None else (lambda th: c * ex(th)),
        )


def constant(value=1.0, axis=Z_AXIS):
    v = float(value)
    return AngularFunction(np.array([v]), axis, exact=lambda th: np.full(np.shape(th), v))


def angular_expand(func, l_max, axis=Z_AXIS, n_nodes=None, alias_tol=1e-8, warn=True):
    """Legendre coefficients of an axisymmetric function.

    ``func`` maps the polar angle from ``axis`` to values, or is an array of
    samples at the Gauss-Legendre nodes ``cos(theta) = z_j`` (``n_nodes`` of
    them, ascending).  Coefficients above ``alias_tol`` relative to the
    largest one in the top tenth of the band trigger an
    :class:`AliasingWarning`.
    """
    n = n_nodes or 2 * l_max + 2
    if n < 2 * l_max:
        raise ValueError("need at least 2*l_max quadrature nodes")
    z, w = leggauss(n)
    vals = np.asarray(func(np.arccos(z)) if callable(func) else func, dtype=float)
    if vals.shape != z.shape:
        raise ValueError(f"expected {len(z)} samples, got {vals.shape}")
    P = legvander(z, l_max)
    l = np.arange(l_max + 1)
    a = (2 * l + 1) / 2.0 * (P.T @ (w * vals))
    if warn and l_max >= 4:
        top = np.abs(a[int(0.9 * l_max) :]).max()
        scale = np.abs(a).max()
        if scale > 0 and top > alias_tol * scale:
            warnings.warn(
                f"angular expansion not resolved at l_max={l_max}: tail {top / scale:.2e}",
                AliasingWarning,
                stacklevel=2,
            )
    return AngularFunction(a, axis)


def apply_L2(a):
    """Angular momentum squared: a_l -> l(l+1) a_l."""
    l = np.arange(a.l_max + 1)
    return AngularFunction(l * (l + 1) * a.legendre_coeff, a.axis, a.support_half_angle, 0.0, a.meta)


def angular_bump_coefficients(half_angle, l_max, sharpness=1.0, panels=64):
    """Legendre coefficients of psi(theta/half_angle) and its integral int psi sin dtheta."""
    th, w = _composite_gl(0.0, half_angle, panels)
    psi = bump_shape(th / half_angle, sharpness)
    ws = w * psi * np.sin(th)
    P = legvander(np.cos(th), l_max)
    l = np.arange(l_max + 1)
    return (2 * l + 1) / 2.0 * (P.T @ ws), float(ws.sum())


def cap(half_angle, axis=Z_AXIS, l_max=64, sharpness=1.0):
    """Smooth angular bump psi(theta/half_angle) around ``axis`` (1 on the axis)."""
    if not 0 < half_angle <= np.pi:
        raise ValueError("half_angle must lie in (0, pi]")
    a, _ = angular_bump_coefficients(half_angle, l_max, sharpness)
    return AngularFunction(
        a,
        axis,
        support_half_angle=float(half_angle),
        meta={"kind": "cap", "sharpness": sharpness},
        exact=lambda th: bump_shape(th / half_angle, sharpness),
    )


# --------------------------------------------------------------------------
# test functions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunctionData:
    """Generating position-space data of f = w^{-1/2} h^ + i w^{1/2} g^."""

    __test__ = False

    h_parts: tuple
    g_parts: tuple
    dilation: float = 1.0


def _normalise_parts(parts):
    out = []
    for p in parts or ():
        if len(p) == 3:
            prof, ang, offset = p
            if offset is not None and np.any(np.asarray(offset) != 0):
                raise ProfileError("off-origin supports are not supported")
        else:
            prof, ang = p
        if not prof.compact:
            raise ProfileError("test-function profiles must be compactly supported")
        out.append((prof, ang))
    return tuple(out)


def parts_transform(parts, grid, trunc):
    """Channel coefficients of the Fourier transform of sum_p profile_p * angular_p."""
    c = np.zeros((trunc.n_channels, grid.n_nodes), complex)
    for prof, ang in parts:
        yc = ang.ylm_coefficients(trunc)
        live = np.nonzero(yc != 0)[0]
        if len(live) == 0:
            continue
        radial = sbt_orders(prof, int(trunc.ls[live].max()), grid.nodes)
        c[live] += yc[live, None] * radial[trunc.ls[live]]
    return c


def _check_outside_cone(parts, exclude_cone):
    axis, half = exclude_cone
    axis = _unit(axis)
    for _, ang in parts:
        if ang.support_half_angle is None:
            raise ProfileError("angular factor has full support; it meets the excluded cone")
        sep = np.arccos(np.clip(axis @ ang.axis, -1.0, 1.0))
        if sep <= ang.support_half_angle + half:
            raise ProfileError(
                f"support (half-angle {np.degrees(ang.support_half_angle):.1f} deg) "
                f"meets the excluded cone (half-angle {np.degrees(half):.1f} deg)"
            )


def build_test_function(h_parts, g_parts, grid, trunc, exclude_cone=None):
    """f = w^{-1/2} h^ + i w^{1/2} g^ with provenance for position-space oracles.

    Parts are ``(RadialProfile, AngularFunction[, offset])``.  With
    ``exclude_cone=(axis, half_angle)`` every part must have angular support
    disjoint from that cone.
    """
    h_parts = _normalise_parts(h_parts)
    g_parts = _normalise_parts(g_parts)
    if exclude_cone is not None:
        _check_outside_cone(h_parts + g_parts, exclude_cone)
    om = grid.nodes
    hc = parts_transform(h_parts, grid, trunc)
    gc = parts_transform(g_parts, grid, trunc)
    coeff = om**-0.5 * hc + 1j * om**0.5 * gc
    return ModeFunction(grid, trunc, coeff, REGULAR, TestFunctionData(h_parts, g_parts))


# --------------------------------------------------------------------------
# dilations
# --------------------------------------------------------------------------


def _bary_weights(x):
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    return 1.0 / d.prod(axis=1)


def _interp_matrix(grid, targets):
    """Sparse-by-panel Lagrange interpolation in ln(omega) at ``targets``.

    Rows for targets outside [ir_cutoff, uv_cutoff] are zero.
    """
    p = grid.nodes_per_shell
    t_nodes = np.log(grid.nodes).reshape(grid.n_panels, p)
    edges = grid.panel_edges
    M = np.zeros((len(targets), grid.n_nodes))
    inside = (targets >= edges[0]) & (targets <= edges[-1])
    panel = np.clip(np.searchsorted(edges, targets, side="right") - 1, 0, grid.n_panels - 1)
    for j in np.nonzero(inside)[0]:
        pi = panel[j]
        x = t_nodes[pi]
        bw = _bary_weights(x)
        diff = np.log(targets[j]) - x
        hit = np.nonzero(np.abs(diff) < 1e-15)[0]
        if len(hit):
            row = np.zeros(p)
            row[hit[0]] = 1.0
        else:
            row = bw / diff
            row /= row.sum()
        M[j, pi * p : (pi + 1) * p] = row
    return M


def dilate(f, lam, ir_tol=1e-10):
    """f_lam(k) = lam^{3/2} f(lam k), resampled by interpolation in ln(omega).

    Raises :class:`DilationRangeError` when the part of ``f`` that the
    dilation pushes below the infrared cutoff exceeds ``ir_tol`` (relative,
    in squared norm).
    """
    if lam <= 0:
        raise ValueError("dilation factor must be positive")
    grid = f.grid
    if lam == 1:
        return f.with_coeff(f.coeff.copy(), provenance=f.provenance)
    w = grid.weights
    total = float(np.sum(np.abs(f.coeff) ** 2 @ w))
    if lam > 1:
        lost_mask = grid.nodes < lam * grid.ir_cutoff
    else:
        lost_mask = grid.nodes > lam * grid.uv_cutoff
    lost = float(np.sum(np.abs(f.coeff[:, lost_mask]) ** 2 @ w[lost_mask]))
    if lam > 1 and total > 0 and lost > ir_tol * total:
        raise DilationRangeError(
            f"dilation by {lam} pushes a relative weight {lost / total:.2e} below the infrared "
            f"cutoff {grid.ir_cutoff:.3e}; use a cutoff of about {grid.ir_cutoff / lam:.3e} or smaller"
        )
    M = _interp_matrix(grid, lam * grid.nodes)
    coeff = lam**1.5 * (f.coeff @ M.T)
    prov = f.provenance
    if isinstance(prov, TestFunctionData):
        prov = TestFunctionData(
            tuple((p.rescaled(lam, -2.0), a) for p, a in prov.h_parts),
            tuple((p.rescaled(lam, -1.0), a) for p, a in prov.g_parts),
            prov.dilation * lam,
        )
    out = ModeFunction(grid, f.trunc, coeff, f.ir_flag, prov)
    return out


def dilation_loss(f, lam):
    """Relative squared norm of ``f`` mapped outside the grid by dilation."""
    grid = f.grid
    w = grid.weights
    total = float(np.sum(np.abs(f.coeff) ** 2 @ w))
    mask = grid.nodes < lam * grid.ir_cutoff if lam > 1 else grid.nodes > lam * grid.uv_cutoff
    return float(np.sum(np.abs(f.coeff[:, mask]) ** 2 @ w[mask])) / total if total else 0.0

