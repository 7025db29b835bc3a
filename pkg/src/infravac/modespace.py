"""Discretised one-particle space L^2(R^3, d^3k) in a (l, m) x radial basis.

A mode function is stored as coefficients ``c[channel, node]`` of the
expansion ``u(k) = sum_lm c_lm(|k|) Y_lm(k/|k|)`` sampled at the radial
nodes of a :class:`RadialGrid`.  The radial measure is ``omega^2 d omega``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss

from .harmonics import direction_angles, ylm_table

REGULAR = "regular"
IR_CUTOFF = "ir_cutoff"

POSITION_CONJ = "position_conj"
MOMENTUM_CONJ = "momentum_conj"

_BOUNDARY_RTOL = 1e-12


class GridError(ValueError):
    """Invalid grid construction or incompatible grids."""


class TruncationError(ValueError):
    """Angular truncation too small for the requested operation."""


# --------------------------------------------------------------------------
# radial grid
# --------------------------------------------------------------------------


def _panel_rule(a, b, n):
    """Gauss-Legendre in ln(omega) on [a, b] for the measure omega^2 d omega.

    The weights get a two-moment correction so that the rule integrates
    ``omega^2 d omega`` and ``omega^{-1} d omega`` exactly; for n >= 8 the
    correction is below rounding.
    """
    x, wx = leggauss(n)
    ta, tb = np.log(a), np.log(b)
    t = 0.5 * (ta + tb) + 0.5 * (tb - ta) * x
    omega = np.exp(t)
    w = 0.5 * (tb - ta) * wx * omega**3
    inv3 = omega**-3.0
    m_mass = (b**3 - a**3) / 3.0
    m_log = np.log(b / a)
    mat = np.array([[w.sum(), (w * inv3).sum()], [(w * inv3).sum(), (w * inv3**2).sum()]])
    alpha, beta = np.linalg.solve(mat, [m_mass, m_log])
    return omega, w * (alpha + beta * inv3)


def _top_panel_edges(eps1, uv_cutoff, max_panel_width):
    edges = [eps1]
    e = eps1
    while e < uv_cutoff:
        step = min(e, max_panel_width)
        nxt = e + step
        if uv_cutoff - nxt < 0.25 * step:
            nxt = uv_cutoff
        edges.append(nxt)
        e = nxt
    return np.array(edges)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Shell-aligned radial quadrature on [eps_{N+1}, uv_cutoff].

    Shell ``i`` (1-based) is ``[eps_{i+1}, eps_i]``; above ``eps_1`` the
    interval up to the UV cutoff is split into octave panels, then panels
    of width at most ``max_panel_width``.  Every panel carries
    ``nodes_per_shell`` nodes.  Nodes are stored in increasing order.
    """

    shell_boundaries: np.ndarray
    nodes_per_shell: int
    uv_cutoff: float
    nodes: np.ndarray
    weights: np.ndarray
    panel_edges: np.ndarray
    max_panel_width: float

    @property
    def n_shells(self):
        return len(self.shell_boundaries) - 1

    @property
    def ir_cutoff(self):
        return float(self.shell_boundaries[-1])

    @property
    def eps1(self):
        return float(self.shell_boundaries[0])

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_panels(self):
        return len(self.panel_edges) - 1

    @cached_property
    def key(self):
        return (
            tuple(np.round(self.shell_boundaries, 15)),
            self.nodes_per_shell,
            float(self.uv_cutoff),
            float(self.max_panel_width),
        )

    def same_as(self, other):
        return self is other or self.key == other.key

    def shell_slice(self, i):
        """Node slice of shell ``i`` (1 <= i <= n_shells)."""
        n = self.n_shells
        if not 1 <= i <= n:
            raise GridError(f"shell index {i} outside 1..{n}")
        p = self.nodes_per_shell
        start = (n - i) * p
        return slice(start, start + p)

    @property
    def top_slice(self):
        return slice(self.n_shells * self.nodes_per_shell, self.n_nodes)

    def panel_of_node(self):
        return np.repeat(np.arange(self.n_panels), self.nodes_per_shell)

    def boundary_index(self, eps):
        """Index ``n`` with ``eps == eps_n`` (1-based); raises otherwise."""
        b = self.shell_boundaries
        hit = np.nonzero(np.abs(b - eps) <= _BOUNDARY_RTOL * b)[0]
        if len(hit) == 0:
            raise GridError(f"{eps!r} is not a shell boundary of this grid")
        return int(hit[0]) + 1

    def with_extra_ir_shells(self, count=1, ratio=None):
        """Grid with ``count`` more shells appended below the IR cutoff."""
        b = list(self.shell_boundaries)
        if ratio is None:
            ratio = b[-1] / b[-2]
        for _ in range(count):
            b.append(b[-1] * ratio)
        return make_grid(b, self.nodes_per_shell, self.uv_cutoff, self.max_panel_width)

    def describe(self):
        return {
            "n_shells": self.n_shells,
            "nodes_per_shell": self.nodes_per_shell,
            "n_nodes": self.n_nodes,
            "ir_cutoff": self.ir_cutoff,
            "uv_cutoff": float(self.uv_cutoff),
            "max_panel_width": float(self.max_panel_width),
        }


def make_grid(shell_boundaries, nodes_per_shell=16, uv_cutoff=128.0, max_panel_width=4.0):
    b = np.asarray(shell_boundaries, dtype=float)
    if b.ndim != 1 or len(b) < 2:
        raise GridError("need at least two shell boundaries")
    if np.any(b <= 0) or np.any(np.diff(b) >= 0):
        raise GridError("shell boundaries must be positive and strictly decreasing")
    if int(nodes_per_shell) != nodes_per_shell or nodes_per_shell < 2:
        raise GridError("nodes_per_shell must be an integer >= 2")
    if not uv_cutoff > b[0]:
        raise GridError("uv_cutoff must exceed the first shell boundary")
    if max_panel_width <= 0:
        raise GridError("max_panel_width must be positive")
    n = int(nodes_per_shell)
    edges = np.concatenate([b[::-1], _top_panel_edges(b[0], float(uv_cutoff), max_panel_width)[1:]])
    nodes, weights = [], []
    for a, c in zip(edges[:-1], edges[1:]):
        om, w = _panel_rule(a, c, n)
        nodes.append(om)
        weights.append(w)
    return RadialGrid(
        shell_boundaries=b,
        nodes_per_shell=n,
        uv_cutoff=float(uv_cutoff),
        nodes=np.concatenate(nodes),
        weights=np.concatenate(weights),
        panel_edges=edges,
        max_panel_width=float(max_panel_width),
    )


def geometric_boundaries(eps1, q_ratio, n_shells):
    """``eps_i = eps1 * q_ratio^(i-1)`` for i = 1..n_shells+1."""
    return eps1 * q_ratio ** np.arange(n_shells + 1)


# --------------------------------------------------------------------------
# angular truncation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AngularTruncation:
    """Channels (l, m) with l <= l_max and |m| <= min(l, m_max).

    ``m_max=None`` keeps every m, giving ``(l_max + 1)^2`` channels.  A
    finite ``m_max`` is an invariant subspace for every operator in this
    package (they act channelwise or pair m with -m).
    """

    l_max: int
    m_max: int | None = None

    def __post_init__(self):
        if self.l_max < 0:
            raise TruncationError("l_max must be nonnegative")
        if self.m_max is not None and self.m_max < 0:
            raise TruncationError("m_max must be nonnegative")

    @cached_property
    def channels(self):
        out = []
        for l in range(self.l_max + 1):
            mm = l if self.m_max is None else min(l, self.m_max)
            out.extend((l, m) for m in range(-mm, mm + 1))
        return tuple(out)

    @cached_property
    def ls(self):
        return np.array([c[0] for c in self.channels])

    @cached_property
    def ms(self):
        return np.array([c[1] for c in self.channels])

    @cached_property
    def index(self):
        return {c: i for i, c in enumerate(self.channels)}

    @cached_property
    def conj_perm(self):
        """Index of channel (l, -m) for every channel (l, m)."""
        return np.array([self.index[(l, -m)] for l, m in self.channels])

    @property
    def n_channels(self):
        return len(self.channels)

    @property
    def key(self):
        return (self.l_max, self.m_max)

    def same_as(self, other):
        return self is other or self.key == other.key


# --------------------------------------------------------------------------
# mode functions
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModeFunction:
    grid: RadialGrid
    trunc: AngularTruncation
    coeff: np.ndarray
    ir_flag: str = REGULAR
    provenance: object = field(default=None, repr=False)

    def __post_init__(self):
        shape = (self.trunc.n_channels, self.grid.n_nodes)
        c = np.asarray(self.coeff, dtype=complex)
        if c.shape != shape:
            raise GridError(f"coefficient shape {c.shape} does not match {shape}")
        object.__setattr__(self, "coeff", c)
        if self.ir_flag not in (REGULAR, IR_CUTOFF):
            raise ValueError(f"unknown ir_flag {self.ir_flag!r}")

    def _check(self, other):
        check_compatible(self, other)

    def with_coeff(self, coeff, ir_flag=None, provenance=None):
        return ModeFunction(self.grid, self.trunc, coeff, ir_flag or self.ir_flag, provenance)

    def __add__(self, other):
        self._check(other)
        flag = IR_CUTOFF if IR_CUTOFF in (self.ir_flag, other.ir_flag) else REGULAR
        return self.with_coeff(self.coeff + other.coeff, flag)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return self.with_coeff(-self.coeff)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return self.with_coeff(scalar * self.coeff)

    __rmul__ = __mul__

    def channel(self, l, m=0):
        return self.coeff[self.trunc.index[(l, m)]]

    def norm(self):
        return float(np.sqrt(max(inner_product(self, self).real, 0.0)))


def check_compatible(u, v):
    if not u.grid.same_as(v.grid):
        raise GridError("mode functions live on different radial grids")
    if not u.trunc.same_as(v.trunc):
        raise GridError("mode functions use different angular truncations")


def zeros(grid, trunc):
    return ModeFunction(grid, trunc, np.zeros((trunc.n_channels, grid.n_nodes), complex))


def from_channels(grid, trunc, values):
    """Mode function from a mapping ``{(l, m): radial samples}``."""
    c = np.zeros((trunc.n_channels, grid.n_nodes), complex)
    for ch, samples in values.items():
        c[trunc.index[ch]] = samples
    return ModeFunction(grid, trunc, c)


def random_mode_function(grid, trunc, rng, above=None):
    """Discrete white noise: every node carries the same expected weight.

    Coefficients are Gaussian with variance proportional to 1/w_j, so
    shells near the infrared cutoff are sampled as densely as the large
    ultraviolet panels.  Optionally zero below the boundary ``above``.
    """
    shape = (trunc.n_channels, grid.n_nodes)
    c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(grid.weights)
    u = ModeFunction(grid, trunc, c)
    return u if above is None else project_above(above, u)


def inner_product(u, v):
    """<u, v>, antilinear in the first argument."""
    check_compatible(u, v)
    return complex(np.sum((np.conj(u.coeff) * v.coeff) @ u.grid.weights))


def norm(u):
    return u.norm()


def symplectic_form(u, v):
    """sigma(u, v) = -Im <u, v>."""
    return -inner_product(u, v).imag


def apply_radial_power(s, u, regularized=False):
    """Multiply by omega^s, or by the regularised omega_r^s.

    ``omega_r`` equals ``omega`` below ``eps_1`` and the constant ``eps_1``
    on the region ``|k| >= eps_1``.
    """
    om = u.grid.nodes
    if regularized:
        om = np.where(om < u.grid.eps1, om, u.grid.eps1)
    flag = u.ir_flag
    if s < 0:
        lowest = u.coeff[:, u.grid.shell_slice(u.grid.n_shells)]
        if np.any(lowest != 0):
            flag = IR_CUTOFF
    return u.with_coeff(u.coeff * om**s, flag)


def apply_involution(kind, u):
    """Antiunitary involution on coefficients.

    ``position_conj`` is (Gamma u)(k) = conj(u(-k)), acting as
    c_lm -> (-1)^(l+m) conj(c_l,-m).  ``momentum_conj`` is pointwise
    conjugation in momentum space, c_lm -> (-1)^m conj(c_l,-m).
    """
    t = u.trunc
    if kind == POSITION_CONJ:
        sign = (-1.0) ** (t.ls + t.ms)
    elif kind == MOMENTUM_CONJ:
        sign = (-1.0) ** t.ms
    else:
        raise ValueError(f"unknown involution {kind!r}")
    return u.with_coeff(sign[:, None] * np.conj(u.coeff[t.conj_perm]))


def project_above(eps, u):
    """P_eps: zero every node below the shell boundary ``eps``."""
    u.grid.boundary_index(eps)
    keep = u.grid.nodes > eps
    return u.with_coeff(u.coeff * keep)


def project_shell(i, u):
    """P_i: keep only shell i = [eps_{i+1}, eps_i]."""
    c = np.zeros_like(u.coeff)
    sl = u.grid.shell_slice(i)
    c[:, sl] = u.coeff[:, sl]
    return u.with_coeff(c)


def project_top(u):
    """Part of ``u`` on |k| >= eps_1."""
    return project_above(u.grid.eps1, u)


def xi_ray(grid, i):
    """Radial ray omega^{-3/2} on shell i, sampled at its nodes."""
    return grid.nodes[grid.shell_slice(i)] ** -1.5


def xi_norm_sq(grid, i):
    sl = grid.shell_slice(i)
    return float(np.sum(grid.weights[sl] * grid.nodes[sl] ** -3.0))


def q_channel_mask(trunc, l_top):
    return (trunc.ls >= 1) & (trunc.ls <= l_top)


def check_aligned(grid, config):
    """Config shells must coincide with the first shells of the grid."""
    cb = np.asarray(config.shell_boundaries)
    gb = grid.shell_boundaries
    if len(cb) > len(gb) or not np.allclose(cb, gb[: len(cb)], rtol=_BOUNDARY_RTOL, atol=0):
        raise GridError("KPR shells are not aligned with the grid shells")


def q_component(i, coeff, grid, trunc, l_top):
    """Q_i applied to a raw coefficient array (zero outside shell i)."""
    out = np.zeros_like(coeff)
    mask = q_channel_mask(trunc, l_top)
    if not mask.any():
        return out
    sl = grid.shell_slice(i)
    xi = xi_ray(grid, i)
    w = grid.weights[sl]
    amp = (coeff[mask][:, sl] @ (w * xi)) / np.sum(w * xi * xi)
    out[np.ix_(mask, np.arange(sl.start, sl.stop))] = amp[:, None] * xi[None, :]
    return out


def apply_Q(i, u, config):
    """Q_i = |xi_i><xi_i| / <xi_i|xi_i> (x) sum_{0<l<=L_i} |Y_lm><Y_lm|."""
    check_aligned(u.grid, config)
    if not 1 <= i <= config.n_shells:
        raise GridError(f"shell index {i} outside 1..{config.n_shells}")
    l_top = config.max_l(i)
    if u.trunc.l_max < l_top:
        raise TruncationError(f"Q_{i} needs l up to {l_top}; truncation has l_max={u.trunc.l_max}")
    return u.with_coeff(q_component(i, u.coeff, u.grid, u.trunc, l_top))


def synthesize(u, node_index, directions):
    """Pointwise values u(k) at |k| = nodes[node_index] along unit ``directions``."""
    theta, phi = direction_angles(directions)
    Y = ylm_table(u.trunc.ls, u.trunc.ms, theta, phi)
    return u.coeff[:, node_index] @ Y


def replace_grid_metadata(u, **kw):
    return replace(u, **kw)
