"""One-dimensional effective Hamiltonians ``-mu d^2/dx^2 - V`` and their counting functions.

Each channel is discretised with piecewise-linear elements on a graded mesh
whose step follows the local wavelength ``sqrt(mu / (|V| + lambda))``. The mass
and potential matrices are the average of the lumped and consistent ones,
which cancels the leading dispersion error of linear elements while keeping
the pencil tridiagonal. The number of eigenvalues below ``-lambda`` is then
the negative inertia of ``K - M_V + lambda M``, an exact integer for the
discrete problem.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite as H
from numpy.polynomial import polynomial as P
from scipy import integrate, optimize

from .coupling import CouplingFunction
from .errors import InsufficientGrowth, NotConverged
from .inertia import tridiagonal_negative_count

log = logging.getLogger(__name__)

FAMILIES = ("power", "power_with_limit", "signed_power", "compact_bump", "gaussian", "square_well")


@dataclass(frozen=True)
class DecayProfile:
    """Decaying perturbation ``eps(x)``.

    Families
    --------
    power            ``c (1 + x^2)^(-alpha/2)``, ``c > 0``
    power_with_limit ``L / (1 + x^2)`` (``alpha = 2``, ``x^2 eps -> L``)
    signed_power     as ``power`` but ``c`` may be negative
    compact_bump     ``c (1 - (x/R)^2)^5`` on ``|x| < R``; a C^4 bump
    gaussian         ``c exp(-(x/R)^2)``
    square_well      ``c`` on ``|x| < R``
    """

    family: str
    c: float
    alpha: float = 2.0
    R: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown decay family {self.family!r}")
        if self.family == "power_with_limit":
            object.__setattr__(self, "alpha", 2.0)
        if self.family == "power" and self.c <= 0:
            raise ValueError("power profile needs c > 0; use signed_power otherwise")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.R <= 0:
            raise ValueError("R must be positive")

    @classmethod
    def power(cls, c, alpha):
        return cls("power", float(c), float(alpha))

    @classmethod
    def power_with_limit(cls, L):
        return cls("power_with_limit", float(L), 2.0)

    @classmethod
    def signed_power(cls, c, alpha):
        return cls("signed_power", float(c), float(alpha))

    @classmethod
    def compact_bump(cls, c, R):
        return cls("compact_bump", float(c), np.inf, float(R))

    @classmethod
    def gaussian(cls, c, width):
        return cls("gaussian", float(c), np.inf, float(width))

    @classmethod
    def square_well(cls, depth, R):
        return cls("square_well", float(depth), np.inf, float(R))

    @property
    def is_power(self):
        return self.family in ("power", "power_with_limit", "signed_power")

    @property
    def compact(self):
        return self.family in ("compact_bump", "square_well")

    @property
    def breakpoints(self):
        """Points in ``x >= 0`` where the profile is not smooth."""
        return (self.R,) if self.compact else ()

    @property
    def limit_L(self):
        """``lim x^2 eps(x)`` when it is finite."""
        if self.is_power:
            if self.alpha == 2:
                return self.c
            if self.alpha > 2:
                return 0.0
            return math.copysign(math.inf, self.c)
        return 0.0

    @property
    def is_S_plus(self):
        return self.is_power and self.c > 0

    def sup(self):
        return abs(self.c)

    def __call__(self, x, derivative=0):
        x = np.asarray(x, dtype=float)
        n = int(derivative)
        if self.is_power:
            a = self.alpha / 2
            p = np.array([1.0])
            for j in range(n):
                # P_{j+1} = P_j' (1 + x^2) - 2 (a + j) x P_j
                p = P.polysub(P.polymul(P.polyder(p) if p.size > 1 else [0.0], [1.0, 0.0, 1.0]),
                              P.polymul([0.0, 2 * (a + j)], p))
            return self.c * P.polyval(x, p) * (1 + x * x) ** (-a - n)
        s = x / self.R
        if self.family == "gaussian":
            coef = np.zeros(n + 1)
            coef[n] = 1.0
            return self.c * (-1) ** n * H.hermval(s, coef) * np.exp(-s * s) / self.R**n
        inside = np.abs(s) < 1
        if self.family == "square_well":
            return np.where(inside, self.c if n == 0 else 0.0, 0.0)
        p = P.polypow([1.0, 0.0, -1.0], 5)
        for _ in range(n):
            p = P.polyder(p)
        return np.where(inside, self.c * P.polyval(s, p) / self.R**n, 0.0)

    def envelope_radius(self, level):
        """Smallest ``r`` with ``|eps(x)| <= level`` for all ``|x| >= r``."""
        if level <= 0:
            return math.inf
        c = abs(self.c)
        if c <= level:
            return 0.0
        if self.is_power:
            return math.sqrt((c / level) ** (2 / self.alpha) - 1)
        if self.family == "gaussian":
            return self.R * math.sqrt(math.log(c / level))
        if self.family == "square_well":
            return self.R
        return self.R * math.sqrt(1 - (level / c) ** 0.2)

    def decay_class(self, n=4, x_max=1e6, samples=400):
        """Sampled test of membership in ``S_{n, alpha}`` and ``S^+``.

        Returns the bound constants ``c_l = max |u^(l)| (1 + |x|)^(alpha + l)``
        over a log grid, and whether they level off over the last decade.
        """
        x = np.concatenate([np.linspace(0, 1, 50), np.geomspace(1, x_max, samples)])
        alpha = self.alpha if np.isfinite(self.alpha) else 8.0
        consts, bounded = [], True
        for ell in range(n + 1):
            r = np.abs(self(x, ell)) * (1 + x) ** (alpha + ell)
            consts.append(float(r.max()))
            last = r[x >= x_max / 10].max()
            prev = r[(x >= x_max / 100) & (x < x_max / 10)].max()
            if last > 1.05 * prev + 1e-300:
                bounded = False
        tail = self(x[x >= 10]) * x[x >= 10] ** alpha
        plus = bool(np.all(tail > 0) and tail[-1] >= 0.5 * tail.min())
        return {"constants": consts, "in_S": bounded, "S_plus": plus and self.is_S_plus}


@dataclass(frozen=True, eq=False)
class Channel:
    """``-mu d^2/dx^2 - coupling(x) eps(x)``; ``coupling`` is a number (mean field) or a periodic function."""

    mu: float
    profile: DecayProfile
    coupling: object = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    @property
    def mean_field(self):
        return np.isscalar(self.coupling)

    @property
    def coefficient(self):
        """Mean-field coefficient (the mean of the coupling function otherwise)."""
        return float(self.coupling) if self.mean_field else float(self.coupling.mean)

    def coupling_sup(self):
        return abs(float(self.coupling)) if self.mean_field else self.coupling.sup()

    def coupling_degree(self):
        return 0 if self.mean_field else self.coupling.degree

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        g = self.coupling if self.mean_field else self.coupling(x)
        return g * self.profile(x)

    def envelope(self, x):
        return self.coupling_sup() * np.abs(self.profile(x))


@dataclass(frozen=True, eq=False)
class EffectiveModel:
    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.channels:
            raise ValueError("effective model needs at least one channel")

    @classmethod
    def single(cls, mu, profile, coupling=1.0):
        return cls((Channel(float(mu), profile, coupling),))

    def scaled(self, factor):
        return EffectiveModel(tuple(
            Channel(ch.mu, ch.profile, ch.coupling * factor if ch.mean_field else ch.coupling.scaled(factor))
            for ch in self.channels))

    @property
    def alpha(self):
        return min(ch.profile.alpha for ch in self.channels)

    def sup_potential(self):
        return max(ch.coupling_sup() * ch.profile.sup() for ch in self.channels)


def edge_model(report, etas, profile, full=False):
    """Effective model at a gap edge: channels ``-mu_m d^2 - (+/-) 2 pi eta_m eps``.

    ``etas`` are the coupling functions of the extremizers, in the order of
    ``report.extremizers``. With ``full=False`` the mean value replaces each
    coupling function.
    """
    sign = 1.0 if report.side == "+" else -1.0
    chans = []
    for ext, eta in zip(report.extremizers, etas):
        if full:
            chans.append(Channel(ext.mu, profile, eta.scaled(sign * 2 * np.pi)))
        else:
            chans.append(Channel(ext.mu, profile, sign * 2 * np.pi * eta.mean))
    return EffectiveModel(tuple(chans))


# --- discretisation -------------------------------------------------------------

@dataclass(frozen=True)
class Mesh1D:
    nodes: np.ndarray  # includes the two Dirichlet end points

    @property
    def n_interior(self):
        return self.nodes.size - 2

    @property
    def steps(self):
        return np.diff(self.nodes)


def uniform_mesh(R, n):
    return Mesh1D(np.linspace(-R, R, n + 2))


def graded_mesh(channel, lam, R, kappa=0.25):
    """Symmetric mesh on ``[-R, R]`` with step ``kappa / local wavenumber``."""
    mu = channel.mu
    deg = channel.coupling_degree()
    s_osc = kappa / deg if deg else math.inf
    s_max = kappa * math.sqrt(mu / lam)

    def density(x):
        env = channel.envelope(x)
        s = np.minimum(kappa * np.sqrt(mu / (env + lam)), s_max)
        # oscillations of the coupling only need resolving where the potential is felt
        s = np.where(env > lam, np.minimum(s, s_osc), s)
        return 1.0 / s

    breaks = sorted({0.0, R, *[b for b in channel.profile.breakpoints if 0 < b < R]})
    half = [np.array([0.0])]
    for a, b in zip(breaks, breaks[1:]):
        if b <= max(2 * a, 1.0):
            aux = np.linspace(a, b, 2001)
        else:
            lo = max(a, 1.0)
            aux = np.unique(np.concatenate([np.linspace(a, lo, 501),
                                            np.geomspace(lo, b, 200 * max(1, int(math.log10(b / lo)) + 1))]))
        rho = density(aux)
        phi = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(aux))])
        cells = max(2, int(math.ceil(phi[-1])))
        targets = np.linspace(0.0, phi[-1], cells + 1)
        half.append(np.interp(targets, phi, aux)[1:])
    pos = np.concatenate(half)
    return Mesh1D(np.concatenate([-pos[::-1], pos[1:]]))


def tridiagonal_pencil(channel, mesh):
    """``(K, M_V, M)`` for the interior nodes, each as ``(diag, off)``."""
    x = mesh.nodes
    h = np.diff(x)
    tiny = 1e-12 * h
    va = channel.potential(x[:-1] + tiny)
    vb = channel.potential(x[1:] - tiny)

    def mixed(fa, fb):
        # average of lumped and consistent element matrices for a linear coefficient
        d = np.zeros(x.size)
        d[:-1] += h * (fa / 4 + (3 * fa + fb) / 24)
        d[1:] += h * (fb / 4 + (fa + 3 * fb) / 24)
        off = h * (fa + fb) / 24
        return d[1:-1], off[1:-1]

    kd = np.zeros(x.size)
    kd[:-1] += channel.mu / h
    kd[1:] += channel.mu / h
    K = (kd[1:-1], -channel.mu / h[1:-1])
    one = np.ones_like(h)
    return K, mixed(va, vb), mixed(one, one)


def count_matrix(channel, mesh, lam):
    """Tridiagonal ``K - M_V + lam M`` whose negative inertia is the count."""
    (kd, ko), (vd, vo), (md, mo) = tridiagonal_pencil(channel, mesh)
    return kd - vd + lam * md, ko - vo + lam * mo


def _channel_count(channel, mesh, lam):
    d, o = count_matrix(channel, mesh, lam)
    return tridiagonal_negative_count(d, o)


def default_radius(channel, lam, r_factor=1.0):
    """Radius beyond which the potential stays below ``lam / 4``, plus decay room."""
    g = channel.coupling_sup()
    if g == 0:
        return 1.0
    r = channel.profile.envelope_radius(lam / (4 * g))
    return max(1.0, r_factor * r + 6 * math.sqrt(channel.mu / lam))


@dataclass(frozen=True)
class CountResult:
    value: int
    converged: bool
    R: float
    n: int
    history: tuple = ()

    def __int__(self):
        return self.value

    __index__ = __int__


def count_below(model: EffectiveModel, lam: float, R: float | None = None, n: int | None = None, *,
                kappa: float = 0.25, max_refine: int = 4, rtol: float = 0.0,
                raise_on_failure: bool = True) -> CountResult:
    """Number of eigenvalues of the effective model below ``-lam``.

    Each channel is counted at a base resolution and again with the radius
    doubled and the step halved; the count is converged when these agree (to
    within ``rtol`` relative, exactly by default). With ``n`` given the base
    mesh is uniform with ``n`` interior points on ``[-R, R]``; otherwise the
    graded mesh with parameter ``kappa`` is used.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    total, conv, Rs, ns, hist = 0, True, [], [], []
    for ch in model.channels:
        r0 = default_radius(ch, lam) if R is None else float(R)

        def mesh_for(level):
            r = r0 * 2**level
            if n is not None:
                return uniform_mesh(r, (n + 1) * 4**level - 1)
            return graded_mesh(ch, lam, r, kappa / 2**level)

        prev = None
        for level in range(max_refine + 1):
            mesh = mesh_for(level)
            c = _channel_count(ch, mesh, lam)
            hist.append((level, mesh.n_interior, c))
            if prev is not None and abs(c - prev) <= rtol * max(c, 1):
                break
            prev = c
        else:
            conv = False
            if raise_on_failure:
                raise NotConverged(f"count at lambda={lam:.3g} did not stabilise", hist)
        total += c
        Rs.append(mesh.nodes[-1])
        ns.append(mesh.n_interior)
    return CountResult(int(total), conv, float(max(Rs)), int(sum(ns)), tuple(hist))


@dataclass(frozen=True, eq=False)
class CountCurve:
    lambdas: np.ndarray  # descending
    counts: np.ndarray
    radii: np.ndarray
    sizes: np.ndarray
    converged: np.ndarray
    semiclassical: np.ndarray | None = None

    def rows(self):
        for i in range(self.lambdas.size):
            sc = None if self.semiclassical is None else float(self.semiclassical[i])
            yield (float(self.lambdas[i]), int(self.counts[i]), float(self.radii[i]),
                   int(self.sizes[i]), bool(self.converged[i]), sc)

    def is_monotone(self):
        return bool(np.all(np.diff(self.counts) >= 0))

    def constant_over_last(self, decades=1.0):
        """True when the count does not change over the last ``decades`` of lambda."""
        lam_min = self.lambdas.min()
        sel = self.lambdas <= lam_min * 10**decades
        return bool(np.unique(self.counts[sel]).size == 1)


def count_curve(model: EffectiveModel, lambda_min: float, lambda_max: float, points: int = 25,
                semiclassical: bool | None = None, **kw) -> CountCurve:
    """Counts on a log-spaced, descending lambda grid."""
    if not 0 < lambda_min < lambda_max:
        raise ValueError("need 0 < lambda_min < lambda_max")
    lams = np.geomspace(lambda_max, lambda_min, points)
    res = [count_below(model, lam, **kw) for lam in lams]
    if semiclassical is None:
        semiclassical = all(ch.mean_field for ch in model.channels)
    sc = np.array([semiclassical_count(model, lam).value for lam in lams]) if semiclassical else None
    return CountCurve(lams, np.array([r.value for r in res]), np.array([r.R for r in res]),
                      np.array([r.n for r in res]), np.array([r.converged for r in res]), sc)


# --- semiclassics ---------------------------------------------------------------------

@dataclass(frozen=True)
class SemiclassicalCount:
    value: float
    phase_space: float
    per_channel: tuple


def _turning_radius(ch, lam):
    g = ch.coefficient
    if g * ch.profile.c <= 0 or abs(g * ch.profile.c) <= lam:
        return 0.0
    return ch.profile.envelope_radius(lam / abs(g))


def _action_integral(ch, lam):
    """``int (V - lam)_+^(1/2) dx`` for a mean-field channel."""
    rt = _turning_radius(ch, lam)
    if rt == 0:
        return 0.0
    f = lambda x: math.sqrt(max(ch.potential(x) - lam, 0.0))  # noqa: E731
    if ch.profile.family == "square_well":
        return 2 * rt * math.sqrt(ch.coefficient * ch.profile.c - lam)
    # split so that the square-root edge is handled by the algebraic weight
    mid = 0.5 * rt
    total = 0.0
    if mid > 1.0:
        total += integrate.quad(f, 0.0, 1.0, limit=200)[0]
        g = lambda t: f(math.exp(t)) * math.exp(t)  # noqa: E731
        total += integrate.quad(g, 0.0, math.log(mid), limit=400)[0]
    else:
        total += integrate.quad(f, 0.0, mid, limit=200)[0]
    smooth = lambda x: f(x) / math.sqrt(rt - x) if x < rt else 0.0  # noqa: E731
    total += integrate.quad(smooth, mid, rt, weight="alg", wvar=(0.0, 0.5), limit=400)[0]
    return 2 * total


def _phase_space_area(ch, lam):
    """Area of ``{(x, k): mu k^2 - V(x) < -lam}`` sliced along k."""
    vmax = ch.coefficient * ch.profile.c
    if vmax <= lam:
        return 0.0
    kmax = math.sqrt((vmax - lam) / ch.mu)
    width = lambda k: 2 * _turning_radius(ch, lam + ch.mu * k * k)  # noqa: E731
    # the width is largest and steepest near k = 0; integrate on a log scale there
    k0 = kmax * 1e-8
    total = integrate.quad(width, 0.0, k0, limit=100)[0]
    g = lambda t: width(math.exp(t)) * math.exp(t)  # noqa: E731
    total += integrate.quad(g, math.log(k0), math.log(kmax), limit=400)[0]
    return 2 * total


def semiclassical_count(model: EffectiveModel, lam: float) -> SemiclassicalCount:
    """Weyl-type count ``(1/pi) sum_m mu_m^(-1/2) int (V_m - lam)_+^(1/2) dx``.

    Also evaluates the same quantity as ``(1/2 pi)`` times the phase-space area
    of ``{mu k^2 - V < -lam}``; the two are computed by unrelated quadratures
    and must agree.
    """
    per, area = [], 0.0
    for ch in model.channels:
        if not ch.mean_field:
            raise ValueError("semiclassical count needs mean-field channels")
        per.append(_action_integral(ch, lam) / (math.pi * math.sqrt(ch.mu)))
        area += _phase_space_area(ch, lam) / (2 * math.pi)
    value = float(sum(per))
    if not math.isclose(value, area, rel_tol=1e-6, abs_tol=1e-9):
        raise AssertionError(f"semiclassical forms disagree: {value!r} vs {area!r}")
    return SemiclassicalCount(value, float(area), tuple(per))


# --- fits ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerFit:
    exponent: float
    predicted: float
    ratio_at_min: float | None
    points_used: int


def fit_power_law(curve: CountCurve, alpha: float, min_count: int = 5) -> PowerFit:
    """Slope of ``log N`` against ``log lambda`` over the largest-count half."""
    sel = curve.counts >= min_count
    if sel.sum() < 8:
        raise InsufficientGrowth(f"only {int(sel.sum())} points reach N >= {min_count}")
    lams, counts = curve.lambdas[sel], curve.counts[sel]
    order = np.argsort(counts, kind="stable")[::-1]
    keep = order[: max(4, order.size // 2)]
    slope = np.polyfit(np.log(lams[keep]), np.log(counts[keep]), 1)[0]
    ratio = None
    if curve.semiclassical is not None:
        i = int(np.argmin(curve.lambdas))
        ratio = float(curve.counts[i] / curve.semiclassical[i])
    return PowerFit(float(slope), 0.5 - 1.0 / alpha, ratio, int(keep.size))


@dataclass(frozen=True)
class LogFit:
    slope: float
    predicted: float
    bounded: bool


def log_law_coefficient(mu, mean_coeff, L):
    return (1 / math.pi) * math.sqrt(max(mean_coeff * L / mu - 0.25, 0.0))


def fit_log_law(curve: CountCurve, mu: float, mean_coeff: float, L: float, min_count: int = 5) -> LogFit:
    """Slope of ``N`` against ``|ln lambda|`` for an ``alpha = 2`` profile."""
    predicted = log_law_coefficient(mu, mean_coeff, L)
    bounded = curve.constant_over_last(1.0)
    if 4 * mean_coeff * L < mu:
        return LogFit(0.0, predicted, bounded)
    sel = curve.counts >= min_count
    if sel.sum() < 4:
        raise InsufficientGrowth(f"only {int(sel.sum())} points reach N >= {min_count}")
    slope = np.polyfit(np.abs(np.log(curve.lambdas[sel])), curve.counts[sel], 1)[0]
    return LogFit(float(slope), predicted, bounded)


def compare_oscillating_vs_mean(eta: CouplingFunction, eps: DecayProfile, mu: float, lambdas, **kw):
    """Rows ``(lambda, N_full, N_mean, ratio)`` for ``eta eps`` against ``<eta> eps``."""
    full = EffectiveModel.single(mu, eps, eta)
    mean = EffectiveModel.single(mu, eps, eta.mean)
    rows = []
    for lam in lambdas:
        nf = count_below(full, lam, **kw).value
        nm = count_below(mean, lam, **kw).value
        rows.append((float(lam), nf, nm, nf / nm if nm else (1.0 if nf == 0 else math.inf)))
    return rows


def classify_regime(mean_coeffs, alpha, L=None, mus=None):
    """Which case of the edge asymptotics applies, and whether counts should grow.

    ``mean_coeffs`` are the signed coefficients ``+/- 2 pi <eta_m>`` of the
    attractive potential in each channel.
    """
    coeffs = np.asarray(mean_coeffs, dtype=float)
    if alpha > 2:
        return "iv", False
    if alpha == 2:
        mus = np.ones_like(coeffs) if mus is None else np.asarray(mus, dtype=float)
        grows = bool(np.any(coeffs * (L or 0.0) / mus > 0.25))
        return "iii", grows
    if np.any(coeffs > 0):
        return "i", True
    if np.any(coeffs == 0):
        return "ii", None
    return "i-negative", False
