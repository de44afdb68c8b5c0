"""Birman-Schwinger discretisation of the effective Hamiltonians.

For ``h = -mu d^2/dx^2 - V`` and ``lambda > 0`` the count of eigenvalues below
``-lambda`` equals the number of eigenvalues above 1 of
``a F V F* a`` with ``a(k) = (mu k^2 + lambda)^(-1/2)``. In momentum space the
kernel is ``a(k) Vhat(k - k') a(k') / sqrt(2 pi)`` with the unitary transform
``Vhat(q) = (2 pi)^(-1/2) int V(x) exp(-i x q) dx``. The operator is
discretised by Nystrom's method with trapezoid weights; this is a verification
route, the production counter lives in :mod:`twistgap.effective`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import comb

from .effective import Channel, DecayProfile, EffectiveModel, count_below
from .errors import GridTooCoarse

MAX_DIM = 4000


def _as_channel(eta, eps, mu):
    if isinstance(eta, Channel):
        return eta
    return Channel(float(mu), eps, eta)


def _halves(ch):
    """Even and odd parts of the potential on ``x >= 0``."""
    even_only = ch.mean_field or _is_even(ch.coupling)

    def even(x):
        return 0.5 * (ch.potential(x) + ch.potential(-x)) if not even_only else float(ch.potential(x))

    def odd(x):
        return 0.5 * (ch.potential(x) - ch.potential(-x))

    return even, (None if even_only else odd)


def _is_even(cf):
    return all(abs(c.imag) < 1e-14 * max(1.0, abs(c)) for c in cf.fourier.values())


def _cos_sin_integral(f, q, upper, weight):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if q == 0:
            if weight == "sin":
                return 0.0
            return integrate.quad(f, 0.0, upper, limit=500, epsabs=1e-14, epsrel=1e-12)[0]
        if math.isinf(upper):
            return integrate.quad(f, 0.0, np.inf, weight=weight, wvar=q, limlst=200, limit=500,
                                  epsabs=1e-14)[0]
        return integrate.quad(f, 0.0, upper, weight=weight, wvar=q, limit=500,
                              epsabs=1e-14, epsrel=1e-12)[0]


def potential_transform(ch: Channel, q: float) -> complex:
    """``(1/2 pi) int V(x) exp(-i x q) dx``, i.e. ``Vhat(q) / sqrt(2 pi)``."""
    prof = ch.profile
    if prof.compact:
        upper = prof.R
    elif prof.family == "gaussian":
        upper = prof.envelope_radius(1e-18 * prof.sup())
    else:
        upper = np.inf
    even, odd = _halves(ch)
    re = 2 * _cos_sin_integral(even, q, upper, "cos")
    im = 0.0 if odd is None else -2 * _cos_sin_integral(odd, q, upper, "sin")
    if not (math.isfinite(re) and math.isfinite(im)):
        raise ArithmeticError(f"transform quadrature failed at q={q!r}")
    return complex(re, im) / (2 * np.pi)


@dataclass(frozen=True, eq=False)
class BSOperator:
    lam: float
    mu: float
    K: float
    dk: float
    k_grid: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)  # kernel on the q lattice, index m -> q = m dk

    @property
    def dim(self):
        return self.k_grid.size

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    def dump_table(self, stream):
        stream.write(f"# q\tre\tim  (dk={self.dk!r})\n")
        for m, v in enumerate(self.table):
            stream.write(f"{m * self.dk:.17g}\t{v.real:.17g}\t{v.imag:.17g}\n")


def default_grid(ch: Channel, lam: float):
    vmax = ch.coupling_sup() * ch.profile.sup()
    K = 10 * math.sqrt(max(vmax, lam) / ch.mu)
    dk = math.sqrt(lam / ch.mu) / 5
    deg = ch.coupling_degree()
    if deg:
        dk = min(dk, 1.0 / (4 * deg))
    return K, dk


def assemble_bs(eta, eps: DecayProfile | None, mu: float | None, lam: float, K: float | None = None,
                dk: float | None = None) -> BSOperator:
    """Nystrom matrix of ``a F (eta eps) F* a`` on ``[-K, K]`` with step ``dk``.

    ``eta`` is a number, a :class:`CouplingFunction`, or a ready
    :class:`Channel` (then ``eps`` and ``mu`` are ignored).
    """
    ch = _as_channel(eta, eps, mu)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    K0, dk0 = default_grid(ch, lam)
    K = K0 if K is None else float(K)
    dk = dk0 if dk is None else float(dk)
    if K < K0 * (1 - 1e-12):
        raise GridTooCoarse(f"cutoff K={K:.4g} below 10 sqrt(sup V / mu) = {K0:.4g}")
    if dk > dk0 * (1 + 1e-12):
        raise GridTooCoarse(f"step dk={dk:.4g} does not resolve lambda or the coupling sidebands ({dk0:.4g})")
    n_half = int(math.ceil(K / dk))
    k = dk * np.arange(-n_half, n_half + 1)
    if k.size > MAX_DIM:
        raise GridTooCoarse(f"momentum grid of {k.size} points exceeds {MAX_DIM}")
    w = np.full(k.size, dk)
    w[0] = w[-1] = dk / 2
    a = 1.0 / np.sqrt(ch.mu * k * k + lam)
    table = np.array([potential_transform(ch, m * dk) for m in range(k.size)])
    idx = np.arange(k.size)
    diff = idx[:, None] - idx[None, :]
    kern = np.where(diff >= 0, table[np.abs(diff)], np.conj(table[np.abs(diff)]))
    s = a * np.sqrt(w)
    B = s[:, None] * kern * s[None, :]
    if np.all(table.imag == 0):
        B = B.real
    B = 0.5 * (B + B.conj().T)
    return BSOperator(float(lam), ch.mu, K, dk, k, w, B, table)


def bs_count(bs: BSOperator, s: float = 1.0) -> int:
    """Number of eigenvalues of the discretised operator above ``s``."""
    return int(np.count_nonzero(bs.eigenvalues() > s))


@dataclass(frozen=True)
class BSCheck:
    lam: float
    bs: int
    bs_converged: bool
    inertia: int
    inertia_converged: bool

    @property
    def agrees(self):
        return self.bs_converged and self.inertia_converged and self.bs == self.inertia


def bs_converged_count(ch: Channel, lam: float, K=None, dk=None, s=1.0, max_levels=3):
    """BS count that survives doubling the cutoff and halving the step.

    Starting from ``(K, dk)``, successive grids ``(2^l K, dk / 2^l)`` are
    compared until two neighbours agree or the grid outgrows ``MAX_DIM``.
    Returns ``(count, converged)``.
    """
    base = assemble_bs(ch, None, None, lam, K, dk)
    K, dk = base.K, base.dk
    prev = bs_count(base, s)
    for level in range(1, max_levels + 1):
        try:
            fine = assemble_bs(ch, None, None, lam, K * 2**level, dk / 2**level)
        except GridTooCoarse:
            return prev, False
        cur = bs_count(fine, s)
        if cur == prev:
            return cur, True
        prev = cur
    return prev, False


def bs_check(ch: Channel, lam: float, K=None, dk=None, **count_kw) -> BSCheck:
    """Compare the BS count at threshold 1 with the inertia count below ``-lam``."""
    nb, cb = bs_converged_count(ch, lam, K, dk)
    r = count_below(EffectiveModel((ch,)), lam, raise_on_failure=False, **count_kw)
    return BSCheck(float(lam), nb, cb, r.value, r.converged)


def fourier_derivative(profile: DecayProfile, order: int, k):
    """``d^order/dk^order`` of the unitary transform of an even power profile, ``k != 0``.

    Integrating by parts ``order + 1`` times turns the growing moment
    ``x^order u`` into the absolutely integrable ``(x^order u)^(order+1)``.
    """
    n = order + 1
    if n > 5:
        raise ValueError("profile derivatives are available up to order 4")

    def g(x):
        # (x^order u)^(n) by Leibniz
        tot = 0.0
        for j in range(0, min(n, order) + 1):
            xp = math.perm(order, j) * x ** (order - j)
            tot += comb(n, j) * xp * float(profile(x, n - j))
        return tot

    k = np.atleast_1d(np.asarray(k, dtype=float))
    out = np.empty(k.size, dtype=complex)
    for i, kk in enumerate(k):
        # x^order u has parity (-1)^order; its n-th derivative has parity (-1)^(order+n) = -1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val = integrate.quad(g, 0, np.inf, weight="sin", wvar=abs(kk), limlst=200)[0]
        integral = -2j * val * math.copysign(1.0, kk)
        out[i] = (-1j) ** order * integral / (1j * kk) ** n / math.sqrt(2 * math.pi)
    return out


def fourier_derivative_sup(profile: DecayProfile, order: int, kappa: float, span=8.0, points=64):
    """``sup_{|k| >= kappa} |uhat^(order)(k)|`` sampled on ``[kappa, span kappa]``."""
    ks = np.geomspace(kappa, span * kappa, points)
    return float(np.max(np.abs(fourier_derivative(profile, order, ks))))
