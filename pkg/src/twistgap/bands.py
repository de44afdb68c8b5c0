"""Band functions, spectral gaps and the local structure of gap edges.

Sign convention for edges: ``side="+"`` is the upper end of a gap, i.e. a
minimum of the band above it; ``side="-"`` is the lower end of a bounded gap,
a maximum of the band below it. Effective masses carry the matching sign,
``mu = +/- E''(k*) / 2``, so a regular edge always has ``mu > 0``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import EdgeUnresolved
from .fiber import DEFAULT_TOL, TwistProfile, fiber_eigenvalues
from .geometry import TransverseOperators

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BandChart:
    k_samples: np.ndarray
    bands: np.ndarray  # shape (n_k, L); column l-1 holds E_l
    ell_max: int
    tol: float

    @property
    def L(self):
        return self.bands.shape[1]

    @property
    def n_k(self):
        return self.k_samples.size

    def band(self, ell):
        return self.bands[:, ell - 1]

    def ranges(self):
        return np.column_stack([self.bands.min(axis=0), self.bands.max(axis=0)])

    @property
    def window_top(self):
        """Energies below this are fully described by the computed bands."""
        return float(self.bands[:, -1].min())


@dataclass(frozen=True)
class Gap:
    index: int
    lower: float  # -inf for the semibounded gap
    upper: float
    band_below: int | None  # None for gap 0
    band_above: int

    @property
    def width(self):
        return self.upper - self.lower


@dataclass(frozen=True)
class Extremizer:
    k: float
    value: float
    mu: float
    mu_error: float
    slope: float


@dataclass(frozen=True, eq=False)
class EdgeReport:
    gap_index: int
    side: str
    edge_value: float
    band_index: int
    extremizers: list
    regularity: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def is_regular(self):
        return all(self.regularity.values())

    @property
    def multiplicity(self):
        return len(self.extremizers)


def _k_grid(n_k):
    if n_k < 16 or n_k % 2:
        raise ValueError("n_k must be even and at least 16")
    return -0.5 + np.arange(n_k) / n_k


def sweep_bands(ops: TransverseOperators, beta: TwistProfile, L: int, n_k: int = 32,
                ell_max: int = 4, tol: float = DEFAULT_TOL, workers: int = 1) -> BandChart:
    """Lowest ``L`` band functions on a uniform grid of the dual torus.

    Only ``k`` in ``[0, 1/2]`` is solved; ``E(-k) = E(k)`` fills the rest.
    """
    ks = _k_grid(n_k)
    half = np.arange(n_k // 2 + 1) / n_k

    def solve(k):
        return fiber_eigenvalues(ops, beta, k, ell_max, L, tol)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = list(pool.map(solve, half))
    else:
        vals = [solve(k) for k in half]
    vals = np.array(vals)
    # k_samples[i] = -1/2 + i/n_k  ->  |k| index into ``half``
    idx = np.abs(np.arange(n_k) - n_k // 2)
    return BandChart(ks, vals[idx], int(ell_max), float(tol))


def find_gaps(chart: BandChart, gap_tol: float | None = None) -> list:
    """Gaps of the sampled spectrum, the semibounded one first.

    Bounded gaps are reported only below ``chart.window_top``; narrower ones
    than ``gap_tol`` (default ``1e-6`` times the energy scale) are dropped.
    """
    rng = chart.ranges()
    bottom = float(rng[0, 0])
    gaps = [Gap(0, -np.inf, bottom, None, 1)]
    cur_max = rng[0, 1]
    below = 1
    for ell in range(2, chart.L + 1):
        lo, hi = rng[ell - 1]
        tol = (1e-6 * max(abs(lo), 1.0)) if gap_tol is None else gap_tol
        if lo > cur_max:
            if lo - cur_max >= tol:
                gaps.append(Gap(len(gaps), float(cur_max), float(lo), below, ell))
            else:
                log.info("suppressed gap (%.6g, %.6g) of width %.3g below gap_tol", cur_max, lo, lo - cur_max)
        if hi >= cur_max:
            cur_max, below = hi, ell
    return gaps


class _BandFunction:
    """Memoised ``k -> E_ell(k)`` backed by fibre solves."""

    def __init__(self, ops, beta, ell_max, tol, count):
        self.ops, self.beta, self.ell_max, self.tol, self.count = ops, beta, ell_max, tol, count
        self._cache = {}
        self.solves = 0

    def values(self, k):
        key = round(float(_fold(k)), 15)
        if key not in self._cache:
            self._cache[key] = fiber_eigenvalues(self.ops, self.beta, key, self.ell_max, self.count, self.tol)
            self.solves += 1
        return self._cache[key]

    def __call__(self, k, ell):
        return float(self.values(k)[ell - 1])


def _fold(k):
    return (k + 0.5) % 1.0 - 0.5


def analyze_edge(chart: BandChart, gap: Gap, side: str, ops: TransverseOperators, beta: TwistProfile,
                 refine_tol: float = 1e-7, *, band_tol=None, slope_tol=1e-5, cluster_radius=None,
                 mu_floor=1e-6, delta=0.02, mass_rtol=1e-2) -> EdgeReport:
    """Locate the extremizers of a gap edge and test the regularity conditions.

    Flags: ``i`` one band attains the edge, ``ii`` finitely many (non-clustered)
    extremizers, ``iii`` every effective mass exceeds ``mu_floor``, and
    ``slope`` the band is stationary at every extremizer, ``mass_resolved`` the
    effective masses are stable to ``mass_rtol`` under step refinement.
    """
    if side not in ("+", "-"):
        raise ValueError("side must be '+' or '-'")
    if side == "-" and gap.band_below is None:
        raise ValueError("the semibounded gap has no lower edge")
    sign = 1.0 if side == "+" else -1.0
    ell = gap.band_above if side == "+" else gap.band_below
    n_k = chart.n_k
    dk = 1.0 / n_k
    cluster_radius = 2.0 / n_k if cluster_radius is None else cluster_radius
    ks = chart.k_samples
    # work with s*E so that every edge is a minimum
    coarse = sign * chart.band(ell)
    cmin = coarse.min()
    scale = max(abs(cmin), 1.0)
    band_tol = 1e-7 * scale if band_tol is None else band_tol
    spread = max(np.ptp(coarse), 1e-3 * scale)
    window = max(0.05 * spread, 50 * band_tol)

    f = _BandFunction(ops, beta, chart.ell_max, chart.tol, max(ell + 1, chart.L))

    cand = _grid_minima(ks, coarse, window)
    refined = []
    for k0 in sorted(set(cand)):
        refined.extend(_refine(f, ell, sign, k0, dk, refine_tol))
    if not refined:
        raise EdgeUnresolved(f"no extremizer candidates for band {ell} (side {side})")
    best = min(v for _, v in refined)
    keep = [(k, v) for k, v in refined if v - best <= band_tol]
    # merge near-duplicates on [0, 1/2]
    merged = []
    for k, v in sorted(keep):
        if merged and abs(k - merged[-1][0]) < cluster_radius:
            if v < merged[-1][1]:
                merged[-1] = (k, v)
            continue
        merged.append((k, v))
    points = []
    for k, v in merged:
        points.append((k, v))
        if 1e-12 < k < 0.5 - 1e-12:
            points.append((-k, v))
    points.sort()
    clustered = any(abs(_fold(a[0] - b[0])) < cluster_radius for a, b in zip(points, points[1:]))

    extremizers = []
    for k, v in points:
        mu, err, slope = _local_quadratic(f, ell, sign, k, delta)
        extremizers.append(Extremizer(float(k), float(sign * v), float(mu), float(err), float(slope)))

    edge_value = sign * best
    # condition (i): which sorted bands reach the edge value
    attaining = []
    for other in range(max(1, ell - 2), min(chart.L, ell + 2) + 1):
        o_coarse = sign * chart.band(other)
        if other == ell:
            attaining.append(other)
            continue
        if o_coarse.min() - best > window:
            continue
        o_best = min(v for k0 in _grid_minima(ks, o_coarse, window)
                     for _, v in _refine(f, other, sign, k0, dk, refine_tol))
        if abs(o_best - best) <= band_tol:
            attaining.append(other)

    regularity = {
        "i": len(attaining) == 1,
        "ii": len(points) > 0 and not clustered,
        "iii": all(e.mu > mu_floor for e in extremizers),
        "slope": all(abs(e.slope) < slope_tol for e in extremizers),
        "mass_resolved": all(e.mu_error <= mass_rtol * abs(e.mu) for e in extremizers),
    }
    diagnostics = {
        "attaining_bands": attaining,
        "coarse_edge": float(sign * cmin),
        "refined_minus_coarse": float(edge_value - sign * cmin),
        "fiber_solves": f.solves,
        "band_tol": band_tol,
        "cluster_radius": cluster_radius,
        "delta": delta,
    }
    if not regularity["i"]:
        log.warning("edge %s of gap %d attained by bands %s", side, gap.index, attaining)
    return EdgeReport(gap.index, side, float(edge_value), int(ell), extremizers, regularity, diagnostics)


def _grid_minima(ks, coarse, window):
    n = coarse.size
    cmin = coarse.min()
    out = []
    for i in range(n):
        if ks[i] < -1e-12:
            continue
        if coarse[i] <= coarse[(i - 1) % n] and coarse[i] <= coarse[(i + 1) % n] and coarse[i] - cmin <= window:
            out.append(float(ks[i]))
    if coarse[0] - cmin <= window and coarse[0] <= coarse[1] and coarse[0] <= coarse[-1]:
        out.append(0.5)
    return out


def _refine(f, ell, sign, k0, dk, xtol):
    """Local minimisers of ``sign * E_ell`` near the grid point ``k0`` in [0, 1/2]."""
    g = lambda k: sign * f(k, ell)  # noqa: E731
    if k0 in (0.0, 0.5):
        # E is even about 0 and 1/2; the symmetric point is stationary
        e0 = g(k0)
        step = min(dk / 4, 1e-2)
        inner = k0 + step if k0 == 0.0 else k0 - step
        if g(inner) >= e0:
            return [(k0, e0)]
        lo, hi = (0.0, dk) if k0 == 0.0 else (0.5 - dk, 0.5)
    else:
        lo, hi = max(0.0, k0 - dk), min(0.5, k0 + dk)
    res = minimize_scalar(g, bounds=(lo, hi), method="bounded", options={"xatol": xtol, "maxiter": 200})
    if not res.success:
        raise EdgeUnresolved(f"refinement near k={k0} did not converge: {res.message}")
    k = float(res.x)
    # the bounded search never returns the end point itself
    for end in (lo, hi):
        if end in (0.0, 0.5) and g(end) <= res.fun:
            return [(end, g(end))]
    return [(k, float(res.fun))]


def _local_quadratic(f, ell, sign, k, delta, rtol=1e-3, min_delta=1e-6):
    """Richardson-extrapolated ``mu = sign E''/2``, its error bar, and ``E'``.

    The step shrinks by 4 until the coarse and fine second differences agree
    to ``rtol``; near avoided crossings the curvature scale can be far below
    the initial ``delta``.
    """
    e0 = f(k, ell)

    def second(h):
        return (f(k + h, ell) - 2 * e0 + f(k - h, ell)) / h**2

    h = delta
    d_coarse = second(h)
    while True:
        d_fine = second(h / 2)
        mu_coarse, mu_fine = sign * d_coarse / 2, sign * d_fine / 2
        err = abs(mu_fine - mu_coarse)
        if err <= rtol * abs(mu_fine) or h / 4 < min_delta:
            break
        h /= 4
        d_coarse = second(h)
    slope = (f(k + h / 2, ell) - f(k - h / 2, ell)) / h
    mu = (4 * mu_fine - mu_coarse) / 3
    return mu, err, slope
