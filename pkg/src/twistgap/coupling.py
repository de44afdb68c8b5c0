"""Periodic coupling functions built from edge eigenfunctions.

Fourier coefficients follow the unitary convention
``eta_l = (2 pi)^(-1/2) int_0^{2 pi} eta(x) exp(-i l x) dx``, so that
``eta(x) = (2 pi)^(-1/2) sum_l eta_l exp(i l x)`` and the mean value is
``eta_0 / sqrt(2 pi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NearDegenerate
from .fiber import DEFAULT_TOL, TwistProfile, assemble_fiber, lowest_eigenpairs
from .geometry import TransverseOperators

SQRT2PI = np.sqrt(2 * np.pi)


@dataclass(frozen=True, eq=False)
class EdgeEigenfunction:
    """``psi(x_t, x3) = (2 pi)^(-1/2) sum_l coeffs[l + ell_max](x_t) exp(i l x3)``."""

    coeffs: np.ndarray = field(repr=False)  # (2 ell_max + 1, n_nodes), complex
    k_star: float
    ell_max: int
    energy: float
    residual: float
    cell_area: float

    @property
    def modes(self):
        return np.arange(-self.ell_max, self.ell_max + 1)

    def norm(self):
        return float(np.sqrt(self.cell_area * np.sum(np.abs(self.coeffs) ** 2)))

    def mode_weights(self):
        """``int_omega |psi_l|^2`` for each longitudinal mode."""
        return self.cell_area * np.sum(np.abs(self.coeffs) ** 2, axis=1)

    def rotated(self, phase):
        return EdgeEigenfunction(self.coeffs * np.exp(1j * phase), self.k_star, self.ell_max,
                                 self.energy, self.residual, self.cell_area)

    def sample(self, x3):
        """``psi`` on the given x3 points, shape (len(x3), n_nodes)."""
        E = np.exp(1j * np.outer(x3, self.modes)) / SQRT2PI
        return E @ self.coeffs


@dataclass(frozen=True, eq=False)
class CouplingFunction:
    x: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    fourier: dict = field(repr=False)  # l -> eta_l
    mean: float

    @classmethod
    def from_samples(cls, samples):
        """Build from values on the uniform grid ``2 pi j / N``, ``j < N``."""
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        x = 2 * np.pi * np.arange(n) / n
        c = np.fft.fft(samples) * SQRT2PI / n
        deg = (n - 1) // 2
        fourier = {l: complex(c[l % n]) for l in range(-deg, deg + 1)}
        mean = float(np.mean(samples))
        return cls(x, samples, fourier, mean)

    @classmethod
    def from_function(cls, func, degree=8):
        n = 2 * degree + 1
        return cls.from_samples(func(2 * np.pi * np.arange(n) / n))

    @classmethod
    def constant(cls, value):
        return cls.from_samples(np.array([float(value)]))

    @property
    def degree(self):
        return max((abs(l) for l in self.fourier), default=0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.fourier.get(0, 0.0).real)
        for l, c in self.fourier.items():
            if l > 0 and c != 0:
                out += 2 * (c.real * np.cos(l * x) - c.imag * np.sin(l * x))
        return out / SQRT2PI

    def sup(self):
        return float(np.max(np.abs(self(np.linspace(0, 2 * np.pi, 16 * self.degree + 17)))))

    def shifted_mean(self, value):
        """Same oscillation, mean replaced by ``value``."""
        return CouplingFunction.from_samples(self.samples - self.mean + value)

    def scaled(self, factor):
        return CouplingFunction.from_samples(factor * self.samples)


def edge_eigenfunction(ops: TransverseOperators, beta: TwistProfile, k_star: float, band_index: int,
                       ell_max: int, tol: float = DEFAULT_TOL) -> EdgeEigenfunction:
    """Normalised eigenfunction of band ``band_index`` at ``k_star``."""
    fm = assemble_fiber(ops, beta, k_star, ell_max)
    ep = lowest_eigenpairs(fm, band_index + 1, tol, sigma=0.5 * ops.lambda1)
    vals = ep.values
    e = vals[band_index - 1]
    sep = np.inf
    if band_index >= 2:
        sep = min(sep, e - vals[band_index - 2])
    sep = min(sep, vals[band_index] - e)
    if sep < 10 * tol * max(1.0, abs(e)):
        raise NearDegenerate(f"band {band_index} at k={k_star} is within {sep:.3g} of a neighbour")
    v = ep.vectors[:, band_index - 1]
    area = ops.grid.cell_area
    coeffs = v.reshape(2 * ell_max + 1, ops.n) / np.sqrt(area)
    return EdgeEigenfunction(coeffs, float(k_star), int(ell_max), float(e),
                             float(ep.residuals[band_index - 1]), area)


def _x3_grid(psi, beta):
    n = 4 * psi.ell_max + 2 * beta.order + 1
    return 2 * np.pi * np.arange(n) / n


def _coupling_density(psi_a, psi_b, beta, ops, x):
    """``int_omega conj(d_phi psi_a) (beta d_phi + d_3 + i k_b) psi_b`` on ``x``."""
    Pa = psi_a.sample(x)
    E = np.exp(1j * np.outer(x, psi_b.modes)) / SQRT2PI
    Pb = E @ psi_b.coeffs
    dPa = (ops.dphi @ Pa.T).T
    dPb = (ops.dphi @ Pb.T).T
    D = beta(x)[:, None] * dPb + (E * (1j * (psi_b.modes + psi_b.k_star))) @ psi_b.coeffs
    return psi_a.cell_area * np.sum(np.conj(dPa) * D, axis=1)


def compute_eta(psi: EdgeEigenfunction, beta: TwistProfile, ops: TransverseOperators) -> CouplingFunction:
    """Coupling function ``eta(x3) = 2 Re int conj(d_phi psi) (beta d_phi + d_3 + i k) psi``.

    Sampled on ``4 ell_max + 2 M + 1`` points, enough to represent the product
    of the truncated series without aliasing.
    """
    x = _x3_grid(psi, beta)
    eta = 2 * _coupling_density(psi, psi, beta, ops, x).real
    return CouplingFunction.from_samples(eta)


def offdiagonal_coupling_norm(psis, beta, ops):
    """``max_{m != n} sup_x |eta_{m,n} + conj(eta_{n,m})|`` over distinct extremizers."""
    if len(psis) < 2:
        return 0.0
    x = _x3_grid(psis[0], beta)
    worst = 0.0
    for m, a in enumerate(psis):
        for n, b in enumerate(psis):
            if m < n:
                val = _coupling_density(a, b, beta, ops, x) + np.conj(_coupling_density(b, a, beta, ops, x))
                worst = max(worst, float(np.max(np.abs(val))))
    return worst


def eta_l1_report(cf: CouplingFunction, M: int = 0):
    """``(sum_l |eta_l|, tail fraction of that sum carried by |l| > M)``."""
    mags = {l: abs(c) for l, c in cf.fourier.items()}
    total = float(sum(mags.values()))
    tail = float(sum(v for l, v in mags.items() if abs(l) > M))
    return total, (tail / total if total > 0 else 0.0)


def constant_twist_eta(psi: EdgeEigenfunction, beta_value: float, ops: TransverseOperators) -> float:
    """``2 beta int_omega (d_phi psi)^2`` for the x3-independent mode of ``psi``."""
    c0 = psi.coeffs[psi.ell_max] / SQRT2PI
    d = ops.dphi @ c0
    return float(2 * beta_value * psi.cell_area * np.sum(np.abs(d) ** 2))
