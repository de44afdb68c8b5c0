"""Floquet-Bloch fibre operator of the periodically twisted tube.

Functions on the cell ``omega x T`` are expanded in plane waves
``exp(i l x3) / sqrt(2 pi)``, ``|l| <= ell_max``, times grid functions on the
cross-section. Block ``l`` of a coefficient vector holds the transverse grid
function multiplying the ``l``-th plane wave.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, TruncationTooSmall
from .inertia import sparse_negative_count
from .geometry import TransverseOperators

log = logging.getLogger(__name__)

DENSE_LIMIT = 1000
DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class TwistProfile:
    """Real 2*pi-periodic twist rate given by finitely many Fourier modes.

    ``coeffs[m]`` is the coefficient of ``exp(i m x)``; the negative modes are
    filled in from reality, ``beta_{-m} = conj(beta_m)``.
    """

    coeffs: dict

    def __post_init__(self):
        full = {}
        for m, c in self.coeffs.items():
            m = int(m)
            c = complex(c)
            if m == 0 and abs(c.imag) > 1e-14 * max(1.0, abs(c)):
                raise ValueError("mean twist rate must be real")
            full[m] = c if m else complex(c.real, 0.0)
        for m in list(full):
            if m > 0 and -m not in full:
                full[-m] = full[m].conjugate()
            elif m < 0 and -m not in full:
                full[-m] = full[m].conjugate()
        for m in full:
            if abs(full[m] - full[-m].conjugate()) > 1e-12 * max(1.0, abs(full[m])):
                raise ValueError(f"coefficients of modes {m} and {-m} are not conjugate")
        full = {m: c for m, c in sorted(full.items()) if c != 0}
        object.__setattr__(self, "coeffs", full)

    @classmethod
    def constant(cls, value):
        return cls({0: float(value)})

    @classmethod
    def zero(cls):
        return cls({})

    @classmethod
    def from_trig(cls, mean=0.0, cos=(), sin=()):
        """``mean + sum_m cos[m-1] cos(m x) + sin[m-1] sin(m x)``."""
        c = {0: float(mean)}
        for m, a in enumerate(cos, start=1):
            c[m] = c.get(m, 0) + a / 2
        for m, b in enumerate(sin, start=1):
            c[m] = c.get(m, 0) + b / 2j
        return cls(c)

    @property
    def order(self):
        return max((abs(m) for m in self.coeffs), default=0)

    @property
    def is_constant(self):
        return all(m == 0 for m in self.coeffs)

    @property
    def mean(self):
        return self.coeffs.get(0, 0.0).real

    def __call__(self, x, derivative=0):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=complex)
        for m, c in self.coeffs.items():
            out += c * (1j * m) ** derivative * np.exp(1j * m * x)
        return out.real

    def sup(self):
        x = np.linspace(0, 2 * np.pi, 64 * (self.order + 1), endpoint=False)
        return float(np.max(np.abs(self(x)))) if self.coeffs else 0.0


@dataclass(frozen=True, eq=False)
class FiberMatrix:
    k: float
    ell_max: int
    n_transverse: int
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def modes(self):
        return np.arange(-self.ell_max, self.ell_max + 1)

    def shifted(self, c):
        return FiberMatrix(self.k, self.ell_max, self.n_transverse,
                           sp.csr_matrix(self.matrix + c * sp.identity(self.dim, format="csr")))

    def block(self, vector, ell):
        """Transverse grid function of mode ``ell`` in ``vector``."""
        i = ell + self.ell_max
        n = self.n_transverse
        return vector[i * n:(i + 1) * n]

    def dump(self, stream):
        C = self.matrix.tocoo()
        stream.write(f"# fiber k={self.k!r} ell_max={self.ell_max} dim={self.dim} nnz={C.nnz}\n")
        for r, c, v in zip(C.row, C.col, C.data):
            stream.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


@dataclass(frozen=True, eq=False)
class EigenPairs:
    values: np.ndarray
    vectors: np.ndarray = field(repr=False)
    residuals: np.ndarray


def derivative_operator(ops: TransverseOperators, beta: TwistProfile, k: float, ell_max: int):
    """Matrix of ``beta d_phi + d_3 + i k`` from the truncated plane-wave space.

    The image is kept in the wider space ``|l| <= ell_max + M`` so that no part
    of the form is lost to truncation.
    """
    if ell_max < beta.order:
        raise TruncationTooSmall(f"ell_max={ell_max} is below the twist order {beta.order}")
    n_in = 2 * ell_max + 1
    ext = ell_max + beta.order
    n_out = 2 * ext + 1
    ells = np.arange(-ell_max, ell_max + 1)
    cols = ells + ell_max
    diag = sp.csr_matrix((1j * (ells + k), (ells + ext, cols)), shape=(n_out, n_in))
    G = sp.kron(diag, sp.identity(ops.n, format="csr"), format="csr")
    for m, c in beta.coeffs.items():
        shift = sp.csr_matrix((np.full(n_in, c), (ells + m + ext, cols)), shape=(n_out, n_in))
        G = G + sp.kron(shift, ops.dphi, format="csr")
    return sp.csr_matrix(G)


def assemble_fiber(ops: TransverseOperators, beta: TwistProfile, k: float, ell_max: int) -> FiberMatrix:
    """Hermitian matrix of the fibre form ``|grad_t u|^2 + |(beta d_phi + d_3 + ik) u|^2``."""
    G = derivative_operator(ops, beta, k, ell_max)
    n_in = 2 * ell_max + 1
    H = sp.kron(sp.identity(n_in, format="csr"), ops.laplacian_t, format="csr") + (G.conj().T @ G)
    H = sp.csr_matrix(0.5 * (H + H.conj().T))
    H.sort_indices()
    return FiberMatrix(float(k), int(ell_max), ops.n, H)


def _fix_gauge(vectors):
    for j in range(vectors.shape[1]):
        v = vectors[:, j]
        i = int(np.argmax(np.abs(v)))
        vectors[:, j] = v * (np.conj(v[i]) / abs(v[i]))
        vectors[i, j] = abs(v[i])
    return vectors


def _shift_invert(fm, count, tol, sigma):
    # Lanczos can miss copies of a multiple eigenvalue, so every attempt is
    # checked against the exact inertia count and retried with a wider window.
    A = fm.matrix.tocsc()
    rng = np.random.default_rng(12345)
    v0 = rng.standard_normal(fm.dim) + 1j * rng.standard_normal(fm.dim)
    history = []
    for pad in (2, 6, 14):
        k = min(count + pad, fm.dim - 2)
        try:
            vals, vecs = spla.eigsh(A, k=k, sigma=sigma, which="LM", v0=v0,
                                    ncv=min(fm.dim - 1, max(2 * k + 1, 24)),
                                    tol=tol * 1e-3, maxiter=50 * fm.dim)
        except spla.ArpackNoConvergence as exc:
            history.append({"pad": pad, "converged": len(exc.eigenvalues)})
            continue
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        top = vals[count - 1]
        cut = top + max(1e-7 * abs(top), 1e3 * tol * abs(top))
        found = int(np.count_nonzero(vals < cut))
        if found < len(vals):
            exact = sparse_negative_count(A, cut)
            if exact == found:
                return vals[:count], vecs[:, :count]
        history.append({"pad": pad, "found": found, "computed": len(vals)})
    raise NoConvergence("shift-invert Lanczos could not resolve the requested eigenvalues",
                        {"k": fm.k, "requested": count, "attempts": history})


def lowest_eigenpairs(fm: FiberMatrix, count: int, tol: float = DEFAULT_TOL, sigma=None) -> EigenPairs:
    """Lowest ``count`` eigenpairs, ascending, with the phase gauge applied.

    Below ``DENSE_LIMIT`` a dense Hermitian solve is used; above it,
    shift-invert Lanczos around ``sigma`` (a lower bound of the spectrum).
    """
    if not 1 <= count <= fm.dim:
        raise ValueError(f"count must be in [1, {fm.dim}]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = fm.matrix
    if fm.dim <= DENSE_LIMIT:
        vals, vecs = sla.eigh(A.toarray(), subset_by_index=[0, count - 1])
    else:
        vals, vecs = _shift_invert(fm, count, tol, 0.0 if sigma is None else float(sigma))
    vecs = _fix_gauge(np.asarray(vecs, dtype=complex))
    res = np.linalg.norm(A @ vecs - vecs * vals, axis=0)
    bad = res > tol * np.maximum(1.0, np.abs(vals))
    if np.any(bad):
        raise NoConvergence("eigen-residual above tolerance",
                            {"residuals": res.tolist(), "values": vals.tolist(), "k": fm.k})
    return EigenPairs(np.asarray(vals, dtype=float), vecs, res)


def fiber_eigenvalues(ops, beta, k, ell_max, count, tol=DEFAULT_TOL):
    """Convenience: the lowest ``count`` band values at quasimomentum ``k``."""
    fm = assemble_fiber(ops, beta, k, ell_max)
    return lowest_eigenpairs(fm, count, tol, sigma=0.5 * ops.lambda1).values
