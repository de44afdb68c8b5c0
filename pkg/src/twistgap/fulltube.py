"""Truncated twisted tube ``omega x [-X, X]`` with twist rate ``beta - eps``.

Finite differences in x3 with Dirichlet ends. On each cell ``[x_j, x_{j+1}]``
the derivative ``theta' d_phi f + d_3 f`` is approximated by
``(f_{j+1} - f_j) / s + theta'(mid) d_phi (f_j + f_{j+1}) / 2``; summing its
square with the transverse form gives a symmetric block tridiagonal matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import FactorizationBreakdown, ResolutionTooCoarse
from .fiber import TwistProfile
from .geometry import TransverseOperators
from .inertia import block_tridiagonal_negative_count


@dataclass(frozen=True, eq=False)
class TubeOperator:
    X: float
    step: float
    x3: np.ndarray = field(repr=False)  # interior nodes
    diag_blocks: list = field(repr=False)
    off_blocks: list = field(repr=False)
    n_transverse: int = 0

    @property
    def n3(self):
        return self.x3.size

    @property
    def dim(self):
        return self.n3 * self.n_transverse

    def to_sparse(self):
        return sp.bmat([[self.diag_blocks[i] if i == j else
                         self.off_blocks[i] if j == i + 1 else
                         self.off_blocks[j].T if i == j + 1 else None
                         for j in range(self.n3)] for i in range(self.n3)], format="csr")


def _twist_rate(beta, eps, c):
    def rate(x):
        out = beta(x) if beta is not None else np.zeros_like(x)
        if eps is not None and c != 0:
            out = out - c * np.asarray(eps(x), dtype=float)
        return out

    return rate


def assemble_tube(ops: TransverseOperators, beta: TwistProfile, eps, X: float, x3_step: float,
                  c: float = 1.0) -> TubeOperator:
    """Block tridiagonal matrix of the tube with ``theta' = beta - c eps``.

    ``eps`` is any vectorised callable of x3 (a :class:`DecayProfile` works)
    or ``None``.
    """
    n_periods = X / (2 * np.pi)
    if X <= 0 or abs(n_periods - round(n_periods)) > 1e-9:
        raise ValueError("X must be a positive multiple of 2 pi")
    cells = int(round(2 * X / x3_step))
    if abs(cells * x3_step - 2 * X) > 1e-9 * X:
        raise ValueError("x3_step must divide 2 X")
    M = beta.order if beta is not None else 0
    if M and x3_step > 2 * np.pi / (8 * M) * (1 + 1e-12):
        raise ResolutionTooCoarse(f"x3_step={x3_step:.4g} gives fewer than 8 points on the period 2 pi/{M}")
    s = x3_step
    nodes = -X + s * np.arange(cells + 1)
    mids = nodes[:-1] + s / 2
    t = _twist_rate(beta, eps, c)(mids)
    Lt = ops.laplacian_t.toarray()
    Dp = ops.dphi.toarray()
    n = ops.n
    eye = np.eye(n)
    n3 = cells - 1
    diag = [Lt.copy() for _ in range(n3)]
    off = []
    for cell in range(cells):
        P = -eye / s + 0.5 * t[cell] * Dp  # acts on the left node
        Q = eye / s + 0.5 * t[cell] * Dp  # acts on the right node
        left, right = cell - 1, cell  # interior indices of the two nodes
        if left >= 0:
            diag[left] += P.T @ P
        if right < n3:
            diag[right] += Q.T @ Q
        if left >= 0 and right < n3:
            off.append(P.T @ Q)
    diag = [0.5 * (A + A.T) for A in diag]
    return TubeOperator(float(X), float(s), nodes[1:-1], diag, off, n)


@dataclass(frozen=True)
class WindowCount:
    a: float
    b: float
    count: int
    below_a: int
    below_b: int
    retries: int = 0


def _negatives(tube, shift, rcond):
    retries = 0
    for nudge in (0.0, 1e-12, -1e-12, 1e-10, -1e-10):
        try:
            return block_tridiagonal_negative_count(tube.diag_blocks, tube.off_blocks,
                                                    shift * (1 + nudge), rcond), retries
        except FactorizationBreakdown:
            retries += 1
    raise FactorizationBreakdown(f"block factorisation failed at shift {shift!r} after {retries} retries")


def gap_window_count(tube: TubeOperator, a: float, b: float, rcond: float = 1e-13) -> WindowCount:
    """Number of eigenvalues in ``[a, b)`` from two block LDL^T inertias."""
    if not a < b:
        raise ValueError("need a < b")
    na, ra = _negatives(tube, a, rcond)
    nb, rb = _negatives(tube, b, rcond)
    return WindowCount(float(a), float(b), nb - na, na, nb, ra + rb)


def reflection(tube: TubeOperator, grid, transverse: bool = False):
    """Permutation for ``x3 -> -x3``, combined with ``x2 -> -x2`` if ``transverse``.

    The x3 reflection alone maps the form to itself when the twist rate is
    odd; together with the transverse reflection (which reverses ``d_phi``)
    it does so when the twist rate is even and the cross-section is symmetric
    about ``x2 = 0``.
    """
    n = tube.n_transverse
    if transverse:
        xy = grid.coordinates
        try:
            flip = np.array([grid.node_of((x1, -x2)) for x1, x2 in xy])
        except KeyError as exc:
            raise ValueError("cross-section grid is not symmetric under x2 -> -x2") from exc
    else:
        flip = np.arange(n)
    perm = np.concatenate([(tube.n3 - 1 - b) * n + flip for b in range(tube.n3)])
    return sp.csr_matrix((np.ones(perm.size), (np.arange(perm.size), perm)), shape=(tube.dim, tube.dim))
