"""Sylvester-inertia counting: how many eigenvalues lie below a shift.

All routines return exact integer counts for the matrix they are given; no
eigenvalue is ever computed.
"""

from __future__ import annotations

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FactorizationBreakdown


@numba.njit(cache=True)
def _sturm_count(diag, off, pivmin):
    n = diag.shape[0]
    count = 0
    d = diag[0]
    if abs(d) < pivmin:
        d = -pivmin
    if d < 0:
        count += 1
    for i in range(1, n):
        d = diag[i] - off[i - 1] * off[i - 1] / d
        if abs(d) < pivmin:
            d = -pivmin
        if d < 0:
            count += 1
    return count


def tridiagonal_negative_count(diag, off):
    """Number of negative eigenvalues of the symmetric tridiagonal matrix.

    Runs the LDL^T recurrence ``d_i = a_i - b_{i-1}^2 / d_{i-1}`` and counts
    negative pivots. A zero pivot is nudged to ``-pivmin`` as in LAPACK's
    ``dstebz``; the count then refers to the matrix shifted by at most
    ``pivmin``, which only matters for an eigenvalue sitting exactly at zero.
    """
    diag = np.ascontiguousarray(diag, dtype=np.float64)
    off = np.ascontiguousarray(off, dtype=np.float64)
    if diag.size == 0:
        return 0
    if off.size != diag.size - 1:
        raise ValueError("off-diagonal must have length n - 1")
    scale = max(float(np.max(np.abs(diag))), float(np.max(np.abs(off), initial=0.0)), np.finfo(float).tiny)
    pivmin = np.finfo(float).tiny * max(1.0, scale) / np.finfo(float).eps
    return int(_sturm_count(diag, off, pivmin))


def sparse_negative_count(A, shift=0.0):
    """Number of eigenvalues of the sparse Hermitian ``A`` below ``shift``.

    SuperLU in symmetric mode with diagonal pivoting only yields
    ``P (A - shift) P^T = L U`` with a symmetric permutation, so the signs of
    ``diag(U)`` give the inertia.
    """
    n = A.shape[0]
    M = sp.csc_matrix(A - shift * sp.identity(n, format="csc", dtype=A.dtype))
    try:
        lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise FactorizationBreakdown(f"sparse factorisation failed at shift {shift!r}: {exc}") from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise FactorizationBreakdown("row and column permutations differ; inertia not available")
    d = lu.U.diagonal().real
    return int(np.count_nonzero(d < 0))


def block_tridiagonal_negative_count(diag_blocks, off_blocks, shift=0.0, rcond=1e-13):
    """Negative inertia of a symmetric block tridiagonal matrix minus ``shift``.

    ``diag_blocks[j]`` are the dense diagonal blocks and ``off_blocks[j]`` the
    block coupling row ``j`` to row ``j + 1``. Block elimination gives Schur
    complements ``S_j = A_j - B_{j-1}^T S_{j-1}^{-1} B_{j-1}`` and the inertia is
    additive over them (Haynsworth). A nearly singular Schur complement raises
    :class:`FactorizationBreakdown`.
    """
    count = 0
    S_prev = None
    B_prev = None
    for j, A in enumerate(diag_blocks):
        S = np.array(A, dtype=float, copy=True)
        S[np.diag_indices_from(S)] -= shift
        if S_prev is not None:
            w, V = S_prev
            X = V.T @ B_prev
            S -= X.T @ (X / w[:, None])
        S = 0.5 * (S + S.T)
        w, V = np.linalg.eigh(S)
        if np.min(np.abs(w)) <= rcond * max(np.max(np.abs(w)), 1.0):
            raise FactorizationBreakdown(f"singular Schur complement at block {j} (shift {shift!r})")
        count += int(np.count_nonzero(w < 0))
        S_prev = (w, V)
        if j < len(off_blocks):
            B_prev = np.asarray(off_blocks[j], dtype=float)
    return count
