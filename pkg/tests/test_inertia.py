import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from twistgap.errors import FactorizationBreakdown
from twistgap.inertia import block_tridiagonal_negative_count, sparse_negative_count, tridiagonal_negative_count

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 60).flatmap(lambda n: st.tuples(arrays(float, n, elements=finite),
                                                      arrays(float, n - 1, elements=finite))))
def test_tridiagonal_count_matches_eigvalsh(data):
    d, o = data
    A = np.diag(d) + np.diag(o, 1) + np.diag(o, -1)
    w = np.linalg.eigvalsh(A)
    if np.min(np.abs(w)) < 1e-8 * max(1.0, np.abs(w).max()):
        return  # eigenvalue at the shift; the count is ambiguous
    assert tridiagonal_negative_count(d, o) == int(np.sum(w < 0))


def test_tridiagonal_edge_cases():
    assert tridiagonal_negative_count([], []) == 0
    assert tridiagonal_negative_count([-1.0], []) == 1
    # zero pivot followed by a positive one: eigenvalues +-1
    assert tridiagonal_negative_count([0.0, 0.0], [1.0]) == 1
    with pytest.raises(ValueError):
        tridiagonal_negative_count([1.0, 2.0], [1.0, 1.0])


def test_second_difference_count_is_exact():
    # eigenvalues of the Dirichlet second difference are 2 - 2 cos(j pi / (n + 1))
    n = 500
    w = 2 - 2 * np.cos(np.arange(1, n + 1) * np.pi / (n + 1))
    for shift in (0.01, 0.5, 1.3, 3.99):
        assert tridiagonal_negative_count(np.full(n, 2.0 - shift), np.full(n - 1, -1.0)) == int(np.sum(w < shift))


@pytest.mark.parametrize("seed", range(5))
def test_sparse_count_matches_dense(seed):
    rng = np.random.default_rng(seed)
    n = 80
    A = sp.random(n, n, density=0.05, random_state=rng)
    A = A + A.T + sp.diags(rng.uniform(-2, 4, n))
    w = np.linalg.eigvalsh(A.toarray())
    for shift in (-1.0, 0.3, 2.0):
        assert sparse_negative_count(sp.csr_matrix(A), shift) == int(np.sum(w < shift))


def test_sparse_count_hermitian_complex():
    rng = np.random.default_rng(7)
    n = 40
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = B @ B.conj().T / n + np.diag(np.linspace(0, 3, n))
    w = np.linalg.eigvalsh(A)
    shift = float(np.median(w)) + 1e-3
    assert sparse_negative_count(sp.csr_matrix(A), shift) == int(np.sum(w < shift))


@pytest.mark.parametrize("seed", range(4))
def test_block_tridiagonal_matches_dense(seed):
    rng = np.random.default_rng(seed)
    nb, m = 6, 5
    diag = []
    for _ in range(nb):
        X = rng.standard_normal((m, m))
        diag.append(X + X.T)
    off = [rng.standard_normal((m, m)) for _ in range(nb - 1)]
    A = np.zeros((nb * m, nb * m))
    for j in range(nb):
        A[j * m:(j + 1) * m, j * m:(j + 1) * m] = diag[j]
    for j in range(nb - 1):
        A[j * m:(j + 1) * m, (j + 1) * m:(j + 2) * m] = off[j]
        A[(j + 1) * m:(j + 2) * m, j * m:(j + 1) * m] = off[j].T
    w = np.linalg.eigvalsh(A)
    for shift in (-2.0, 0.1, 1.7):
        assert block_tridiagonal_negative_count(diag, off, shift) == int(np.sum(w < shift))


def test_block_breakdown_on_singular_schur_complement():
    with pytest.raises(FactorizationBreakdown):
        block_tridiagonal_negative_count([np.eye(2), np.eye(2)], [np.zeros((2, 2))], shift=1.0)
