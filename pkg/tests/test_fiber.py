import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from twistgap import fiber
from twistgap.errors import TruncationTooSmall
from twistgap.fiber import TwistProfile, assemble_fiber, fiber_eigenvalues, lowest_eigenpairs
from twistgap.geometry import CrossSectionShape, assemble_transverse, build_grid
from twistgap.inertia import sparse_negative_count


@pytest.fixture(scope="module")
def ellipse_ops():
    return assemble_transverse(build_grid(CrossSectionShape.ellipse(1.0, 0.5), 1 / 8))


@settings(max_examples=50, deadline=None)
@given(mean=st.floats(-3, 3), a=st.floats(-2, 2), b=st.floats(-2, 2), x=st.floats(-10, 10))
def test_trig_profile_evaluates_its_series(mean, a, b, x):
    beta = TwistProfile.from_trig(mean, (0.0, a), (b,))
    want = mean + a * np.cos(2 * x) + b * np.sin(x)
    assert beta(x) == pytest.approx(want, abs=1e-12)
    assert beta(x, 1) == pytest.approx(-2 * a * np.sin(2 * x) + b * np.cos(x), abs=1e-12)
    assert isinstance(beta(np.array([x])).dtype.type(0), np.floating)


def test_profile_validation():
    assert TwistProfile.from_trig(1.0, (0.5, 0.2)).order == 2
    assert TwistProfile.constant(2.0).is_constant
    assert TwistProfile.zero().sup() == 0.0
    with pytest.raises(ValueError):
        TwistProfile({0: 1j})
    with pytest.raises(ValueError):
        TwistProfile({1: 1.0, -1: 2.0})


def test_fiber_matrix_hermitian_and_positive(ellipse_ops):
    beta = TwistProfile.from_trig(1.0, (0.6,), (0.2,))
    fm = assemble_fiber(ellipse_ops, beta, 0.3, 3)
    H = fm.matrix
    assert abs(H - H.conj().T).max() == 0
    # bounded below by the transverse ground state
    assert sparse_negative_count(H, 0.999 * ellipse_ops.lambda1) == 0


def test_truncation_must_cover_twist_order(ellipse_ops):
    with pytest.raises(TruncationTooSmall):
        assemble_fiber(ellipse_ops, TwistProfile.from_trig(0, (0, 0, 1.0)), 0.0, 2)


@pytest.mark.parametrize("k", [0.0, 0.2, 0.5])
def test_untwisted_spectrum_is_separable(ellipse_ops, k):
    lam = np.linalg.eigvalsh(ellipse_ops.laplacian_t.toarray())[:6]
    ell_max = 2
    want = np.sort([l + (m + k) ** 2 for l in lam for m in range(-ell_max, ell_max + 1)])[:8]
    got = fiber_eigenvalues(ellipse_ops, TwistProfile.zero(), k, ell_max, 8)
    assert np.allclose(got, want, rtol=1e-10)


def test_bands_are_even_in_k(ellipse_ops):
    beta = TwistProfile.from_trig(0.8, (0.5,), (0.3,))
    for k in (0.1, 0.37):
        a = fiber_eigenvalues(ellipse_ops, beta, k, 3, 4)
        b = fiber_eigenvalues(ellipse_ops, beta, -k, 3, 4)
        assert np.allclose(a, b, rtol=1e-9)


def test_truncation_is_monotone(ellipse_ops):
    beta = TwistProfile.from_trig(1.0, (0.6,))
    prev = None
    for ell_max in (1, 3, 5):
        vals = fiber_eigenvalues(ellipse_ops, beta, 0.25, ell_max, 4)
        if prev is not None:
            assert np.all(vals <= prev + 1e-9 * np.abs(prev))
        prev = vals
    # and converges
    assert np.allclose(prev, fiber_eigenvalues(ellipse_ops, beta, 0.25, 7, 4), rtol=1e-6)


def test_eigenpairs_residual_orthonormality_and_gauge(ellipse_ops):
    beta = TwistProfile.from_trig(1.0, (0.6,))
    fm = assemble_fiber(ellipse_ops, beta, 0.1, 2)
    ep = lowest_eigenpairs(fm, 5)
    V = ep.vectors
    assert np.allclose(V.conj().T @ V, np.eye(5), atol=1e-10)
    assert np.all(ep.residuals <= 1e-9 * np.maximum(1, np.abs(ep.values)))
    for j in range(5):
        i = np.argmax(np.abs(V[:, j]))
        assert V[i, j].imag == 0 and V[i, j].real > 0
    again = lowest_eigenpairs(assemble_fiber(ellipse_ops, beta, 0.1, 2), 5)
    assert np.array_equal(again.vectors, V)


def test_shift_invert_matches_dense(ellipse_ops, monkeypatch):
    beta = TwistProfile.from_trig(1.0, (0.6,))
    fm = assemble_fiber(ellipse_ops, beta, 0.15, 2)
    dense = sla.eigh(fm.matrix.toarray(), eigvals_only=True, subset_by_index=[0, 5])
    monkeypatch.setattr(fiber, "DENSE_LIMIT", 10)
    ep = lowest_eigenpairs(fm, 6, sigma=0.5 * ellipse_ops.lambda1)
    assert np.allclose(ep.values, dense, rtol=1e-10)


def test_eigenpairs_argument_checks(ellipse_ops):
    fm = assemble_fiber(ellipse_ops, TwistProfile.zero(), 0.0, 1)
    with pytest.raises(ValueError):
        lowest_eigenpairs(fm, 0)
    with pytest.raises(ValueError):
        lowest_eigenpairs(fm, 2, tol=0.0)


def test_fiber_dump_lists_every_entry(ellipse_ops):
    import io
    fm = assemble_fiber(ellipse_ops, TwistProfile.constant(1.0), 0.0, 1)
    buf = io.StringIO()
    fm.dump(buf)
    assert len(buf.getvalue().splitlines()) == fm.matrix.nnz + 1
