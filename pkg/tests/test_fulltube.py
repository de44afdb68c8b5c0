import numpy as np
import pytest
import scipy.linalg as sla

from twistgap.effective import DecayProfile
from twistgap.errors import ResolutionTooCoarse
from twistgap.fiber import TwistProfile, fiber_eigenvalues
from twistgap.fulltube import assemble_tube, gap_window_count, reflection
from twistgap.geometry import CrossSectionShape, assemble_transverse, build_grid
from twistgap.inertia import sparse_negative_count


@pytest.fixture(scope="module")
def ops():
    return assemble_transverse(build_grid(CrossSectionShape.ellipse(1.0, 0.5), 1 / 8))


def test_untwisted_tube_spectrum_is_separable(ops):
    X, s = 2 * np.pi, 2 * np.pi / 16
    tube = assemble_tube(ops, TwistProfile.zero(), None, X, s)
    cells = tube.n3 + 1
    lam = np.linalg.eigvalsh(ops.laplacian_t.toarray())
    m = np.arange(1, tube.n3 + 1)
    longitudinal = 4 / s**2 * np.sin(m * np.pi / (2 * cells)) ** 2
    spectrum = np.sort((lam[:, None] + longitudinal[None, :]).ravel())
    for a, b in [(0.0, 14.0), (14.0, 30.0), (25.0, 60.0)]:
        want = int(np.sum((spectrum >= a) & (spectrum < b)))
        assert gap_window_count(tube, a, b).count == want


def test_tube_matrix_symmetric_positive(ops):
    tube = assemble_tube(ops, TwistProfile.from_trig(1.0, (0.5,)), DecayProfile.power(1.0, 1.5),
                         2 * np.pi, 2 * np.pi / 16)
    A = tube.to_sparse()
    assert abs(A - A.T).max() == 0
    assert sparse_negative_count(A, 0.0) == 0
    assert tube.dim == A.shape[0] == tube.n3 * ops.n


def test_zero_perturbation_reduces_to_twist_only(ops):
    beta = TwistProfile.constant(1.0)
    a = assemble_tube(ops, beta, None, 2 * np.pi, 2 * np.pi / 16)
    b = assemble_tube(ops, beta, DecayProfile.power(1.0, 1.5), 2 * np.pi, 2 * np.pi / 16, c=0.0)
    assert abs(a.to_sparse() - b.to_sparse()).max() == 0


def test_no_states_below_the_edge_without_perturbation(ops):
    beta = TwistProfile.constant(1.0)
    e0 = fiber_eigenvalues(ops, beta, 0.0, 2, 1)[0]
    tube = assemble_tube(ops, beta, None, 4 * np.pi, 2 * np.pi / 16)
    assert gap_window_count(tube, 0.0, e0 - 0.02).count == 0


def test_window_count_matches_dense(ops):
    tube = assemble_tube(ops, TwistProfile.constant(1.0), DecayProfile.power(4.0, 1.5), 2 * np.pi, 2 * np.pi / 16)
    w = sla.eigvalsh(tube.to_sparse().toarray())
    for a, b in [(0.0, 12.0), (10.0, 13.0), (12.5, 20.0)]:
        wc = gap_window_count(tube, a, b)
        assert wc.count == int(np.sum((w >= a) & (w < b)))
        assert wc.below_b - wc.below_a == wc.count
    with pytest.raises(ValueError):
        gap_window_count(tube, 1.0, 1.0)


def test_odd_twist_rate_commutes_with_axial_reflection(ops):
    beta = TwistProfile.from_trig(0.0, (), (0.7,))
    tube = assemble_tube(ops, beta, None, 2 * np.pi, 2 * np.pi / 16)
    A, P = tube.to_sparse(), reflection(tube, ops.grid)
    assert abs(P @ A @ P.T - A).max() < 1e-12 * abs(A).max()


def test_even_twist_rate_needs_transverse_flip(ops):
    tube = assemble_tube(ops, TwistProfile.constant(1.0), DecayProfile.power(1.0, 1.5), 2 * np.pi, 2 * np.pi / 16)
    A = tube.to_sparse()
    P = reflection(tube, ops.grid, transverse=True)
    assert abs(P @ A @ P.T - A).max() < 1e-12 * abs(A).max()
    Q = reflection(tube, ops.grid)
    assert abs(Q @ A @ Q.T - A).max() > 1e-3


def test_reflection_rejects_asymmetric_grid():
    ops = assemble_transverse(build_grid(CrossSectionShape.rectangle(1.0, 0.6, (0.0, 0.13)), 0.1))
    tube = assemble_tube(ops, TwistProfile.constant(1.0), None, 2 * np.pi, 2 * np.pi / 16)
    with pytest.raises(ValueError):
        reflection(tube, ops.grid, transverse=True)


def test_counts_grow_with_perturbation_strength(ops):
    beta = TwistProfile.constant(1.0)
    e0 = fiber_eigenvalues(ops, beta, 0.0, 2, 1)[0]
    counts = [gap_window_count(assemble_tube(ops, beta, DecayProfile.power(c, 1.5), 4 * np.pi, 2 * np.pi / 16,
                                             c=1.0), 0.0, e0 - 0.02).count for c in (1.0, 4.0, 16.0)]
    assert counts == sorted(counts) and counts[-1] > 0


def test_sign_flip_moves_states_out_of_the_window(ops):
    beta = TwistProfile.constant(1.0)
    e0 = fiber_eigenvalues(ops, beta, 0.0, 2, 1)[0]
    eps = DecayProfile.power(4.0, 1.5)
    up = gap_window_count(assemble_tube(ops, beta, eps, 4 * np.pi, 2 * np.pi / 16, c=1.0), 0.0, e0 - 0.02)
    down = gap_window_count(assemble_tube(ops, beta, eps, 4 * np.pi, 2 * np.pi / 16, c=-1.0), 0.0, e0 - 0.02)
    assert up.count > 0 and down.count == 0


def test_argument_checks(ops):
    beta = TwistProfile.from_trig(1.0, (0.5, 0.2))
    with pytest.raises(ValueError):
        assemble_tube(ops, beta, None, 5.0, 0.1)
    with pytest.raises(ValueError):
        assemble_tube(ops, beta, None, 2 * np.pi, 0.3)
    with pytest.raises(ResolutionTooCoarse):
        assemble_tube(ops, beta, None, 2 * np.pi, 2 * np.pi / 8)
