import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from twistgap.coupling import CouplingFunction
from twistgap.effective import (Channel, CountCurve, DecayProfile, EffectiveModel, classify_regime, count_below,
                                count_curve, count_matrix, edge_model, fit_log_law, fit_power_law, graded_mesh,
                                log_law_coefficient, semiclassical_count, uniform_mesh)
from twistgap.errors import InsufficientGrowth, NotConverged
from twistgap.inertia import tridiagonal_negative_count

# bound states of -u'' - 20 * 1_{|x| < 2} u: roots of z tan z = sqrt(z0^2 - z^2) (even) and
# -z cot z = sqrt(z0^2 - z^2) (odd), z0 = 2 sqrt(20), E = -(z0^2 - z^2) / 4
SQUARE_WELL_LEVELS = [-19.501394818293903, -18.01084649687608, -15.545940940694319,
                      -12.143719284374377, -7.882910918894375, -2.9825006564863976]


@pytest.mark.parametrize("lam", [0.5, 2.0, 5.0, 10.0, 14.0, 17.0, 19.0, 19.8])
def test_square_well_counts_match_transcendental_levels(lam):
    model = EffectiveModel.single(1.0, DecayProfile.square_well(20.0, 2.0))
    want = sum(e < -lam for e in SQUARE_WELL_LEVELS)
    res = count_below(model, lam)
    assert res.converged and res.value == want


def test_square_well_semiclassical_closed_form():
    model = EffectiveModel.single(2.0, DecayProfile.square_well(20.0, 2.0))
    for lam in (0.1, 3.0, 15.0):
        want = 2 * 2.0 * math.sqrt((20.0 - lam) / 2.0) / math.pi
        assert semiclassical_count(model, lam).value == pytest.approx(want, rel=1e-12)
    assert semiclassical_count(model, 25.0).value == 0.0


@pytest.mark.parametrize("alpha,lam", [(0.8, 1e-3), (1.5, 1e-2), (2.0, 1e-4)])
def test_power_semiclassical_against_midpoint_rule(alpha, lam):
    mu, c = 1.5, 2.0
    model = EffectiveModel.single(mu, DecayProfile.power(c, alpha))
    rt = math.sqrt((c / lam) ** (2 / alpha) - 1)
    n = 400_000
    x = (np.arange(n) + 0.5) * rt / n
    integrand = np.sqrt(np.clip(c * (1 + x * x) ** (-alpha / 2) - lam, 0, None))
    want = 2 * integrand.sum() * rt / n / (math.pi * math.sqrt(mu))
    sc = semiclassical_count(model, lam)
    assert sc.value == pytest.approx(want, rel=1e-5)
    assert sc.phase_space == pytest.approx(sc.value, rel=1e-6)


def test_semiclassical_rejects_oscillating_coupling():
    eta = CouplingFunction.from_function(lambda x: 1 + np.cos(x), 1)
    with pytest.raises(ValueError):
        semiclassical_count(EffectiveModel.single(1.0, DecayProfile.power(1.0, 1.0), eta), 0.1)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.5, 10), alpha=st.floats(0.6, 3.0), mu=st.floats(0.3, 3.0),
       l1=st.floats(1e-3, 1.0), ratio=st.floats(1.0, 20.0))
def test_counts_nondecreasing_as_lambda_decreases(c, alpha, mu, l1, ratio):
    model = EffectiveModel.single(mu, DecayProfile.power(c, alpha))
    hi, lo = c * l1, c * l1 / ratio
    R = 200.0
    a = count_below(model, hi, R=R, n=3999, max_refine=0, raise_on_failure=False).value
    b = count_below(model, lo, R=R, n=3999, max_refine=0, raise_on_failure=False).value
    assert b >= a


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.5, 20), alpha=st.floats(0.6, 3.0), lam=st.floats(1e-3, 1.0), R=st.floats(5, 50),
       n=st.integers(20, 400).map(lambda n: 2 * n + 1))
def test_dirichlet_bracketing(c, alpha, lam, R, n):
    ch = Channel(1.0, DecayProfile.power(c, alpha))
    small, big = uniform_mesh(R, n), uniform_mesh(2 * R, 2 * n + 1)
    assert np.allclose(small.steps[0], big.steps[0])
    a = tridiagonal_negative_count(*count_matrix(ch, small, lam * c))
    b = tridiagonal_negative_count(*count_matrix(ch, big, lam * c))
    assert a <= b


@settings(max_examples=15, deadline=None)
@given(c1=st.floats(0.5, 5), c2=st.floats(0.5, 5), mu1=st.floats(0.3, 3), mu2=st.floats(0.3, 3),
       lam=st.floats(1e-3, 0.3))
def test_orthogonal_sum_additivity(c1, c2, mu1, mu2, lam):
    ch1 = Channel(mu1, DecayProfile.power(c1, 1.2))
    ch2 = Channel(mu2, DecayProfile.gaussian(c2, 1.0))
    kw = dict(R=60.0, n=2999, max_refine=0, raise_on_failure=False)
    both = count_below(EffectiveModel((ch1, ch2)), lam, **kw).value
    assert both == count_below(EffectiveModel((ch1,)), lam, **kw).value + count_below(
        EffectiveModel((ch2,)), lam, **kw).value


def test_refinement_flags():
    model = EffectiveModel.single(1.0, DecayProfile.power(1.0, 1.0))
    res = count_below(model, 1e-3)
    assert res.converged
    levels = [h[0] for h in res.history]
    assert levels == sorted(levels) and res.history[-1][2] == res.history[-2][2] == res.value
    with pytest.raises(NotConverged):
        count_below(model, 1e-3, max_refine=0)
    assert not count_below(model, 1e-3, max_refine=0, raise_on_failure=False).converged
    with pytest.raises(ValueError):
        count_below(model, 0.0)


def test_repulsive_potential_has_no_count():
    model = EffectiveModel.single(1.0, DecayProfile.signed_power(-3.0, 1.0))
    assert count_below(model, 1e-4).value == 0


def test_graded_mesh_contains_breakpoints_and_is_symmetric():
    ch = Channel(1.0, DecayProfile.square_well(5.0, 1.3))
    mesh = graded_mesh(ch, 0.01, 40.0)
    x = mesh.nodes
    assert np.any(np.isclose(x, 1.3, atol=1e-14)) and np.any(np.isclose(x, -1.3, atol=1e-14))
    assert np.allclose(x, -x[::-1])
    assert np.all(np.diff(x) > 0)
    assert x[0] == -40.0 and x[-1] == 40.0


@settings(max_examples=25, deadline=None)
@given(fam=st.sampled_from(["power", "gaussian", "compact_bump"]), alpha=st.floats(0.5, 3), R=st.floats(0.5, 3),
       x=st.floats(-4, 4), order=st.integers(0, 3))
def test_profile_derivatives_match_finite_differences(fam, alpha, R, x, order):
    p = {"power": DecayProfile.power(1.7, alpha), "gaussian": DecayProfile.gaussian(1.7, R),
         "compact_bump": DecayProfile.compact_bump(1.7, R)}[fam]
    if fam == "compact_bump" and abs(abs(x) - R) < 1e-2:
        return
    h = 1e-5
    fd = (p(x + h, order) - p(x - h, order)) / (2 * h)
    assert float(p(x, order + 1)) == pytest.approx(float(fd), rel=1e-5, abs=1e-6)


def test_profile_classification():
    p = DecayProfile.power(2.0, 1.5)
    dc = p.decay_class()
    assert dc["in_S"] and dc["S_plus"]
    assert not DecayProfile.signed_power(-2.0, 1.5).decay_class()["S_plus"]
    assert DecayProfile.power_with_limit(1.25).limit_L == 1.25
    assert DecayProfile.power(1.0, 3.0).limit_L == 0.0
    assert DecayProfile.power(1.0, 1.0).limit_L == math.inf
    assert DecayProfile.power(3.0, 2.0).envelope_radius(3.0 / 5) == pytest.approx(2.0)
    assert DecayProfile.gaussian(1.0, 2.0).envelope_radius(math.exp(-4)) == pytest.approx(4.0)
    for bad in (lambda: DecayProfile.power(-1.0, 1.0), lambda: DecayProfile("cubic", 1.0),
                lambda: DecayProfile.power(1.0, 0.0)):
        with pytest.raises(ValueError):
            bad()
    with pytest.raises(ValueError):
        Channel(0.0, p)


def _synthetic_curve(exponent, amp=40.0):
    lams = np.geomspace(1e-1, 1e-6, 25)
    counts = np.floor(amp * lams**exponent).astype(int)
    return CountCurve(lams, counts, lams, lams, np.ones(25, bool), amp * lams**exponent)


def test_power_fit_recovers_exponent():
    fit = fit_power_law(_synthetic_curve(-0.3), alpha=1.25)
    assert fit.exponent == pytest.approx(-0.3, rel=0.02)
    assert fit.predicted == pytest.approx(0.5 - 1 / 1.25)
    assert 0.95 <= fit.ratio_at_min <= 1.0
    with pytest.raises(InsufficientGrowth):
        fit_power_law(_synthetic_curve(-0.05, amp=1.0), alpha=1.5)


def test_log_law_fit():
    lams = np.geomspace(1e-1, 1e-20, 40)
    slope = 1 / math.pi
    curve = CountCurve(lams, np.floor(slope * np.abs(np.log(lams))).astype(int) + 2, lams, lams,
                       np.ones(40, bool))
    fit = fit_log_law(curve, 1.0, 1.0, 1.25)
    assert fit.predicted == pytest.approx(slope)
    assert fit.slope == pytest.approx(slope, rel=0.05)
    assert log_law_coefficient(1.0, 1.0, 0.2) == 0.0


def test_regime_table():
    assert classify_regime([0.3], 1.5) == ("i", True)
    assert classify_regime([-0.3], 1.5) == ("i-negative", False)
    assert classify_regime([0.0], 1.5) == ("ii", None)
    assert classify_regime([0.3], 3.0) == ("iv", False)
    assert classify_regime([1.0], 2.0, L=1.25) == ("iii", True)
    assert classify_regime([1.0], 2.0, L=0.2) == ("iii", False)
    assert classify_regime([-0.2, 0.1], 1.0) == ("i", True)


class _Ext:
    def __init__(self, mu):
        self.mu = mu


class _Rep:
    def __init__(self, side, mus):
        self.side = side
        self.extremizers = [_Ext(m) for m in mus]


def test_edge_model_sign_and_scale():
    eta = CouplingFunction.from_function(lambda x: 0.1 + 0.05 * np.cos(x), 1)
    prof = DecayProfile.power(1.0, 1.5)
    up = edge_model(_Rep("+", [2.0]), [eta], prof)
    down = edge_model(_Rep("-", [3.0]), [eta], prof)
    assert up.channels[0].coefficient == pytest.approx(2 * np.pi * 0.1)
    assert down.channels[0].coefficient == pytest.approx(-2 * np.pi * 0.1)
    assert up.channels[0].mu == 2.0 and down.channels[0].mu == 3.0
    full = edge_model(_Rep("+", [2.0, 2.0]), [eta, eta], prof, full=True)
    assert len(full.channels) == 2 and not full.channels[0].mean_field
    assert full.channels[0].coefficient == pytest.approx(2 * np.pi * 0.1)


def test_count_curve_is_monotone_and_carries_flags():
    model = EffectiveModel.single(1.0, DecayProfile.power(1.0, 0.8))
    cur = count_curve(model, 1e-4, 1e-1, points=8)
    assert cur.is_monotone()
    assert cur.converged.all()
    rows = list(cur.rows())
    assert len(rows) == 8 and all(len(r) == 6 for r in rows)
    assert cur.semiclassical is not None and np.all(cur.semiclassical > 0)


def test_oscillating_coupling_count_is_exact_against_dense():
    import scipy.linalg as sla
    from twistgap.effective import tridiagonal_pencil
    eta = CouplingFunction.from_function(lambda x: 1 + np.cos(x), 1)
    ch = Channel(1.0, DecayProfile.power(2.0, 1.0), eta)
    mesh = uniform_mesh(30.0, 300)
    (kd, ko), (vd, vo), (md, mo) = tridiagonal_pencil(ch, mesh)
    tri = lambda d, o: np.diag(d) + np.diag(o, 1) + np.diag(o, -1)  # noqa: E731
    w = sla.eigh(tri(kd, ko) - tri(vd, vo), tri(md, mo), eigvals_only=True)
    for lam in (0.01, 0.1, 0.5):
        assert tridiagonal_negative_count(*count_matrix(ch, mesh, lam)) == int(np.sum(w < -lam))
