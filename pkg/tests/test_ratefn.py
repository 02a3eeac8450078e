import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import llr_table, standard_normal_table
from ldperf.lmgf import lmgf_direct, lmgf_from_function
from ldperf.models import ShiftModel, gaussian_llr_rate_oracle, sample_llr_statistic
from ldperf.ratefn import GammaOutOfRange, chernoff_upper_bound, fenchel_legendre, rate_curve

GRID = np.linspace(-3, 3, 601)


def gaussian_llr(hyp, d=1.0):
    model = ShiftModel("gaussian", 0.0, d)
    return model, llr_table(model, hyp, GRID)


def test_rate_vanishes_at_mean():
    x = np.random.default_rng(0).normal(size=200)
    lm = lmgf_direct(x, np.linspace(-2, 2, 41))
    rate, t = fenchel_legendre(lm, lm.dphi[20])
    assert rate == 0.0 and t == 0.0


def test_gaussian_llr_example():
    _, lm = gaussian_llr(0)
    rate, t = fenchel_legendre(lm, 0.0)
    assert rate == pytest.approx(0.125, abs=1e-9)
    # t = gamma/d^2 + 1/2
    assert t == pytest.approx(0.5, abs=1e-8)


def test_standard_normal_example():
    rate, t = fenchel_legendre(standard_normal_table(GRID), 1.0)
    assert rate == pytest.approx(0.5, abs=1e-9)
    assert t == pytest.approx(1.0, abs=1e-8)


def test_out_of_range_rejected():
    lm = standard_normal_table(np.linspace(-1, 1, 11))
    for g in (1.0, -1.0, 5.0):
        with pytest.raises(GammaOutOfRange):
            fenchel_legendre(lm, g)
    rc = rate_curve(lm, [0.5, 2.0])
    assert rc.skipped == (2.0,)
    with pytest.raises(GammaOutOfRange):
        rate_curve(lm, [3.0])


def test_symmetric_scores_give_symmetric_rate():
    x = np.random.default_rng(1).exponential(size=400)
    x = np.concatenate([x, -x])
    lm = lmgf_direct(x, np.linspace(-2, 2, 201))
    g = np.linspace(-0.8, 0.8, 17)
    rc = rate_curve(lm, g)
    assert np.allclose(rc.rate, rc.rate[::-1], atol=1e-8)


def test_gaussian_rate_curve_is_parabola():
    model, lm = gaussian_llr(0)
    g = np.linspace(-0.5, 0.5, 41)
    rc = rate_curve(lm, g)
    assert np.max(np.abs(rc.rate - (g + 0.5) ** 2 / 2)) < 1e-6
    assert np.max(np.abs(rc.rate - gaussian_llr_rate_oracle(model, 0, g))) < 1e-6


@pytest.mark.parametrize("model", [ShiftModel("gaussian", 0.0, 1.0),
                                   ShiftModel("laplace", 0.0, 2.0),
                                   ShiftModel("laplace", 0.0, 0.7, 1.5)])
def test_llr_shift_property(model):
    lm0, lm1 = llr_table(model, 0, GRID), llr_table(model, 1, GRID)
    lo = max(lm0.dphi.min(), lm1.dphi.min())
    hi = min(lm0.dphi.max(), lm1.dphi.max())
    g = np.linspace(lo, hi, 42)[1:-1]
    r0, r1 = rate_curve(lm0, g), rate_curve(lm1, g)
    assert np.max(np.abs(r1.rate - (r0.rate - g))) < 1e-6


@settings(deadline=None, max_examples=40)
@given(st.lists(st.floats(-10, 10), min_size=5, max_size=50, unique=True),
       st.floats(0.05, 0.95))
def test_duality_residual(xs, frac):
    lm = lmgf_direct(xs, np.linspace(-1, 1, 41))
    lo, hi = lm.dphi.min(), lm.dphi.max()
    if not hi - lo > 1e-6:
        return
    g = lo + frac * (hi - lo)
    rate, t = fenchel_legendre(lm, g)
    assert abs(float(lm.dphi_at(t)) - g) <= 1e-6 * (1 + abs(g))
    assert rate >= 0


@pytest.mark.parametrize("source", ["laplace", "empirical"])
def test_curvature_reciprocity(source):
    if source == "laplace":
        lm = llr_table(ShiftModel("laplace", 0.0, 2.0), 0, GRID)
    else:
        x = np.random.default_rng(2).gamma(3.0, size=20_000)
        lm = lmgf_direct(x, np.linspace(-1, 1, 801))
    g = np.linspace(np.quantile(lm.dphi, 0.2), np.quantile(lm.dphi, 0.8), 25)
    h = 1e-3 * (g[-1] - g[0])
    rates = [rate_curve(lm, g + k * h).rate for k in (-1, 0, 1)]
    second = (rates[0] - 2 * rates[1] + rates[2]) / h**2
    t = rate_curve(lm, g).t_gamma
    curv = lm.d2phi_at(t)
    ok = curv > 1e-6
    assert np.all(np.abs(second[ok] * curv[ok] - 1) < 0.05)


def test_zero_only_at_mean_and_monotone():
    lm = llr_table(ShiftModel("laplace", 0.0, 2.0), 1, GRID)
    g = np.linspace(lm.dphi.min(), lm.dphi.max(), 203)[1:-1]
    rc = rate_curve(lm, g)
    assert np.all(rc.rate >= 0)
    left, right = rc.gamma < rc.mu, rc.gamma > rc.mu
    assert np.all(np.diff(rc.rate[left]) <= 1e-12)
    assert np.all(np.diff(rc.rate[right]) >= -1e-12)
    assert np.all(rc.rate[np.abs(rc.gamma - rc.mu) > 0.05] > 1e-6)
    assert fenchel_legendre(lm, rc.mu)[0] == pytest.approx(0.0, abs=1e-9)


def test_chernoff_examples():
    lm = standard_normal_table(GRID)
    assert chernoff_upper_bound(lm, 0.0, 10) == 1.0
    bound = chernoff_upper_bound(lm, 1.0, 4)
    assert bound == pytest.approx(math.exp(-2), rel=1e-8)
    assert stats.norm.sf(2.0) <= bound


def test_chernoff_bounds_laplace_monte_carlo():
    model = ShiftModel("laplace", 0.0, 2.0)
    lm = llr_table(model, 0, GRID)
    n = 100
    gamma = lm.mean + 0.25
    tail = np.mean(sample_llr_statistic(model, 0, n, 10**6, np.random.default_rng(3)) >= gamma)
    assert 0 < tail <= chernoff_upper_bound(lm, gamma, n)


def test_analytic_table_round_trip():
    lm = lmgf_from_function(lambda t: (t, np.ones_like(t), np.zeros_like(t)),
                            np.linspace(-1, 1, 3))
    assert lm.mean == 1.0
