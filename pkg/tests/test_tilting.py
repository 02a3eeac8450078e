import math

import numpy as np
import pytest

from ldperf.lmgf import lmgf_direct
from ldperf.models import ShiftModel, llr_elementwise, sample_iid
from ldperf.ratefn import GammaOutOfRange, fenchel_legendre
from ldperf.tilting import (DegenerateChain, GenericTarget, TiltConfig, bernoulli_target,
                            discrete_target, estimate_phi_prime_tilted, gaussian_mean_target,
                            iid_target, integrate_phi_prime, mh_tilted_chain, rate_from_tilting,
                            tilted_phi_prime_table)

CFG = TiltConfig(n_mh=100, kept=10_000, seed=3)


def _chain(target, t, cfg=CFG, seed=0):
    return mh_tilted_chain(target, t, cfg, np.random.default_rng(seed))


def test_untilted_chain_always_accepts():
    ch = _chain(gaussian_mean_target(100), 0.0)
    assert ch.acceptance == 1.0
    m, se = estimate_phi_prime_tilted(ch.values)
    assert abs(m) <= 4 * se


@pytest.mark.parametrize("t", [0.2, 0.7, 1.0])
def test_gaussian_tilt_moves_mean_to_t(t):
    ch = _chain(gaussian_mean_target(100), t)
    m, se = estimate_phi_prime_tilted(ch.values)
    assert abs(m - t) <= 4 * se
    assert len(ch.values) == CFG.kept


@pytest.mark.parametrize("p,t", [(0.3, 0.5), (0.1, -1.0)])
def test_bernoulli_tilt_closed_form(p, t):
    ch = _chain(bernoulli_target(p, 50), t)
    m, se = estimate_phi_prime_tilted(ch.values)
    q = p * math.exp(t) / (p * math.exp(t) + 1 - p)
    assert abs(m - q) <= 4 * se


def test_constant_statistic_has_zero_error():
    ch = _chain(discrete_target([2.0], [1.0]), 0.8)
    m, se = estimate_phi_prime_tilted(ch.values)
    assert m == 2.0 and se == 0.0


def test_three_state_detailed_balance():
    values, probs = np.array([-1.0, 0.5, 2.0]), np.array([0.5, 0.3, 0.2])
    t = 0.6
    cfg = TiltConfig(n_mh=1, kept=100_000, thin=1, burn_in=1000, seed=4)
    ch = _chain(discrete_target(values, probs), t, cfg)
    exact = probs * np.exp(t * values)
    exact /= exact.sum()
    freq = np.array([np.mean(ch.values == v) for v in values])
    assert 0.5 * np.abs(freq - exact).sum() < 0.02


def test_phi_prime_monotone_in_t():
    rows = tilted_phi_prime_table(gaussian_mean_target(100), np.linspace(-1, 1, 9), CFG)
    for (_, a, sa, _), (_, b, sb, _) in zip(rows, rows[1:]):
        assert b >= a - 2 * math.hypot(sa, sb)


def test_same_seed_same_chain():
    target = iid_target(ShiftModel("laplace", 0.0, 2.0), 1, 30)
    a = _chain(target, 0.4, seed=11)
    b = _chain(target, 0.4, seed=11)
    assert np.array_equal(a.values, b.values)
    c = _chain(target, 0.4, seed=12)
    assert not np.array_equal(a.values, c.values)


def test_block_and_generic_chains_agree_with_closed_form():
    cfg = TiltConfig(n_mh=40, kept=5000, block=4, seed=5)
    m, se = estimate_phi_prime_tilted(_chain(gaussian_mean_target(40), 0.5, cfg).values)
    assert abs(m - 0.5) <= 4 * se

    def refresh(x, rng):
        y = x.copy()
        y[rng.integers(0, x.size)] = rng.standard_normal()
        return y

    generic = GenericTarget(40, lambda rng: rng.standard_normal(40), refresh, np.mean)
    cfg = TiltConfig(n_mh=40, kept=3000, seed=6)
    m, se = estimate_phi_prime_tilted(_chain(generic, 0.5, cfg).values)
    assert abs(m - 0.5) <= 4 * se


def test_degenerate_chain_warns():
    # fresh N(0,1) proposals against a target centred at 40
    with pytest.warns(DegenerateChain):
        ch = _chain(gaussian_mean_target(1), 40.0, TiltConfig(n_mh=1, kept=20_000, thin=1, burn_in=0))
    assert ch.degenerate


def test_integrate_examples():
    t = np.linspace(-1, 2, 31)
    lm = integrate_phi_prime(t, np.full(t.size, 0.7))
    assert np.allclose(lm.phi, 0.7 * lm.t, atol=1e-14)
    lm = integrate_phi_prime(t, t)
    assert np.allclose(lm.phi, lm.t**2 / 2, atol=1e-14)
    assert np.allclose(lm.d2phi, 1.0)
    lm = integrate_phi_prime([-0.5, 0.25, 1.0], [1.0, 1.0, 1.0])
    assert 0.0 in lm.t and lm.phi[list(lm.t).index(0.0)] == 0.0
    with pytest.raises(ValueError):
        integrate_phi_prime([0.5, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        integrate_phi_prime([-1.0, 1.0], [np.nan, 2.0])


def test_gaussian_mean_rate():
    res = rate_from_tilting(gaussian_mean_target(100), 1.0, CFG)
    assert abs(res.rate - 0.5) < 0.05 * 0.5
    rate, t = res
    assert t == pytest.approx(1.0, abs=0.1)


def test_rate_at_untilted_mean_is_zero():
    res = rate_from_tilting(gaussian_mean_target(100), 0.0, CFG)
    assert abs(res.rate) < 1e-3


def test_gaussian_llr_rate():
    res = rate_from_tilting(iid_target(ShiftModel("gaussian", 0.0, 1.0), 0, 100), 0.0, CFG)
    assert abs(res.rate - 0.125) < 0.05 * 0.125


def test_fixed_grid_out_of_range():
    cfg = TiltConfig(n_mh=100, kept=1000, seed=1, t_grid=(-0.2, 0.0, 0.2))
    with pytest.raises(GammaOutOfRange):
        rate_from_tilting(gaussian_mean_target(100), 1.0, cfg)


def test_tilted_and_direct_rates_agree():
    model = ShiftModel("laplace", 0.0, 2.0)
    s = llr_elementwise(model, sample_iid(model, 1, 10**5, np.random.default_rng(7)))
    direct = lmgf_direct(s, np.linspace(-3, 3, 301))
    for gamma in (0.0, -0.5):
        r_direct, t_direct = fenchel_legendre(direct, gamma)
        assert np.interp(t_direct, direct.t, direct.ess) >= 100
        r_tilt = rate_from_tilting(iid_target(model, 1, 100), gamma, CFG).rate
        assert abs(r_tilt - r_direct) <= 0.1 * r_direct


def test_small_shift_tilted_rate_inside_direct_band():
    """Weak-signal Laplace pair: tilted rate against bootstrap spread of the direct one."""
    model = ShiftModel("laplace", 0.0, 0.05)
    gamma = 0.0
    rng = np.random.default_rng(8)
    s = llr_elementwise(model, sample_iid(model, 1, 10**5, rng))
    grid = np.linspace(-40, 40, 401)
    direct = fenchel_legendre(lmgf_direct(s, grid), gamma)[0]
    boot = [fenchel_legendre(lmgf_direct(s[rng.integers(0, s.size, s.size)], grid), gamma)[0]
            for _ in range(40)]
    band = 3 * np.std(boot, ddof=1)
    tilted = rate_from_tilting(iid_target(model, 1, 1000), gamma,
                               TiltConfig(n_mh=1000, seed=9)).rate
    assert abs(tilted - direct) <= band
