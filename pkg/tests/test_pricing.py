import numpy as np
import pytest
from hypothesis import given, strategies as st

from shapereg.pricing import (BasketParams, CallParams, basket_gradient_bounds, bs_call_price,
                              mc_basket_value, mc_basket_values, sample_basket_data,
                              sample_call_data)

mpmath = pytest.importorskip("mpmath")


def bs_mp(S, K, r, tau, sigma):
    """Closed-form call price in 40-digit arithmetic."""
    mpmath.mp.dps = 40
    S, K, r, tau, sigma = map(mpmath.mpf, (S, K, r, tau, sigma))
    vol = sigma * mpmath.sqrt(tau)
    d1 = (mpmath.log(S / K) + (r + sigma ** 2 / 2) * tau) / vol
    d2 = d1 - vol
    N = lambda z: mpmath.ncdf(z)
    return float(S * N(d1) - K * mpmath.exp(-r * tau) * N(d2))


def test_call_price_reference_values():
    assert bs_call_price(10.0, 10.0, 0.0, 0.3, 0.2) == pytest.approx(0.43676, abs=5e-5)
    assert bs_call_price(10.0, 10.0, 0.0, 0.3, 0.2) == pytest.approx(bs_mp(10, 10, 0, 0.3, 0.2),
                                                                      rel=1e-13)


@given(st.floats(1.0, 30.0), st.floats(5.0, 15.0), st.floats(0.0, 0.1), st.floats(0.05, 2.0),
       st.floats(0.05, 0.8))
def test_call_price_matches_high_precision(S, K, r, tau, sigma):
    ref = bs_mp(S, K, r, tau, sigma)
    assert bs_call_price(S, K, r, tau, sigma) == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_call_price_limits():
    # deep in the money: S - K e^{-r tau}
    assert bs_call_price(100.0, 10.0, 0.05, 0.3, 0.2) == pytest.approx(100 - 10 * np.exp(-0.015))
    # vanishing volatility: discounted intrinsic value of the forward
    assert bs_call_price(12.0, 10.0, 0.0, 0.3, 1e-8) == pytest.approx(2.0, abs=1e-9)
    assert bs_call_price(8.0, 10.0, 0.0, 0.3, 1e-8) == pytest.approx(0.0, abs=1e-12)
    out = bs_call_price(np.array([9.0, 10.0, 11.0]), 10.0, 0.0, 0.3, 0.2)
    assert out.shape == (3,) and np.all(np.diff(out) > 0)


@pytest.mark.parametrize("args", [(0.0, 10, 0, 0.3, 0.2), (10, 0.0, 0, 0.3, 0.2),
                                  (10, 10, 0, 0.0, 0.2), (10, 10, 0, 0.3, 0.0)])
def test_call_price_domain(args):
    with pytest.raises(ValueError):
        bs_call_price(*args)


def test_call_price_shape():
    S = np.linspace(5, 15, 400)
    V = bs_call_price(S, 10.0, 0.0, 0.3, 0.2)
    q = np.diff(V) / np.diff(S)
    assert np.all(q >= 0) and np.all(q <= 1)
    assert np.all(np.diff(q) >= -1e-12)


def test_call_data_is_unbiased_for_price():
    p = sample_call_data(200_000, seed=4)
    pr = CallParams()
    S, V = p.X[0], p.Y
    assert np.all(V >= 0) and p.d == 1
    edges = np.quantile(S, np.linspace(0.1, 0.9, 9))
    for lo, hi in zip(edges, edges[1:]):
        sel = (S >= lo) & (S < hi)
        err = V[sel].mean() - bs_call_price(S[sel], pr.K, pr.r, pr.tau, pr.sigma).mean()
        assert abs(err) <= 4 * V[sel].std() / np.sqrt(sel.sum())


def test_call_data_spot_law():
    pr = CallParams()
    logS = np.log(sample_call_data(100_000, seed=1).X[0])
    se = pr.sigma * np.sqrt(pr.t / logS.size)
    assert logS.mean() == pytest.approx(np.log(pr.K) - 0.5 * pr.sigma ** 2 * pr.t, abs=4 * se)
    assert logS.std() == pytest.approx(pr.sigma * np.sqrt(pr.t), rel=0.01)


def test_sampling_is_deterministic():
    a, b = sample_call_data(50, seed=3), sample_call_data(50, seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    a, b = sample_basket_data(40, seed=3), sample_basket_data(40, seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert not np.array_equal(a.Y, sample_basket_data(40, seed=4).Y)


def test_basket_defaults_and_validation():
    bp = BasketParams()
    assert np.allclose(bp.weights, 0.2) and np.allclose(bp.vols, [0.2, 0.225, 0.25, 0.275, 0.3])
    C = bp.covariance()
    assert np.allclose(np.diag(C), 0.5 * np.asarray(bp.vols) ** 2)
    with pytest.raises(ValueError):
        BasketParams(M=2, weights=(0.5, 0.6))
    with pytest.raises(ValueError):
        BasketParams(M=2, vols=(0.2,))
    with pytest.raises(ValueError):
        BasketParams(M=3, rho=-0.9).cholesky()


def test_basket_data_law():
    bp = BasketParams()
    p = sample_basket_data(100_000, bp, seed=0)
    assert np.all(p.X > 0) and np.all(p.X < 5 * bp.K) and np.all(p.Y >= 0)
    # recover the log-returns from a K = 0 basket of one asset at a time
    one = BasketParams(M=5, weights=(1, 0, 0, 0, 0), K=0.0)
    q = sample_basket_data(100_000, one, seed=0, price_high=50.0)
    ret = np.log(q.Y / q.X[0])
    assert ret.var() == pytest.approx(bp.covariance()[0, 0], rel=0.05)
    with pytest.raises(ValueError, match="empty"):
        sample_basket_data(10, one)


def test_basket_log_return_covariance():
    bp = BasketParams()
    Z = np.random.default_rng(0).standard_normal((100_000, bp.M))
    from shapereg.pricing import _terminal_prices
    ST = _terminal_prices(np.ones((bp.M, 1)), bp, Z)[:, :, 0]
    emp = np.cov(np.log(ST).T)
    C = bp.covariance()
    assert np.all(np.abs(emp - C) <= 0.05 * np.abs(C))


def test_single_asset_basket_matches_closed_form():
    bp = BasketParams(M=1, vols=(0.25,), K=10.0, T=0.5)
    mean, se = mc_basket_value([11.0], bp, num_paths=200_000, seed=5)
    ref = bs_call_price(11.0, 10.0, 0.0, 0.5, 0.25)
    assert abs(mean - ref) <= 3 * se
    p = sample_basket_data(2, bp, seed=1)
    assert p.X.shape == (1, 2)


def test_zero_strike_basket_is_forward():
    bp = BasketParams(K=0.0)
    spot = np.array([5.0, 8.0, 10.0, 12.0, 20.0])
    mean, se = mc_basket_value(spot, bp, num_paths=100_000, seed=2)
    assert abs(mean - np.dot(bp.weights, spot)) <= 3 * se


def test_mc_determinism_and_common_numbers():
    bp = BasketParams()
    spots = np.full((5, 3), 10.0) + np.arange(3)
    m1, s1 = mc_basket_values(spots, bp, num_paths=25_000, seed=9)
    m2, _ = mc_basket_values(spots, bp, num_paths=25_000, seed=9)
    assert np.array_equal(m1, m2) and np.all(s1 > 0)
    # common random numbers keep the estimate monotone in the spot
    assert np.all(np.diff(m1) > 0)
    single, _ = mc_basket_value(spots[:, 1], bp, num_paths=25_000, seed=9)
    assert single == pytest.approx(m1[1], rel=1e-14)
    anti, s_anti = mc_basket_values(spots, bp, num_paths=25_000, seed=9, antithetic=True)
    assert np.all(np.abs(anti - m1) <= 4 * np.hypot(s1, s_anti))
    with pytest.raises(ValueError):
        mc_basket_values(np.ones((4, 2)), bp)


def test_gradient_bounds():
    box = basket_gradient_bounds([0.2, 0.3, 0.5])
    assert np.array_equal(box.lower, [0, 0, 0]) and np.array_equal(box.upper, [0.2, 0.3, 0.5])
    assert box.contains_rows(np.array([[0.1, 0.3, 0.0]]), 0.0)[0]
    with pytest.raises(ValueError):
        basket_gradient_bounds([0.5, -0.1])


def test_seed_sequence_reuse_is_deterministic():
    ss = np.random.SeedSequence(7).spawn(1)[0]
    a = mc_basket_values(np.full((5, 1), 10.0), num_paths=5000, seed=ss)[0]
    b = mc_basket_values(np.full((5, 1), 10.0), num_paths=5000, seed=ss)[0]
    assert np.array_equal(a, b)
    assert np.array_equal(sample_basket_data(10, seed=ss).Y, sample_basket_data(10, seed=ss).Y)
