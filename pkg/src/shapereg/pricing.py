"""Option-pricing data generators and reference values.

European calls under Black-Scholes have a closed form; basket calls on
correlated lognormal assets are valued by Monte Carlo.  Both are convex in the
spot prices with gradients in ``[0, w]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .constraints import Box
from .problem import ProblemData

__all__ = ["bs_call_price", "CallParams", "sample_call_data", "BasketParams",
           "sample_basket_data", "mc_basket_value", "mc_basket_values",
           "basket_gradient_bounds"]


def _seed_sequence(seed):
    # copy a passed sequence so that spawning here leaves the caller's counter alone
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key,
                                      pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)


def bs_call_price(S, K, r, tau, sigma):
    """Black-Scholes price of a European call with time to maturity ``tau``."""
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0) or not (K > 0 and sigma > 0 and tau > 0):
        raise ValueError("need S, K, sigma, tau > 0")
    vol = sigma * np.sqrt(tau)
    d1 = (np.log(S / K) + (r + 0.5 * sigma * sigma) * tau) / vol
    d2 = d1 - vol
    out = S * ndtr(d1) - K * np.exp(-r * tau) * ndtr(d2)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CallParams:
    t: float = 0.1
    T: float = 0.4
    K: float = 10.0
    r: float = 0.0
    sigma: float = 0.2

    @property
    def tau(self):
        return self.T - self.t


def sample_call_data(n: int = 200, params: CallParams = CallParams(), seed=None) -> ProblemData:
    """Spots with ``log S ~ N(log K + (r - sigma^2/2) t, sigma^2 t)`` and
    responses equal to the discounted payoff of one simulated terminal price."""
    ss = _seed_sequence(seed)
    s_spot, s_path = ss.spawn(2)
    pr = params
    logS = np.random.default_rng(s_spot).normal(
        np.log(pr.K) + (pr.r - 0.5 * pr.sigma ** 2) * pr.t, pr.sigma * np.sqrt(pr.t), size=n)
    S = np.exp(logS)
    z = np.random.default_rng(s_path).standard_normal(n)
    ST = S * np.exp((pr.r - 0.5 * pr.sigma ** 2) * pr.tau + pr.sigma * np.sqrt(pr.tau) * z)
    V = np.exp(-pr.r * pr.tau) * np.maximum(ST - pr.K, 0.0)
    return ProblemData(S[None, :], V)


@dataclass(frozen=True)
class BasketParams:
    M: int = 5
    weights: tuple = ()
    vols: tuple = ()
    rho: float = 0.1
    K: float = 10.0
    r: float = 0.0
    t: float = 0.0
    T: float = 0.5

    def __post_init__(self):
        M = self.M
        w = np.full(M, 1.0 / M) if not self.weights else np.asarray(self.weights, dtype=float)
        s = 0.2 + 0.025 * np.arange(M) if not self.vols else np.asarray(self.vols, dtype=float)
        if w.shape != (M,) or s.shape != (M,):
            raise ValueError("weights and vols must have length M")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(s <= 0):
            raise ValueError("volatilities must be positive")
        object.__setattr__(self, "weights", tuple(w.tolist()))
        object.__setattr__(self, "vols", tuple(s.tolist()))

    @property
    def tau(self):
        return self.T - self.t

    def covariance(self):
        s = np.asarray(self.vols)
        C = np.full((self.M, self.M), self.rho)
        np.fill_diagonal(C, 1.0)
        return self.tau * C * np.outer(s, s)

    def cholesky(self):
        try:
            return np.linalg.cholesky(self.covariance())
        except np.linalg.LinAlgError:
            raise ValueError("correlation matrix is not positive definite") from None


def _terminal_prices(spots, params: BasketParams, Z):
    """``spots`` is (M, m); ``Z`` is (k, M) standard normals -> (k, M, m) prices."""
    s = np.asarray(params.vols)
    drift = (params.r - 0.5 * s ** 2) * params.tau
    G = Z @ params.cholesky().T + drift  # (k, M)
    return spots[None, :, :] * np.exp(G)[:, :, None]


def sample_basket_data(n: int, params: BasketParams = BasketParams(), seed=None,
                       price_high: float | None = None) -> ProblemData:
    """Spots uniform on ``(0, 5K)^M``; each response is the discounted basket
    payoff of one correlated terminal draw."""
    hi = 5.0 * params.K if price_high is None else price_high
    if not hi > 0:
        raise ValueError("spot range (0, price_high) is empty; pass price_high > 0")
    ss = _seed_sequence(seed)
    s_spot, s_path = ss.spawn(2)
    rng = np.random.default_rng(s_spot)
    S = rng.uniform(0.0, hi, size=(params.M, n))
    while np.any(S == 0.0):  # keep the interval open
        S[S == 0.0] = rng.uniform(0.0, hi, size=int(np.sum(S == 0.0)))
    Z = np.random.default_rng(s_path).standard_normal((n, params.M))
    G = Z @ params.cholesky().T + (params.r - 0.5 * np.asarray(params.vols) ** 2) * params.tau
    ST = S * np.exp(G.T)
    basket = np.asarray(params.weights) @ ST
    V = np.exp(-params.r * params.tau) * np.maximum(basket - params.K, 0.0)
    return ProblemData(S, V)


def mc_basket_values(spots, params: BasketParams = BasketParams(), num_paths: int = 100_000,
                     seed=None, antithetic: bool = False, chunk: int = 10_000):
    """Monte Carlo basket values at the columns of ``spots`` (M x m).

    All spots share the same normal draws (common random numbers), generated
    chunk by chunk from streams spawned off ``seed``; results depend only on
    ``seed``, ``num_paths`` and ``chunk``.  Returns ``(mean, stderr)`` arrays.
    """
    spots = np.asarray(spots, dtype=float)
    if spots.ndim == 1:
        spots = spots[:, None]
    if spots.shape[0] != params.M:
        raise ValueError(f"spots must have {params.M} rows")
    w = np.asarray(params.weights)
    disc = np.exp(-params.r * params.tau)
    m = spots.shape[1]
    total = np.zeros(m)
    total_sq = np.zeros(m)
    count = 0
    nchunks = -(-num_paths // chunk)
    for i, child in enumerate(_seed_sequence(seed).spawn(nchunks)):
        k = min(chunk, num_paths - i * chunk)
        rng = np.random.default_rng(child)
        if antithetic:
            half = np.ceil(k / 2).astype(int)
            Zh = rng.standard_normal((half, params.M))
            pay = disc * np.maximum(np.einsum("l,klm->km", w, _terminal_prices(spots, params, Zh)) - params.K, 0.0)
            pay2 = disc * np.maximum(np.einsum("l,klm->km", w, _terminal_prices(spots, params, -Zh)) - params.K, 0.0)
            samples = 0.5 * (pay + pay2)
        else:
            Z = rng.standard_normal((k, params.M))
            samples = disc * np.maximum(np.einsum("l,klm->km", w, _terminal_prices(spots, params, Z)) - params.K, 0.0)
        total += samples.sum(axis=0)
        total_sq += (samples ** 2).sum(axis=0)
        count += samples.shape[0]
    mean = total / count
    var = np.maximum(total_sq / count - mean ** 2, 0.0) * count / max(count - 1, 1)
    return mean, np.sqrt(var / count)


def mc_basket_value(spot, params: BasketParams = BasketParams(), num_paths: int = 100_000,
                    seed=None, antithetic: bool = False):
    """Monte Carlo value at a single spot vector; returns ``(mean, stderr)``."""
    spot = np.asarray(spot, dtype=float).reshape(-1, 1)
    mean, se = mc_basket_values(spot, params, num_paths, seed, antithetic)
    return float(mean[0]), float(se[0])


def basket_gradient_bounds(weights) -> Box:
    """Gradient bounds ``0 <= grad V <= w`` of a basket call."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return Box(np.zeros_like(w), w.copy())
