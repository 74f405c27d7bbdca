"""Independent reference computations used by ``--verify`` and the test suite.

Nothing here calls the closed-form pricers: option values come from
numerical integration against the lognormal density, and cohort values
from explicit per-policyholder cashflow loops.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.stats import binom, norm

from .market import MarketModel

_QUAD = {"epsabs": 1e-14, "epsrel": 1e-13, "limit": 200}


def _terminal(spot: float, r: float, sigma: float, tau: float, z: float) -> float:
    return spot * math.exp((r - 0.5 * sigma * sigma) * tau + sigma * math.sqrt(tau) * z)


def quad_put_price(spot: float, strike: float, r: float, sigma: float, tau: float) -> float:
    """Risk-neutral put value by integrating the payoff over the normal driver."""
    if tau == 0 or sigma == 0:
        return max(strike * math.exp(-r * tau) - spot, 0.0)
    vol = sigma * math.sqrt(tau)
    kink = (math.log(strike / spot) - (r - 0.5 * sigma * sigma) * tau) / vol
    val, _ = integrate.quad(lambda z: (strike - _terminal(spot, r, sigma, tau, z)) * norm.pdf(z),
                            -40.0, kink, **_QUAD)
    return math.exp(-r * tau) * val


def quad_call_price(spot: float, strike: float, r: float, sigma: float, tau: float) -> float:
    vol = sigma * math.sqrt(tau)
    kink = (math.log(strike / spot) - (r - 0.5 * sigma * sigma) * tau) / vol
    val, _ = integrate.quad(lambda z: (_terminal(spot, r, sigma, tau, z) - strike) * norm.pdf(z),
                            kink, 40.0, **_QUAD)
    return math.exp(-r * tau) * val


def quad_unit_benefit_price(market: MarketModel, t: float, m: float, u_t: float) -> float:
    """Time-``t`` value of max(U_m/U_0, (1+i_gar)^m), integrated with a split at the kink."""
    spot = u_t / market.gbm.u0
    strike = (1.0 + market.i_gar) ** m
    tau = m - t
    r = math.log1p(market.r)
    if tau == 0:
        return max(spot, strike)
    sigma = market.gbm.sigma
    kink = (math.log(strike / spot) - (r - 0.5 * sigma * sigma) * tau) / (sigma * math.sqrt(tau))
    guaranteed, _ = integrate.quad(norm.pdf, -40.0, kink, **_QUAD)
    upside, _ = integrate.quad(lambda z: _terminal(spot, r, sigma, tau, z) * norm.pdf(z), kink, 40.0, **_QUAD)
    return math.exp(-r * tau) * (strike * guaranteed + upside)


def _policy_cashflows(s: float, q, n: int, t: int, product: str):
    """Expected benefit units per payment year for one policy alive at ``t``."""
    out = []
    alive = 1.0
    for year in range(t, n):
        die = alive * q[year]
        live = alive * (1.0 - q[year])
        if year == n - 1:
            pay = {"endowment": die + live, "term": die, "pure_endowment": live}[product]
        else:
            pay = 0.0 if product == "pure_endowment" else die
        out.append((year + 1, s * pay))
        alive = live
    return out


def cashflow_premium_rate(sums, q1, market: MarketModel, n: int, mode: str = "single",
                          product: str = "endowment") -> float:
    """Premium per unit sum from policy-by-policy expected cashflows on ``q1``."""
    prices = {m: quad_unit_benefit_price(market, 0, m, market.gbm.u0) for m in range(1, n + 1)}
    benefits = 0.0
    units = 0.0
    for s in sums:
        for m, amount in _policy_cashflows(float(s), q1, n, 0, product):
            benefits += amount * prices[m]
        if mode == "single":
            units += s
        else:
            alive = 1.0
            for j in range(n):
                units += s * alive * (1.0 + market.r) ** -j
                alive *= 1.0 - q1[j]
    return benefits / units


def cashflow_best_estimate(sums_alive, q2, market: MarketModel, n: int, t: int, u_t: float,
                           premium_rate: float, mode: str = "single", product: str = "endowment") -> float:
    """Best estimate at ``t`` for the given alive policies, by explicit loops."""
    prices = {m: quad_unit_benefit_price(market, t, m, u_t) for m in range(t + 1, n + 1)}
    total = 0.0
    for s in sums_alive:
        for m, amount in _policy_cashflows(float(s), q2, n, t, product):
            total += amount * prices[m]
        if mode == "single" and t == 0:
            total -= s * premium_rate
        elif mode == "annual":
            alive = 1.0
            for j in range(t, n):
                total -= s * premium_rate * alive * (1.0 + market.r) ** -(j - t)
                alive *= 1.0 - q2[j]
    return total


def exact_binomial_cdr_moments(l: int, q: float, eta: float) -> tuple[float, float, float]:
    """Mean, variance and skewness of ``(l*q - D) * eta`` with D ~ Binomial(l, q)."""
    d = np.arange(l + 1)
    p = binom.pmf(d, l, q)
    x = (l * q - d) * eta
    mean = float(np.dot(p, x))
    var = float(np.dot(p, (x - mean) ** 2))
    skew = float(np.dot(p, (x - mean) ** 3)) / var ** 1.5
    return mean, var, skew
