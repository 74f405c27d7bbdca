"""Equity model, Black-Scholes puts and the guaranteed unit benefit.

Rates are quoted with annual compounding (``r = 0.02`` means a zero-coupon
bond price of ``1.02**-tau``).  The Black-Scholes formulas take a continuous
rate; :attr:`MarketModel.r_cont` is the matching ``log(1 + r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import InputError


@dataclass(frozen=True)
class GbmParams:
    mu: float
    sigma: float
    u0: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise InputError("GBM volatility must be >= 0")
        if self.u0 <= 0:
            raise InputError("initial equity price must be > 0")

    def mean(self, t):
        return self.u0 * np.exp(self.mu * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class MarketModel:
    gbm: GbmParams
    r: float = 0.02
    i_gar: float = 0.01

    def __post_init__(self):
        if self.r <= -1 or self.i_gar <= -1:
            raise InputError("rates must be > -1")

    @property
    def r_cont(self) -> float:
        return math.log1p(self.r)

    def strike(self, m):
        return (1.0 + self.i_gar) ** np.asarray(m, dtype=float)


def calibrate_gbm(mean_growth: float, cov_target: float, cov_horizon: float, u0: float = 1.0) -> GbmParams:
    """Match E[U_t] = u0 * mean_growth**t and CoV(U_h) = cov_target at h = cov_horizon."""
    if mean_growth <= 0 or cov_target < 0 or cov_horizon <= 0:
        raise InputError("need mean_growth > 0, cov_target >= 0, cov_horizon > 0")
    return GbmParams(math.log(mean_growth), math.sqrt(math.log1p(cov_target ** 2) / cov_horizon), u0)


def step_equity(params: GbmParams, u, dt: float, z):
    """Exact lognormal step of length ``dt`` driven by standard normals ``z``."""
    u = np.asarray(u, dtype=float)
    return u * np.exp((params.mu - 0.5 * params.sigma ** 2) * dt + params.sigma * math.sqrt(dt) * np.asarray(z))


def simulate_equity(params: GbmParams, times, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Prices at ``times`` (years, increasing, first > 0) starting from ``u0`` at 0.

    Returns shape ``(len(times),)`` or ``(size, len(times))``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or times[0] <= 0 or np.any(np.diff(times) <= 0):
        raise InputError("times must be increasing and start after 0")
    dts = np.diff(np.concatenate([[0.0], times]))
    shape = (times.size,) if size is None else (size, times.size)
    z = rng.standard_normal(shape)
    incr = (params.mu - 0.5 * params.sigma ** 2) * dts + params.sigma * np.sqrt(dts) * z
    return params.u0 * np.exp(np.cumsum(incr, axis=-1))


def _d1d2(spot, strike, r, sigma, tau):
    vol = sigma * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(spot / strike) + (r + 0.5 * sigma ** 2) * tau) / vol
    return d1, d1 - vol, vol


def put_price(spot, strike, r, sigma, tau):
    """European put, Black-Scholes with continuous rate ``r``; vectorised."""
    spot, strike, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (spot, strike, tau)))
    sigma = np.asarray(sigma, dtype=float)
    disc_k = strike * np.exp(-r * tau)
    d1, d2, vol = _d1d2(spot, strike, r, sigma, tau)
    bs = disc_k * ndtr(-d2) - spot * ndtr(-d1)
    out = np.where(vol > 0, bs, np.maximum(disc_k - spot, 0.0))
    return out if out.ndim else float(out)


def call_price(spot, strike, r, sigma, tau):
    spot, strike, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (spot, strike, tau)))
    sigma = np.asarray(sigma, dtype=float)
    disc_k = strike * np.exp(-r * tau)
    d1, d2, vol = _d1d2(spot, strike, r, sigma, tau)
    bs = spot * ndtr(d1) - disc_k * ndtr(d2)
    out = np.where(vol > 0, bs, np.maximum(spot - disc_k, 0.0))
    return out if out.ndim else float(out)


def zcb_price(r: float, tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise InputError("tau must be >= 0")
    out = (1.0 + r) ** -tau
    return out if out.ndim else float(out)


def matured_payoff(model: MarketModel, m, u_m):
    """Benefit per unit sum paid at year ``m``: max(U_m/U_0, (1+i_gar)^m)."""
    return np.maximum(np.asarray(u_m, dtype=float) / model.gbm.u0, model.strike(m))


def unit_benefit_price(model: MarketModel, t, m, u_t):
    """Time-``t`` price of the unit benefit due at ``m >= t``.

    Replicated by one equity unit plus a put struck at the guarantee:
    ``u_t/u0 + P(u_t/u0, (1+i_gar)^m, m - t)``.  Broadcasts over ``m`` and
    ``u_t``.
    """
    m = np.asarray(m, dtype=float)
    tau = m - t
    if np.any(tau < 0):
        raise InputError("benefit year must be >= valuation year")
    spot = np.asarray(u_t, dtype=float) / model.gbm.u0
    return spot + put_price(spot, model.strike(m), model.r_cont, model.gbm.sigma, tau)


@dataclass(frozen=True)
class HedgingPortfolio:
    """Equity units plus one put line per maturity ``1..n``."""

    equity_units: float
    put_units: np.ndarray
    strikes: np.ndarray

    @property
    def fractions(self) -> np.ndarray:
        return self.put_units / self.equity_units

    def value(self, model: MarketModel, t: float = 0.0, u_t: float | None = None) -> float:
        u_t = model.gbm.u0 if u_t is None else u_t
        mats = np.arange(1, self.put_units.size + 1)
        spot = u_t / model.gbm.u0
        puts = put_price(spot, self.strikes, model.r_cont, model.gbm.sigma, mats - t)
        return float(self.equity_units * spot + np.dot(self.put_units, puts))


def payment_fractions(q: np.ndarray, n: int) -> np.ndarray:
    """Share of policyholders paid at each year 1..n (deaths, then survivors at n)."""
    q = np.asarray(q, dtype=float)[:n]
    if q.size < n:
        raise InputError("basis horizon shorter than policy term")
    alive = np.concatenate([[1.0], np.cumprod(1.0 - q)])
    frac = alive[:n] * q
    frac[-1] = alive[n - 1]
    return frac


def build_hedging_portfolio(total_sums: float, basis, n: int, i_gar: float = 0.01) -> HedgingPortfolio:
    """Equity for every unit sum insured and puts weighted by expected payment year."""
    frac = payment_fractions(basis.q2, n)
    strikes = (1.0 + i_gar) ** np.arange(1, n + 1, dtype=float)
    return HedgingPortfolio(float(total_sums), total_sums * frac, strikes)
