"""Market-consistent valuation of the cohort: VaPo units, premiums, best estimates.

Conventions: premiums are paid at the start of each policy year by the
survivors; benefits are paid at the end of the year.  For the endowment,
deaths in year ``(tau-1, tau]`` are paid at ``tau`` and the final payment
column is certain for everyone still alive at ``n-1`` (death or survival,
both paid at ``n``).  ``term`` and ``pure_endowment`` change only that
final column.  Benefits per unit sum insured are the guaranteed unit
``max(U_m/U_0, (1+i_gar)^m)`` priced by :func:`market.unit_benefit_price`;
premiums are deterministic cash discounted with zero-coupon bonds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import Cohort, CohortState
from .errors import InputError
from .market import MarketModel, matured_payoff, unit_benefit_price, zcb_price
from .mortality import DemographicBasis

PRODUCTS = ("endowment", "term", "pure_endowment")


@dataclass(frozen=True)
class ValuationBasis:
    demographic: DemographicBasis
    market: MarketModel
    t: int = 0
    u_t: float = 1.0
    product: str = "endowment"

    def __post_init__(self):
        if self.product not in PRODUCTS:
            raise InputError(f"unknown product {self.product!r}")
        if not 0 <= self.t <= self.n:
            raise InputError("valuation year must lie in 0..n")
        if self.u_t <= 0:
            raise InputError("equity price must be > 0")

    @property
    def n(self) -> int:
        return self.demographic.n

    def q(self, order: str) -> np.ndarray:
        if order == "second":
            return self.demographic.q2
        if order == "first":
            return self.demographic.q1
        raise InputError(f"unknown basis order {order!r}")

    def at(self, t: int, u_t: float) -> "ValuationBasis":
        return ValuationBasis(self.demographic, self.market, t, u_t, self.product)


@dataclass(frozen=True)
class Premium:
    rate: float
    mode: str = "single"


@dataclass(frozen=True)
class Distortion:
    ratios_alive: np.ndarray
    ratios_dead: np.ndarray


def _alive(q: np.ndarray, t: int, length: int) -> np.ndarray:
    """Probability of being alive at ``t + j`` given alive at ``t``, j = 0..length-1.

    ``q`` may carry leading scenario axes; policy years run along the last.
    """
    ones = np.ones(q.shape[:-1] + (1,))
    return np.concatenate([ones, np.cumprod(1.0 - q[..., t:t + length - 1], axis=-1)], axis=-1)


def benefit_masses(q: np.ndarray, t: int, n: int, product: str = "endowment") -> np.ndarray:
    """Expected payment indicator for each benefit year ``t+1..n`` given alive at ``t``."""
    q = np.asarray(q, dtype=float)
    if not 0 <= t < n or q.shape[-1] < n:
        raise InputError("need 0 <= t < n and a basis covering n years")
    m = n - t
    alive = _alive(q, t, m)
    mass = alive * q[..., t:n]
    if product == "endowment":
        mass[..., -1] = alive[..., -1]
    elif product == "pure_endowment":
        mass[..., :-1] = 0.0
        mass[..., -1] = alive[..., -1] * (1.0 - q[..., n - 1])
    elif product != "term":
        raise InputError(f"unknown product {product!r}")
    return mass


def premium_survival(q: np.ndarray, t: int, n: int) -> np.ndarray:
    """Probability of paying the premium due at ``t+j``, j = 0..n-t-1."""
    return _alive(np.asarray(q, dtype=float), t, n - t)


def premium_annuity(q: np.ndarray, t: int, n: int, r: float, mode: str):
    """Value at ``t`` of 1 per outstanding premium payment, per policyholder alive at ``t``."""
    q = np.asarray(q, dtype=float)
    if mode == "single":
        value = 1.0 if t == 0 else 0.0
        return value if q.ndim == 1 else np.full(q.shape[:-1], value)
    if mode != "annual":
        raise InputError(f"unknown premium mode {mode!r}")
    if t >= n:
        return 0.0 if q.ndim == 1 else np.zeros(q.shape[:-1])
    surv = premium_survival(q, t, n)
    value = surv @ zcb_price(r, np.arange(n - t))
    return float(value) if q.ndim == 1 else value


def survival_probs(basis: ValuationBasis, t: int | None = None, order: str = "second") -> np.ndarray:
    t = basis.t if t is None else t
    return benefit_masses(basis.q(order), t, basis.n, basis.product)


def distortion(basis: DemographicBasis) -> Distortion:
    """Yearly first-to-second order probability ratios."""
    p1, p2 = 1.0 - basis.q1, 1.0 - basis.q2
    with np.errstate(divide="ignore", invalid="ignore"):
        dead = np.where(basis.q2 > 0, basis.q1 / basis.q2, 1.0)
    return Distortion(p1 / p2, dead)


def distorted_masses(basis: DemographicBasis, t: int = 0, product: str = "endowment") -> np.ndarray:
    """Benefit masses as E[phi * indicator] under second-order probabilities.

    Each path weight is the product of the yearly distortion ratios; the
    result must equal :func:`benefit_masses` on the first-order basis.
    """
    d = distortion(basis)
    q, n = basis.q2, basis.n
    out = np.zeros(n - t)
    weight = 1.0
    for tau in range(1, n - t + 1):
        h = t + tau - 1
        die = weight * q[h] * d.ratios_dead[h]
        live = weight * (1.0 - q[h]) * d.ratios_alive[h]
        last = tau == n - t
        if product == "endowment":
            out[tau - 1] = die + live if last else die
        elif product == "term":
            out[tau - 1] = die
        elif product == "pure_endowment":
            out[tau - 1] = live if last else 0.0
        weight = live
    return out


def benefit_prices(market: MarketModel, t: int, n: int, u_t) -> np.ndarray:
    """V(t, t+tau) for tau = 1..n-t; trailing axis is tau."""
    u = np.asarray(u_t, dtype=float)[..., None]
    return unit_benefit_price(market, t, np.arange(t + 1, n + 1), u)


def vapo_units(state: CohortState, basis: ValuationBasis, order: str = "second",
               premium_mode: str = "single") -> dict[str, np.ndarray]:
    """Instrument counts of the VaPo at ``basis.t``.

    ``benefit[tau-1]`` units of the unit-benefit instrument due at ``t+tau``;
    ``premium[j]`` units of the cash premium due at ``t+j``.
    """
    total = state.total_sums
    q = basis.q(order)
    t = basis.t
    benefit = total * benefit_masses(q, t, basis.n, basis.product)
    if premium_mode == "annual":
        premium = total * premium_survival(q, t, basis.n)
    else:
        premium = np.array([total if t == 0 else 0.0])
    return {"benefit": benefit, "premium": premium}


def solve_premium(cohort: Cohort, basis: ValuationBasis, mode: str | None = None) -> Premium:
    """Premium rate per unit sum insured that zeroes the protected VaPo at issue."""
    mode = cohort.premium_mode if mode is None else mode
    if basis.t != 0:
        raise InputError("premiums are solved on the issue-date basis")
    q1 = basis.demographic.q1
    benefits = float(np.dot(benefit_masses(q1, 0, basis.n, basis.product),
                            benefit_prices(basis.market, 0, basis.n, basis.u_t)))
    annuity = premium_annuity(q1, 0, basis.n, basis.market.r, mode)
    if annuity <= 0:
        raise InputError("premium annuity is zero")
    return Premium(benefits / annuity, mode)


def protected_vapo_value(cohort: Cohort, basis: ValuationBasis, premium: Premium) -> float:
    """Issue-date value of the protected VaPo, built from distortion ratios."""
    s0 = float(cohort.sums.sum())
    mass = distorted_masses(basis.demographic, 0, basis.product)
    benefits = s0 * float(np.dot(mass, benefit_prices(basis.market, 0, basis.n, basis.u_t)))
    if premium.mode == "single":
        inflow = s0 * premium.rate
    else:
        d = distortion(basis.demographic)
        q2 = basis.demographic.q2
        weights = np.concatenate([[1.0], np.cumprod((1.0 - q2) * d.ratios_alive)[:basis.n - 1]])
        inflow = s0 * premium.rate * float(np.dot(weights, zcb_price(basis.market.r, np.arange(basis.n))))
    return benefits - inflow


def unit_best_estimate(q: np.ndarray, market: MarketModel, t: int, n: int, u_t, premium: Premium,
                       product: str = "endowment"):
    """Best-estimate value per unit sum insured for a policyholder alive at ``t``.

    At ``t == n`` this is the maturity value still owed to a survivor.
    Vectorised over ``u_t``.
    """
    u_t = np.asarray(u_t, dtype=float)
    if t == n:
        if product == "term":
            return np.zeros_like(u_t)
        return matured_payoff(market, n, u_t)
    mass = benefit_masses(q, t, n, product)
    value = (benefit_prices(market, t, n, u_t) * mass).sum(axis=-1)
    return value - premium.rate * premium_annuity(q, t, n, market.r, premium.mode)


def best_estimate(state: CohortState, basis: ValuationBasis, premium: Premium) -> float:
    if state.alive_count == 0:
        return 0.0
    rate = unit_best_estimate(basis.demographic.q2, basis.market, basis.t, basis.n, basis.u_t,
                              premium, basis.product)
    return state.total_sums * float(rate)


def beta_rate(q2: np.ndarray, market: MarketModel, t1: int, u_t1, premium: Premium, n: int,
              product: str = "endowment"):
    """Best-estimate rate at ``t1 = t+1`` on the basis frozen at ``t``."""
    if not 1 <= t1 <= n:
        raise InputError("t+1 must lie in 1..n")
    return unit_best_estimate(q2, market, t1, n, u_t1, premium, product)


def death_benefit(market: MarketModel, t1: int, u_t1, product: str = "endowment"):
    """Payment per unit sum owed at ``t1`` to a policyholder who died in ``(t1-1, t1]``."""
    if product == "pure_endowment":
        return np.zeros_like(np.asarray(u_t1, dtype=float))
    return matured_payoff(market, t1, u_t1)


def eta_rate(u_out_price, beta):
    """Sum-at-risk rate: matured unit benefit minus the released best-estimate rate."""
    return np.asarray(u_out_price) - np.asarray(beta)


def r_hat(state_t1: CohortState, beta) -> float:
    return state_t1.total_sums * beta
