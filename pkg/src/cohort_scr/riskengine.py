"""Monte Carlo and closed-form Claims Development Results (CDR).

The idiosyncratic CDR over ``(t, t+1]`` is simulated in compact form,
``(E[Z] - Z) * eta``, where ``Z`` is the sum insured of policyholders dying
in the year and ``eta`` is the sum-at-risk rate.  The trend CDR refits
Lee-Carter on one simulated extra year of data and revalues the survivors.

Scenarios are processed in blocks of :data:`streams.BLOCK_SIZE`.  Each block
draws from its own stream, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .cohort import CohortState, raw_moment, sample_death_sums
from .errors import InputError, SimulationFailure
from .market import step_equity, zcb_price
from .mortality import DeathDraw, LeeCarterParams, MortalityDataset, RefitKernel
from .streams import BLOCK_SIZE, blocks, partition, stream
from .valuation import Premium, ValuationBasis, benefit_prices, beta_rate, death_benefit

ETA_MODES = ("stochastic", "deterministic")
TAIL_PROB = 0.005
QIS2_MULTIPLIER = 2.58
MAX_FAILURE_SHARE = 0.001
MAX_EXACT_LIVES = 20


@dataclass(frozen=True)
class ScenarioConfig:
    t: int
    n_scenarios: int
    seed: int = 0
    eta_mode: str = "stochastic"
    trend: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.t < 0:
            raise InputError("t must be >= 0")
        if self.n_scenarios < 1:
            raise InputError("n_scenarios must be >= 1")
        if self.eta_mode not in ETA_MODES:
            raise InputError(f"unknown eta mode {self.eta_mode!r}")
        if self.workers < 1:
            raise InputError("workers must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise InputError("seed must be a 64-bit unsigned integer")


def _moments(x: np.ndarray) -> tuple[float, float, float]:
    mean = float(np.mean(x))
    d = x - mean
    m2 = float(np.mean(d * d))
    m3 = float(np.mean(d * d * d))
    skew = m3 / m2 ** 1.5 if m2 > 0 else float("nan")
    return mean, math.sqrt(m2), skew


@dataclass(frozen=True)
class CdrDistribution:
    """H simulated CDR values with their sample moments.

    ``sd`` and ``skewness`` use population (1/H) moments.  ``eta_sq_mean``
    is the mean squared sum-at-risk rate over the same financial scenarios
    (idiosyncratic runs only).
    """

    samples: np.ndarray
    eta_sq_mean: float | None = None
    failures: int = 0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise InputError("a CDR distribution needs at least one sample")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @cached_property
    def _stats(self) -> tuple[float, float, float]:
        return _moments(self.samples)

    @property
    def size(self) -> int:
        return self.samples.size

    @property
    def mean(self) -> float:
        return self._stats[0]

    @property
    def sd(self) -> float:
        return self._stats[1]

    @property
    def skewness(self) -> float:
        return self._stats[2]

    @cached_property
    def _sorted(self) -> np.ndarray:
        return np.sort(self.samples)

    def quantile(self, p: float) -> float:
        """Lower empirical quantile: order statistic ``ceil(p * H)`` (1-based)."""
        if not 0 < p <= 1:
            raise InputError("quantile level must lie in (0, 1]")
        # the tolerance stops p*H = 5000.000000000001 from moving one rank up
        rank = max(1, math.ceil(p * self.size - 1e-9))
        return float(self._sorted[rank - 1])

    def mean_standard_error(self) -> float:
        return self.sd / math.sqrt(self.size)

    def skewness_standard_error(self) -> float:
        return skewness_standard_error(self.samples)


@dataclass(frozen=True)
class ScrReport:
    t: int
    risk: str
    n_scenarios: int
    mean: float
    sigma: float
    skewness: float
    scr: float
    factor: float
    closed_form_sd: float | None = None
    qis2_scr: float | None = None
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "t": self.t, "risk": self.risk, "n_scenarios": self.n_scenarios,
            "mean": self.mean, "sd": self.sigma, "skewness": self.skewness,
            "scr": self.scr, "factor": self.factor, "closed_form_sd": self.closed_form_sd,
            "qis2_scr": self.qis2_scr, "failures": self.failures,
        }


def skewness_standard_error(x: np.ndarray) -> float:
    """Delta-method standard error of the sample skewness g1."""
    x = np.asarray(x, dtype=float)
    y = x - x.mean()
    m2, m3 = np.mean(y ** 2), np.mean(y ** 3)
    if m2 <= 0:
        return 0.0
    infl = (y ** 3 - m3 - 3.0 * m2 * y) / m2 ** 1.5 - 1.5 * m3 / m2 ** 2.5 * (y ** 2 - m2)
    return float(np.sqrt(np.var(infl) / x.size))


# ---------------------------------------------------------------- closed forms

def idios_variance_closed_form(l_t: int, q: float, sums_second_moment: float,
                               eta_second_moment: float) -> float:
    """Var = l * q * (1-q) * E[S^2] * E[eta^2]."""
    if not 0 <= q < 1:
        raise InputError("death probability must lie in [0, 1)")
    return float(l_t * q * (1.0 - q) * sums_second_moment * eta_second_moment)


def cgf_skewness(l_t: int, q: float, s3: float = 1.0, s2: float = 1.0, eta_sign: float = 1.0) -> float:
    """Skewness of ``(E[Z] - Z) * eta`` from the cumulants of Z.

    ``s3`` is the third raw moment of the sums and ``s2`` the second; the
    result is ``-(1-2q) s3 / (sqrt(l q (1-q)) s2^1.5)`` for ``eta > 0``.
    """
    return float(-math.copysign(1.0, eta_sign) * (1 - 2 * q) * s3
                 / (math.sqrt(l_t * q * (1 - q)) * s2 ** 1.5))


def qis2_scr(q: float, l: int, sum_at_risk: float) -> float:
    """Legacy factor formula 2.58 * sqrt(q(1-q)/l) * sum at risk."""
    if not 0 < q < 1 or l < 1:
        raise InputError("qis2_scr needs q in (0, 1) and l >= 1")
    return QIS2_MULTIPLIER * math.sqrt(q * (1 - q) / l) * sum_at_risk


@dataclass(frozen=True)
class ExactDistribution:
    outcomes: np.ndarray
    probs: np.ndarray

    def moment(self, j: int, central: bool = True) -> float:
        c = self.mean if central else 0.0
        return float(np.dot(self.probs, (self.outcomes - c) ** j))

    @property
    def mean(self) -> float:
        return float(np.dot(self.probs, self.outcomes))

    @property
    def variance(self) -> float:
        return self.moment(2)

    @property
    def skewness(self) -> float:
        v = self.variance
        return self.moment(3) / v ** 1.5 if v > 0 else float("nan")

    @property
    def kurtosis(self) -> float:
        v = self.variance
        return self.moment(4) / v ** 2 if v > 0 else float("nan")


def brute_force_idios(sums: np.ndarray, q: float, eta: float) -> ExactDistribution:
    """Every death pattern of a small cohort with its exact probability."""
    sums = np.asarray(sums, dtype=float)
    l = sums.size
    if l > MAX_EXACT_LIVES:
        raise InputError(f"exact enumeration supports at most {MAX_EXACT_LIVES} lives")
    if not 0 <= q < 1:
        raise InputError("death probability must lie in [0, 1)")
    codes = np.arange(2 ** l)
    dead = ((codes[:, None] >> np.arange(l)) & 1).astype(float)
    d = dead.sum(axis=1)
    probs = q ** d * (1.0 - q) ** (l - d)
    z = dead @ sums
    return ExactDistribution((q * sums.sum() - z) * eta, probs)


def compact_cdr(total_sums: float, q: float, z, eta):
    """Idiosyncratic CDR ``(q * total - Z) * eta``."""
    return (q * total_sums - np.asarray(z)) * np.asarray(eta)


def five_term_cdr(sums_t, dead, q2, t: int, n: int, basis: ValuationBasis, u_t1: float,
                  premium: Premium) -> dict[str, float]:
    """Idiosyncratic CDR from its five cash-flow terms, written as plain loops.

    Terms are: value at ``t+1`` of the benefit and premium legs held for
    the cohort alive at ``t``, the benefits paid at ``t+1``, and the
    re-established benefit and premium legs for the survivors at ``t+1``.
    ``dead[k]`` is 1 if policyholder ``k`` dies in ``(t, t+1]``.
    """
    market, product = basis.market, basis.product
    prices = [float(v) for v in benefit_prices(market, t + 1, n, u_t1)] if t + 1 < n else []

    def price(m):
        # value at t+1 of the unit benefit due at m >= t+1
        if m == t + 1:
            return float(death_benefit(market, t + 1, u_t1, "endowment"))
        return prices[m - t - 2]

    def pays(h, dies, last):
        if product == "endowment":
            return 1.0 if last else dies
        if product == "term":
            return dies
        return (1.0 - dies) if last else 0.0

    def mass(start, tau):
        alive = 1.0
        for h in range(start, start + tau - 1):
            alive *= 1.0 - q2[h]
        h = start + tau - 1
        last = h == n - 1
        return alive * (q2[h] * pays(h, 1.0, last) + (1.0 - q2[h]) * pays(h, 0.0, last))

    def premium_leg(start):
        # premiums due at start+j, valued at start
        out, alive = 0.0, 1.0
        for j in range(n - start):
            out += alive * premium.rate * float(zcb_price(market.r, j))
            alive *= 1.0 - q2[start + j]
        return out

    total_t = sum(sums_t)
    survivors = sum(s for s, d in zip(sums_t, dead) if not d)
    term1 = total_t * sum(mass(t, tau) * price(t + tau) for tau in range(1, n - t + 1))
    # the premium due at t has been paid; only dues from t+1 remain, seen from t
    term2 = 0.0
    if premium.mode == "annual":
        alive = 1.0 - q2[t]
        for j in range(1, n - t):
            term2 += total_t * alive * premium.rate * float(zcb_price(market.r, j - 1))
            alive *= 1.0 - q2[t + j]
    last = t + 1 == n
    term3 = sum(s * price(t + 1) * pays(t, float(d), last) for s, d in zip(sums_t, dead))
    term4 = 0.0
    term5 = 0.0
    if not last:
        term4 = survivors * sum(mass(t + 1, tau) * price(t + 1 + tau) for tau in range(1, n - t))
        term5 = survivors * premium_leg(t + 1) if premium.mode == "annual" else 0.0
    cdr = term1 - term2 - term3 - term4 + term5
    return {"term1": term1, "term2": term2, "term3": term3, "term4": term4, "term5": term5, "cdr": cdr}


# ---------------------------------------------------------------- simulation

def _eta_path(rng, mode: str, basis: ValuationBasis, premium: Premium, size: int):
    """Equity at t+1 and the sum-at-risk rate per scenario."""
    t1, gbm = basis.t + 1, basis.market.gbm
    if mode == "stochastic":
        u1 = step_equity(gbm, basis.u_t, 1.0, rng.standard_normal(size))
    else:
        u1 = np.full(size, basis.u_t * math.exp(gbm.mu))
    beta = beta_rate(basis.demographic.q2, basis.market, t1, u1, premium, basis.n, basis.product)
    return u1, death_benefit(basis.market, t1, u1, basis.product) - beta


@dataclass(frozen=True)
class _IdiosJob:
    seed: int
    basis: ValuationBasis
    premium: Premium
    alive_sums: np.ndarray
    eta_mode: str
    eta: float | None

    def __call__(self, block: tuple[int, int, int]):
        index, start, stop = block
        size = stop - start
        rng = stream(self.seed, "idios", self.basis.t, index)
        if self.eta is None:
            _, eta = _eta_path(rng, self.eta_mode, self.basis, self.premium, size)
        else:
            eta = np.full(size, float(self.eta))
        q = float(self.basis.demographic.q2[self.basis.t])
        _, z = sample_death_sums(self.alive_sums, q, size, rng)
        return compact_cdr(float(self.alive_sums.sum()), q, z, eta), eta


def _run_group(job, group):
    return [job(b) for b in group]


def _run_blocks(job, n_scenarios: int, workers: int, block_size: int = BLOCK_SIZE) -> list:
    todo = blocks(n_scenarios, block_size)
    if workers == 1 or len(todo) == 1:
        return [job(b) for b in todo]
    groups = list(partition(todo, workers))
    with ProcessPoolExecutor(max_workers=len(groups)) as pool:
        parts = list(pool.map(_run_group, [job] * len(groups), groups))
    return [r for part in parts for r in part]


def simulate_idios(config: ScenarioConfig, state: CohortState, basis: ValuationBasis,
                   premium: Premium, *, eta: float | None = None) -> CdrDistribution:
    """Idiosyncratic CDR over ``(config.t, config.t + 1]``.

    ``eta`` fixes the sum-at-risk rate in every scenario (a test hook that
    bypasses valuation); otherwise it follows ``config.eta_mode``.
    """
    if basis.t != config.t:
        raise InputError("valuation basis must be frozen at the scenario year")
    if not config.t < basis.n:
        raise InputError("t must be < n")
    job = _IdiosJob(config.seed, basis, premium, state.alive_sums, config.eta_mode, eta)
    out = _run_blocks(job, config.n_scenarios, config.workers)
    samples = np.concatenate([c for c, _ in out])
    etas = np.concatenate([e for _, e in out])
    return CdrDistribution(samples, float(np.mean(etas ** 2)),
                           info={"alive_count": state.alive_count})


@dataclass(frozen=True)
class TrendSetup:
    """Inputs the trend refit needs besides the valuation basis."""

    params: LeeCarterParams
    data: MortalityDataset
    synthetic_exposure: float | None = 100_000.0
    k_mode: str = "central"
    draw: str | DeathDraw = "binomial"


@dataclass
class _TrendJob:
    seed: int
    basis: ValuationBasis
    premium: Premium
    alive_sums: np.ndarray
    eta_mode: str
    kernel: RefitKernel
    draw: str | DeathDraw

    def _scenarios(self, rng, size: int):
        b = self.basis
        t1, n = b.t + 1, b.n
        u1, _ = _eta_path(rng, self.eta_mode, b, self.premium, size)
        q_t = float(b.demographic.q2[b.t])
        _, z = sample_death_sums(self.alive_sums, q_t, size, rng)
        survivors = float(self.alive_sums.sum()) - z
        cols = self.kernel.draw_log_columns(rng, size, self.draw)
        a, bb, k_last, drift, ok = self.kernel.refit(cols)
        if t1 == n:
            return np.zeros(size), ok
        q2 = b.demographic.q2
        revised = np.broadcast_to(q2, (size, n)).copy()
        years = b.demographic.base_year + 1 + np.arange(t1, n)
        revised[:, t1:] = self.kernel.forecast(a, bb, k_last, drift, b.demographic.cohort_age + t1, years)
        frozen = beta_rate(q2, b.market, t1, u1, self.premium, n, b.product)
        new = beta_rate(revised, b.market, t1, u1, self.premium, n, b.product)
        cdr = survivors * (new - frozen)
        return np.where(ok, cdr, np.nan), ok

    def __call__(self, block: tuple[int, int, int]):
        index, start, stop = block
        size = stop - start
        cdr, ok = self._scenarios(stream(self.seed, "trend", self.basis.t, index), size)
        failures = 0
        attempt = 0
        while not ok.all():
            bad = np.flatnonzero(~ok)
            failures += bad.size
            attempt += 1
            if attempt > 10:
                raise SimulationFailure(f"trend refit kept failing in block {index}")
            retry, retry_ok = self._scenarios(stream(self.seed, "trend-retry", self.basis.t, index, attempt),
                                              bad.size)
            cdr[bad] = retry
            ok = ok.copy()
            ok[bad] = retry_ok
        return cdr, failures


def simulate_trend(config: ScenarioConfig, state: CohortState, basis: ValuationBasis,
                   premium: Premium, setup: TrendSetup) -> CdrDistribution:
    """Trend CDR: survivors at t+1 times the best-estimate rate revision.

    Each scenario draws the equity price and deaths at ``t+1``, appends one
    simulated calendar year to the mortality data, refits Lee-Carter and
    revalues the remaining policy years on the revised forecast at the same
    ``t+1`` market prices.
    """
    if basis.t != config.t:
        raise InputError("valuation basis must be frozen at the scenario year")
    if not config.t < basis.n:
        raise InputError("t must be < n")
    if setup.data.last_year != setup.params.last_year:
        raise InputError("mortality data and fitted parameters end in different years")
    if basis.demographic.base_year != setup.params.last_year:
        raise InputError("valuation basis was not forecast from the fitted parameters")
    kernel = RefitKernel(setup.params, setup.data, synthetic_exposure=setup.synthetic_exposure,
                         k_mode=setup.k_mode)
    job = _TrendJob(config.seed, basis, premium, state.alive_sums, config.eta_mode, kernel, setup.draw)
    out = _run_blocks(job, config.n_scenarios, config.workers)
    failures = sum(f for _, f in out)
    if failures > MAX_FAILURE_SHARE * config.n_scenarios:
        raise SimulationFailure(f"{failures} failed trend scenarios exceed the cap of "
                                f"{MAX_FAILURE_SHARE:.1%} of {config.n_scenarios}")
    return CdrDistribution(np.concatenate([c for c, _ in out]), failures=failures,
                           info={"alive_count": state.alive_count})


# ---------------------------------------------------------------- SCR

def usp_factor(dist: CdrDistribution, p: float = TAIL_PROB) -> float:
    if not dist.sd > 0:
        raise InputError("USP factor needs a positive standard deviation")
    return -dist.quantile(p) / dist.sd


def scr_from_samples(dist: CdrDistribution, p: float = TAIL_PROB, *, t: int = 0, risk: str = "idios",
                     closed_form_sd: float | None = None, qis2: float | None = None) -> ScrReport:
    """SCR as minus the lower empirical ``p``-quantile of the CDR samples."""
    if dist.size * p < 20:
        warnings.warn(f"only {dist.size * p:.1f} samples expected beyond the {p:.2%} quantile",
                      RuntimeWarning, stacklevel=2)
    scr = -dist.quantile(p)
    factor = scr / dist.sd if dist.sd > 0 else float("nan")
    return ScrReport(t, risk, dist.size, dist.mean, dist.sd, dist.skewness, scr, factor,
                     closed_form_sd, qis2, dist.failures)


def idios_report(dist: CdrDistribution, state: CohortState, basis: ValuationBasis,
                 p: float = TAIL_PROB) -> ScrReport:
    """SCR report with the closed-form sd and the QIS2 comparison figure.

    The QIS2 sum at risk is total sums alive at ``t`` times the root mean
    squared sum-at-risk rate.
    """
    q = float(basis.demographic.q2[basis.t])
    l_t = state.alive_count
    eta2 = dist.eta_sq_mean if dist.eta_sq_mean is not None else float("nan")
    closed = math.sqrt(idios_variance_closed_form(l_t, q, raw_moment(state.alive_sums, 2), eta2))
    sar = state.total_sums * math.sqrt(eta2)
    qis2 = qis2_scr(q, l_t, sar) if 0 < q < 1 and l_t > 0 else 0.0
    return scr_from_samples(dist, p, t=basis.t, risk="idios", closed_form_sd=closed, qis2=qis2)

