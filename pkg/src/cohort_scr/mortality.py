"""Mortality data ingestion and the Lee-Carter projection model.

The model is log m[x, t] = a[x] + b[x] * k[t], fitted by the classical SVD
route and normalised so that sum(b) = 1 and sum(k) = 0.  The period index
follows a random walk with drift.  Central death rates are turned into
annual death probabilities with q = 1 - exp(-m).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InputError

logger = logging.getLogger(__name__)

RATE_FLOOR = 1e-10
Q_CEILING = 1.0 - 1e-9
DEFAULT_SYNTHETIC_EXPOSURE = 100_000.0

FORMATS = ("rates-csv", "deaths-exposures-csv")
_HEADERS = {
    "rates-csv": ("Year", "Age", "mx"),
    "deaths-exposures-csv": ("Year", "Age", "Deaths", "Exposure"),
}


@dataclass(frozen=True)
class MortalityDataset:
    """Central death rates on a unit-step (age, year) grid.

    ``rates`` has shape ``(len(ages), len(years))``.  ``deaths`` and
    ``exposures`` are optional count matrices of the same shape.
    """

    years: np.ndarray
    ages: np.ndarray
    rates: np.ndarray
    deaths: np.ndarray | None = None
    exposures: np.ndarray | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        years = np.asarray(self.years, dtype=np.int64)
        ages = np.asarray(self.ages, dtype=np.int64)
        rates = np.asarray(self.rates, dtype=float)
        if years.size == 0 or ages.size == 0:
            raise InputError("empty dataset")
        if np.any(np.diff(years) != 1):
            raise InputError("non-contiguous years")
        if np.any(np.diff(ages) != 1):
            raise InputError("non-contiguous ages")
        if rates.shape != (ages.size, years.size):
            raise InputError(f"rates shape {rates.shape} != ({ages.size}, {years.size})")
        if not np.all(np.isfinite(rates)) or np.any(rates <= 0):
            raise InputError("rates must be finite and strictly positive")
        for name in ("deaths", "exposures"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != rates.shape or np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise InputError(f"{name} must be a finite non-negative matrix shaped like rates")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "rates", rates)

    @property
    def last_year(self) -> int:
        return int(self.years[-1])

    def age_index(self, age: int) -> int:
        i = int(age) - int(self.ages[0])
        if not 0 <= i < self.ages.size:
            raise InputError(f"age {age} outside data range {self.ages[0]}..{self.ages[-1]}")
        return i


def _floor_rates(rates: np.ndarray) -> tuple[np.ndarray, int]:
    bad = ~(rates > RATE_FLOOR)
    n = int(bad.sum())
    if n:
        rates = np.where(bad, RATE_FLOOR, rates)
    return rates, n


def load_mortality_dataset(path: str | Path, format: str = "rates-csv") -> MortalityDataset:
    """Read a long-format mortality CSV (one row per year and age).

    Cells with zero rate (or zero exposure) are floored at ``RATE_FLOOR``;
    their number is stored in ``metadata["floored_cells"]``.
    """
    if format not in FORMATS:
        raise InputError(f"unknown mortality format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.is_file():
        raise InputError(f"mortality file not found: {path}")
    header = _HEADERS[format]
    cells: dict[tuple[int, int], tuple[float, ...]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty dataset") from None
        if tuple(h.strip() for h in first) != header:
            raise InputError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{line}: malformed row (expected {len(header)} fields)")
            try:
                year, age = int(row[0]), int(row[1])
                values = tuple(float(c) for c in row[2:])
            except ValueError:
                raise InputError(f"{path}:{line}: malformed row {row!r}") from None
            if any(not np.isfinite(v) or v < 0 for v in values):
                raise InputError(f"{path}:{line}: negative or non-finite value")
            if (year, age) in cells:
                raise InputError(f"{path}:{line}: duplicate cell year={year} age={age}")
            cells[(year, age)] = values
    if not cells:
        raise InputError(f"{path}: empty dataset")

    years = np.array(sorted({y for y, _ in cells}))
    ages = np.array(sorted({a for _, a in cells}))
    if np.any(np.diff(years) != 1):
        raise InputError(f"{path}: non-contiguous years")
    if np.any(np.diff(ages) != 1):
        raise InputError(f"{path}: non-contiguous ages")
    if len(cells) != years.size * ages.size:
        raise InputError(f"{path}: incomplete grid ({len(cells)} of {years.size * ages.size} cells)")

    width = len(header) - 2
    grid = np.empty((width, ages.size, years.size))
    for (y, a), values in cells.items():
        grid[:, a - ages[0], y - years[0]] = values

    deaths = exposures = None
    if format == "rates-csv":
        rates = grid[0]
    else:
        deaths, exposures = grid[0], grid[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            rates = np.where(exposures > 0, deaths / exposures, 0.0)
    rates, floored = _floor_rates(rates)
    if floored:
        logger.warning("%s: %d zero-rate cells floored at %g", path, floored, RATE_FLOOR)
    return MortalityDataset(years, ages, rates, deaths, exposures,
                            metadata={"source": str(path), "format": format, "floored_cells": floored})


def write_mortality_dataset(data: MortalityDataset, path: str | Path, format: str | None = None) -> None:
    if format is None:
        format = "deaths-exposures-csv" if data.exposures is not None else "rates-csv"
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADERS[format])
        for j, year in enumerate(data.years):
            for i, age in enumerate(data.ages):
                if format == "rates-csv":
                    w.writerow([int(year), int(age), repr(float(data.rates[i, j]))])
                else:
                    w.writerow([int(year), int(age), repr(float(data.deaths[i, j])),
                                repr(float(data.exposures[i, j]))])


@dataclass(frozen=True)
class LeeCarterParams:
    a: np.ndarray
    b: np.ndarray
    k: np.ndarray
    drift: float
    sigma_k: float
    ages: np.ndarray
    years: np.ndarray
    explained_variance: float = float("nan")

    @property
    def last_year(self) -> int:
        return int(self.years[-1])

    def log_rates(self) -> np.ndarray:
        return self.a[:, None] + np.outer(self.b, self.k)

    def age_slice(self, age: int, length: int) -> slice:
        start = int(age) - int(self.ages[0])
        if start < 0 or start + length > self.ages.size:
            raise InputError(f"ages {age}..{age + length - 1} outside fitted range "
                             f"{self.ages[0]}..{self.ages[-1]}")
        return slice(start, start + length)

    def to_dict(self) -> dict:
        return {
            "ages": [int(self.ages[0]), int(self.ages[-1])],
            "years": [int(self.years[0]), int(self.years[-1])],
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "k": self.k.tolist(),
            "drift": float(self.drift),
            "sigma_k": float(self.sigma_k),
            "explained_variance": float(self.explained_variance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LeeCarterParams":
        ages = np.arange(d["ages"][0], d["ages"][1] + 1)
        years = np.arange(d["years"][0], d["years"][1] + 1)
        return cls(np.asarray(d["a"], float), np.asarray(d["b"], float), np.asarray(d["k"], float),
                   float(d["drift"]), float(d["sigma_k"]), ages, years,
                   float(d.get("explained_variance", "nan")))


def _random_walk(k: np.ndarray) -> tuple[float, float]:
    drift = float((k[-1] - k[0]) / (k.size - 1))
    resid = np.diff(k) - drift
    sigma = float(np.std(resid, ddof=1)) if resid.size >= 2 else 0.0
    return drift, sigma


def fit_lee_carter(data: MortalityDataset) -> LeeCarterParams:
    """Fit Lee-Carter by SVD of the row-centred log-rate matrix."""
    if data.ages.size < 2 or data.years.size < 2:
        raise InputError("Lee-Carter needs at least 2 ages and 2 years")
    logm = np.log(data.rates)
    if not np.all(np.isfinite(logm)):
        raise InputError("non-finite log rates")
    a = logm.mean(axis=1)
    centred = logm - a[:, None]
    scale = max(1.0, float(np.linalg.norm(logm)))
    if float(np.linalg.norm(centred)) <= 1e-12 * scale:
        raise InputError("no period variation: centred log-rate matrix is zero")
    u, s, vt = np.linalg.svd(centred, full_matrices=False)
    total = u[:, 0].sum()
    if abs(total) < 1e-12:
        raise InputError("dominant age profile sums to zero; b cannot be normalised")
    b = u[:, 0] / total
    k = s[0] * vt[0] * total
    # remove rounding drift from sum(k) = 0; the fitted surface is unchanged
    kbar = k.mean()
    a = a + b * kbar
    k = k - kbar
    drift, sigma_k = _random_walk(k)
    explained = float(s[0] ** 2 / np.sum(s ** 2))
    return LeeCarterParams(a, b, k, drift, sigma_k, data.ages.copy(), data.years.copy(), explained)


def m_to_q(m: np.ndarray) -> np.ndarray:
    return np.minimum(-np.expm1(-np.asarray(m, dtype=float)), Q_CEILING)


def q_to_m(q: np.ndarray) -> np.ndarray:
    return -np.log1p(-np.asarray(q, dtype=float))


def forecast_q2(params: LeeCarterParams, age: int, horizon: int, mode: str = "central",
                rng: np.random.Generator | None = None, first_year: int | None = None) -> np.ndarray:
    """Death probabilities along the cohort diagonal.

    Entry ``t`` is for age ``age + t`` in calendar year ``first_year + t``
    (``first_year`` defaults to the year after the last fitted year).
    """
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    if mode not in ("central", "stochastic"):
        raise InputError(f"unknown forecast mode {mode!r}")
    sl = params.age_slice(age, horizon)
    last = params.last_year
    first_year = last + 1 if first_year is None else int(first_year)
    steps = first_year + np.arange(horizon) - last
    if np.any(steps < 1):
        raise InputError("forecast years must lie after the last fitted year")
    k_last = params.k[-1]
    if mode == "central" or params.sigma_k == 0.0:
        k = k_last + steps * params.drift
    else:
        if rng is None:
            raise InputError("stochastic forecast needs a random stream")
        innov = params.drift + params.sigma_k * rng.standard_normal(int(steps[-1]))
        k = k_last + np.cumsum(innov)[steps - 1]
    m = np.exp(params.a[sl] + params.b[sl] * k)
    return m_to_q(m)


@dataclass(frozen=True)
class DemographicBasis:
    """Second-order (best estimate) and first-order (pricing) probabilities.

    ``q2[t]`` and ``q1[t]`` are the probabilities of dying in policy year
    ``(t, t+1]`` at age ``cohort_age + t``.
    """

    q2: np.ndarray
    q1: np.ndarray
    cohort_age: int
    base_year: int
    stress_factor: float = 1.0

    def __post_init__(self):
        q2 = np.asarray(self.q2, dtype=float)
        q1 = np.asarray(self.q1, dtype=float)
        if q2.shape != q1.shape or q2.ndim != 1:
            raise InputError("q1 and q2 must be 1-d vectors of equal length")
        if np.any(q2 < 0) or np.any(q2 >= 1) or np.any(q1 < 0) or np.any(q1 >= 1):
            raise InputError("death probabilities must lie in [0, 1)")
        object.__setattr__(self, "q2", q2)
        object.__setattr__(self, "q1", q1)

    @property
    def n(self) -> int:
        return self.q2.size

    @classmethod
    def from_q(cls, q2, stress_factor: float = 1.0, cohort_age: int = 0, base_year: int = 0):
        q2 = np.asarray(q2, dtype=float)
        return cls(q2, stress(q2, stress_factor), cohort_age, base_year, stress_factor)


def stress(q2: np.ndarray, factor: float) -> np.ndarray:
    if factor <= 0:
        raise InputError("stress factor must be > 0")
    return np.minimum(Q_CEILING, factor * np.asarray(q2, dtype=float))


def build_basis(params: LeeCarterParams, age: int, n: int, stress_factor: float = 1.2) -> DemographicBasis:
    q2 = forecast_q2(params, age, n, "central")
    return DemographicBasis(q2, stress(q2, stress_factor), int(age), params.last_year, float(stress_factor))


DeathDraw = Callable[[np.random.Generator, np.ndarray, np.ndarray], np.ndarray]


def _draw_deaths(draw: str | DeathDraw, rng: np.random.Generator, trials: np.ndarray,
                 q: np.ndarray) -> np.ndarray:
    if callable(draw):
        return np.asarray(draw(rng, trials, q), dtype=float)
    if draw == "binomial":
        return rng.binomial(np.asarray(trials).astype(np.int64), q).astype(float)
    if draw == "expected":
        return trials * q
    raise InputError(f"unknown death draw {draw!r}")


def enrichment_exposure(data: MortalityDataset, synthetic_exposure: float | None) -> np.ndarray:
    """Integer trial counts per age for the simulated extra year."""
    if data.exposures is not None:
        expo = data.exposures[:, -1]
    elif synthetic_exposure is not None:
        expo = np.full(data.ages.size, float(synthetic_exposure))
    else:
        raise InputError("dataset has no exposures and no synthetic exposure is configured")
    trials = np.rint(expo)
    if np.any(trials < 1):
        raise InputError("enrichment exposures must be >= 1 at every age")
    return trials


def one_year_ahead_q(params: LeeCarterParams, k_next: float | np.ndarray) -> np.ndarray:
    k_next = np.asarray(k_next, dtype=float)
    return m_to_q(np.exp(params.a + params.b * k_next[..., None]))


def rates_from_deaths(deaths: np.ndarray, trials: np.ndarray) -> np.ndarray:
    """Central rate implied by binomial deaths: inverse of q = 1 - exp(-m)."""
    frac = np.clip(deaths / trials, 0.0, Q_CEILING)
    return np.maximum(q_to_m(frac), RATE_FLOOR)


def enrich_and_refit(params: LeeCarterParams, data: MortalityDataset, rng: np.random.Generator, *,
                     synthetic_exposure: float | None = DEFAULT_SYNTHETIC_EXPOSURE,
                     draw: str | DeathDraw = "binomial", k_mode: str = "central",
                     return_data: bool = False):
    """Append one simulated calendar year to ``data`` and refit.

    Deaths at every age are Binomial(round(E_x), q_x) with q_x the
    one-year-ahead forecast; ``k_mode="stochastic"`` also draws the period
    index innovation.  ``draw`` may be ``"binomial"``, ``"expected"`` or a
    callable ``(rng, trials, q) -> deaths``.
    """
    trials = enrichment_exposure(data, synthetic_exposure)
    k_next = params.k[-1] + params.drift
    if k_mode == "stochastic":
        k_next = k_next + params.sigma_k * rng.standard_normal()
    elif k_mode != "central":
        raise InputError(f"unknown k_mode {k_mode!r}")
    q_next = one_year_ahead_q(params, k_next)
    deaths = _draw_deaths(draw, rng, trials, q_next)
    col = rates_from_deaths(deaths, trials)
    enlarged = MortalityDataset(
        np.append(data.years, data.last_year + 1),
        data.ages,
        np.column_stack([data.rates, col]),
        None if data.deaths is None else np.column_stack([data.deaths, deaths]),
        None if data.exposures is None else np.column_stack([data.exposures, trials]),
        metadata={**data.metadata, "enriched_years": data.metadata.get("enriched_years", 0) + 1},
    )
    refit = fit_lee_carter(enlarged)
    return (refit, enlarged) if return_data else refit


class RefitKernel:
    """Batched enrich-and-refit for many scenarios at once.

    Equivalent to calling :func:`enrich_and_refit` per scenario, but only
    the quantities the forecast needs (a, b, first and last k) are formed.
    The dominant eigenvector of the centred Gram matrix is found by power
    iteration warm-started at the current ``b``; rows that do not converge
    fall back to a dense eigendecomposition.
    """

    def __init__(self, params: LeeCarterParams, data: MortalityDataset, *,
                 synthetic_exposure: float | None = DEFAULT_SYNTHETIC_EXPOSURE,
                 k_mode: str = "central", tol: float = 1e-13, max_iter: int = 2000):
        if k_mode not in ("central", "stochastic"):
            raise InputError(f"unknown k_mode {k_mode!r}")
        self.params = params
        self.k_mode = k_mode
        self.trials = enrichment_exposure(data, synthetic_exposure)
        self.n_years = data.years.size + 1
        self.last_year = data.last_year + 1
        # shift rows by the old a to limit cancellation in the Gram matrix
        self.shift = params.a.copy()
        logm = np.log(data.rates) - self.shift[:, None]
        self.first_col = logm[:, 0].copy()
        self.row_sum = logm.sum(axis=1)
        self.gram0 = logm @ logm.T
        u0 = params.b / np.linalg.norm(params.b)
        self.u0 = u0
        self.tol = tol
        self.max_iter = max_iter

    def draw_log_columns(self, rng: np.random.Generator, size: int,
                         draw: str | DeathDraw = "binomial") -> np.ndarray:
        p = self.params
        k_next = np.full(size, p.k[-1] + p.drift)
        if self.k_mode == "stochastic":
            k_next = k_next + p.sigma_k * rng.standard_normal(size)
        q_next = one_year_ahead_q(p, k_next)
        deaths = _draw_deaths(draw, rng, np.broadcast_to(self.trials, q_next.shape), q_next)
        return np.log(rates_from_deaths(deaths, self.trials))

    def refit(self, log_cols: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(a, b, k_last, drift, ok)`` for each appended column."""
        col = np.atleast_2d(log_cols) - self.shift
        h = col.shape[0]
        n = self.n_years
        abar = (self.row_sum + col) / n

        def apply(v, c, m):
            return (v @ self.gram0 + c * np.einsum("ij,ij->i", c, v)[:, None]
                    - n * m * np.einsum("ij,ij->i", m, v)[:, None])

        v = np.broadcast_to(self.u0, col.shape).copy()
        done = np.zeros(h, dtype=bool)
        for _ in range(self.max_iter):
            idx = np.flatnonzero(~done)
            if idx.size == 0:
                break
            if idx.size == h:
                w = apply(v, col, abar)
            else:
                w = apply(v[idx], col[idx], abar[idx])
            w /= np.linalg.norm(w, axis=1, keepdims=True)
            delta = np.linalg.norm(w - v[idx], axis=1)
            v[idx] = w
            done[idx[delta < self.tol]] = True

        ok = np.isfinite(v).all(axis=1)
        for i in np.flatnonzero(~done | ~ok):
            g = self.gram0 + np.outer(col[i], col[i]) - n * np.outer(abar[i], abar[i])
            try:
                _, vecs = np.linalg.eigh(g)
                v[i] = vecs[:, -1]
                ok[i] = np.isfinite(v[i]).all()
            except np.linalg.LinAlgError:
                ok[i] = False

        total = v.sum(axis=1)
        ok &= np.abs(total) > 1e-12
        total = np.where(ok, total, 1.0)
        b = v / total[:, None]
        bb = np.einsum("ij,ij->i", b, b)
        k_first = np.einsum("ij,ij->i", self.first_col - abar, b) / bb
        k_last = np.einsum("ij,ij->i", col - abar, b) / bb
        # same k-centring as fit_lee_carter: the row means already centre k
        a = abar + self.shift
        drift = (k_last - k_first) / (n - 1)
        return a, b, k_last, drift, ok

    def forecast(self, a: np.ndarray, b: np.ndarray, k_last: np.ndarray, drift: np.ndarray,
                 age: int, years: np.ndarray) -> np.ndarray:
        """Central forecast q for ages ``age + j`` in calendar ``years[j]``."""
        years = np.asarray(years)
        sl = self.params.age_slice(age, years.size)
        steps = years - self.last_year
        k = k_last[:, None] + steps[None, :] * drift[:, None]
        return m_to_q(np.exp(a[:, sl] + b[:, sl] * k))


def synthetic_dataset(seed: int = 20190101, years: tuple[int, int] = (1872, 2019),
                      ages: tuple[int, int] = (20, 100)) -> MortalityDataset:
    """Italy-like deaths/exposures generated from a noisy Lee-Carter surface.

    Level roughly matches recent Italian adult mortality (m50 near 0.25%,
    Gompertz slope near 0.1), with a century and a half of improvement and
    Poisson death counts on a population growing from 17 to 50 million.
    """
    rng = np.random.default_rng(seed)
    yrs = np.arange(years[0], years[1] + 1)
    ags = np.arange(ages[0], ages[1] + 1)
    x = ags - ags[0]
    b = 1.5 - x / (ags.size - 1)
    b = b / b.sum()
    k = np.concatenate([[0.0], np.cumsum(-1.03 + 2.0 * rng.standard_normal(yrs.size - 1))])
    m_last = 0.0002 + 0.0025 * np.exp(0.097 * (ags - 50))
    a = np.log(m_last) - b * k[-1]
    m = np.exp(a[:, None] + np.outer(b, k))
    pop = np.linspace(17e6, 50e6, yrs.size)
    weight = np.exp(-0.0006 * (ags - 20.0) ** 2)
    exposures = np.rint(np.outer(weight / weight.sum(), pop))
    deaths = rng.poisson(exposures * m).astype(float)
    rates, floored = _floor_rates(deaths / exposures)
    return MortalityDataset(yrs, ags, rates, deaths, exposures,
                            metadata={"source": f"synthetic(seed={seed})", "format": "deaths-exposures-csv",
                                      "floored_cells": floored})
