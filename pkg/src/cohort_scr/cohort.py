"""Cohort of policyholders that differ only in their sums insured."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError

PREMIUM_MODES = ("single", "annual")


@dataclass(frozen=True)
class SumsSpec:
    mean: float = 100_000.0
    cov: float = 2.0
    distribution: str = "lognormal"

    def __post_init__(self):
        if self.mean <= 0 or self.cov < 0:
            raise InputError("sums spec needs mean > 0 and cov >= 0")
        if self.distribution not in ("lognormal", "constant"):
            raise InputError(f"unknown sums distribution {self.distribution!r}")


def lognormal_params(mean: float, cov: float) -> tuple[float, float]:
    """(mu, sigma) of log S for a lognormal with the given mean and CoV."""
    s2 = math.log1p(cov ** 2)
    return math.log(mean) - 0.5 * s2, math.sqrt(s2)


def generate_sums(spec: SumsSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    if size < 1:
        raise InputError("cohort size must be >= 1")
    if spec.distribution == "constant" or spec.cov == 0:
        return np.full(size, float(spec.mean))
    mu, sigma = lognormal_params(spec.mean, spec.cov)
    return rng.lognormal(mu, sigma, size)


def load_sums_csv(path: str | Path) -> np.ndarray:
    """Read a ``PolicyId,Sum`` file; rows keep file order."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"sums file not found: {path}")
    sums = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["PolicyId", "Sum"]:
            raise InputError(f"{path}:1: expected header PolicyId,Sum")
        for row in reader:
            if not row:
                continue
            try:
                value = float(row[1])
            except (IndexError, ValueError):
                raise InputError(f"{path}:{reader.line_num}: malformed row {row!r}") from None
            if not value > 0:
                raise InputError(f"{path}:{reader.line_num}: sums insured must be > 0")
            sums.append(value)
    if not sums:
        raise InputError(f"{path}: no policies")
    return np.array(sums)


@dataclass(frozen=True)
class Cohort:
    age: int
    n: int
    sums: np.ndarray
    premium_mode: str = "single"

    def __post_init__(self):
        sums = np.asarray(self.sums, dtype=float)
        sums.setflags(write=False)
        if sums.ndim != 1 or sums.size < 1:
            raise InputError("cohort needs at least one policyholder")
        if np.any(sums <= 0):
            raise InputError("sums insured must be > 0")
        if self.n < 1:
            raise InputError("policy term must be >= 1")
        if self.premium_mode not in PREMIUM_MODES:
            raise InputError(f"unknown premium mode {self.premium_mode!r}")
        object.__setattr__(self, "sums", sums)

    @property
    def size(self) -> int:
        return self.sums.size

    def initial_state(self) -> "CohortState":
        return CohortState(0, self.sums)


@dataclass(frozen=True)
class CohortState:
    """Surviving sums at time ``t``: ``s_k`` if alive, 0 if dead."""

    t: int
    surviving_sums: np.ndarray

    def __post_init__(self):
        s = np.array(self.surviving_sums, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "surviving_sums", s)

    @property
    def alive(self) -> np.ndarray:
        return self.surviving_sums > 0

    @property
    def alive_count(self) -> int:
        return int(np.count_nonzero(self.surviving_sums))

    @property
    def alive_sums(self) -> np.ndarray:
        return self.surviving_sums[self.alive]

    @property
    def total_sums(self) -> float:
        return float(self.surviving_sums.sum())


def simulate_deaths(state: CohortState, q: float, rng: np.random.Generator) -> tuple[np.ndarray, CohortState]:
    """One year of independent Bernoulli(q) deaths.

    One uniform is drawn per policyholder position, dead or alive, so the
    k-th draw always belongs to the k-th policyholder.
    """
    if not 0 <= q < 1:
        raise InputError("death probability must lie in [0, 1)")
    u = rng.random(state.surviving_sums.size)
    deaths = ((u < q) & state.alive).astype(np.int8)
    return deaths, CohortState(state.t + 1, state.surviving_sums * (1 - deaths))


def death_sums(state: CohortState, indicators: np.ndarray) -> float:
    indicators = np.asarray(indicators)
    if indicators.shape != state.surviving_sums.shape:
        raise InputError("indicator vector does not match cohort size")
    return float(np.dot(state.surviving_sums, indicators))


def raw_moment(sums: np.ndarray, j: int) -> float:
    sums = np.asarray(sums, dtype=float)
    sums = sums[sums > 0]
    if j not in (1, 2, 3, 4):
        raise InputError("raw moment order must be 1..4")
    if sums.size == 0:
        raise InputError("empty cohort")
    return float(np.mean(sums ** j))


def project_state(state: CohortState, q: np.ndarray, until: int, rng: np.random.Generator) -> CohortState:
    """Realise one death history from ``state.t`` up to ``until``."""
    while state.t < until:
        _, state = simulate_deaths(state, float(q[state.t]), rng)
    return state


def _gap_positions(l: int, q: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Positions of Bernoulli(q) successes among ``l`` trials, one row per draw.

    Gaps between successes are geometric; rows are padded with ``l``.
    """
    width = int(l * q + 8.0 * math.sqrt(l * q * (1.0 - q)) + 16)
    pos = np.cumsum(rng.geometric(q, (size, width)), axis=1) - 1
    short = np.flatnonzero(pos[:, -1] < l)
    while short.size:
        more = pos[short, -1:] + np.cumsum(rng.geometric(q, (short.size, width)), axis=1)
        grown = np.full((size, more.shape[1]), l, dtype=pos.dtype)
        grown[short] = more
        pos = np.concatenate([pos, grown], axis=1)
        short = short[more[:, -1] < l]
    return np.minimum(pos, l)


def sample_death_sums(alive_sums: np.ndarray, q: float, size: int,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``size`` draws of (death count D, death sums Z) for one year.

    Each alive policyholder dies independently with probability ``q``.
    Only the deaths are generated, by walking geometric gaps along the
    cohort, so the cost scales with ``l * q`` rather than ``l``.
    """
    alive_sums = np.asarray(alive_sums, dtype=float)
    l = alive_sums.size
    if l == 0 or q == 0:
        return np.zeros(size, dtype=np.int64), np.zeros(size)
    if not 0 < q < 1:
        raise InputError("death probability must lie in [0, 1)")
    pos = _gap_positions(l, q, size, rng)
    padded = np.append(alive_sums, 0.0)
    return (pos < l).sum(axis=1), padded[pos].sum(axis=1)
