"""Run configuration: one versioned JSON document, defaults are the case-study values.

Unknown keys are rejected so that a typo never silently falls back to a
default.  Relative file paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .cohort import PREMIUM_MODES
from .errors import InputError
from .mortality import FORMATS
from .riskengine import ETA_MODES
from .valuation import PRODUCTS

SCHEMA_VERSION = 1
SAMPLE_FORMATS = ("none", "binary", "csv")


@dataclass(frozen=True)
class CohortConfig:
    age: int = 50
    size: int = 10_000
    term: int = 10
    sums_mean: float = 100_000.0
    sums_cov: float = 2.0
    sums_distribution: str = "lognormal"
    sums_file: str | None = None
    premium_mode: str = "single"
    product: str = "endowment"


@dataclass(frozen=True)
class MortalityConfig:
    data_path: str | None = None
    format: str = "rates-csv"
    stress_factor: float = 1.2
    synthetic_exposure: float = 100_000.0
    enrichment_k: str = "central"


@dataclass(frozen=True)
class MarketConfig:
    mean_growth: float = 1.15
    cov_target: float = 1.0
    cov_horizon: float = 10.0
    r: float = 0.02
    i_gar: float = 0.01
    u0: float = 1.0
    equity_at_t: str = "central"


@dataclass(frozen=True)
class SimulationConfig:
    t: tuple[int, ...] = (1, 3, 5, 7)
    n_scenarios: int = 1_000_000
    seed: int = 20190101
    workers: int = 1
    eta_mode: str = "stochastic"


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    samples: str = "none"
    histogram_bins: int = 100


@dataclass(frozen=True)
class RunConfig:
    cohort: CohortConfig = field(default_factory=CohortConfig)
    mortality: MortalityConfig = field(default_factory=MortalityConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["simulation"]["t"] = list(self.simulation.t)
        return d

    def with_overrides(self, **sections) -> "RunConfig":
        """``cfg.with_overrides(simulation={"seed": 3})`` returns a validated copy."""
        out = self
        for name, values in sections.items():
            out = replace(out, **{name: replace(getattr(out, name), **values)})
        validate(out)
        return out


_SECTIONS = {"cohort": CohortConfig, "mortality": MortalityConfig, "market": MarketConfig,
             "simulation": SimulationConfig, "output": OutputConfig}


def _section(cls, raw, name: str):
    if not isinstance(raw, dict):
        raise InputError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise InputError(f"unknown keys in {name!r}: {', '.join(sorted(extra))}")
    values = dict(raw)
    if name == "simulation" and "t" in values:
        t = values["t"]
        values["t"] = tuple(t) if isinstance(t, list) else (t,)
    return cls(**values)


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise InputError(message)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg: RunConfig) -> None:
    c, m, k, s, o = cfg.cohort, cfg.mortality, cfg.market, cfg.simulation, cfg.output
    _check(cfg.schema_version == SCHEMA_VERSION, f"unsupported schema_version {cfg.schema_version!r}")
    _check(_is_int(c.age) and c.age >= 0, "cohort.age must be an integer >= 0")
    _check(_is_int(c.size) and c.size >= 1, "cohort.size must be an integer >= 1")
    _check(_is_int(c.term) and c.term >= 1, "cohort.term must be an integer >= 1")
    _check(c.sums_mean > 0 and c.sums_cov >= 0, "cohort sums need mean > 0 and cov >= 0")
    _check(c.sums_distribution in ("lognormal", "constant"), "cohort.sums_distribution must be lognormal|constant")
    _check(c.premium_mode in PREMIUM_MODES, f"cohort.premium_mode must be one of {PREMIUM_MODES}")
    _check(c.product in PRODUCTS, f"cohort.product must be one of {PRODUCTS}")
    _check(m.format in FORMATS, f"mortality.format must be one of {FORMATS}")
    _check(m.stress_factor > 0, "mortality.stress_factor must be > 0")
    _check(m.synthetic_exposure >= 1, "mortality.synthetic_exposure must be >= 1")
    _check(m.enrichment_k in ("central", "stochastic"), "mortality.enrichment_k must be central|stochastic")
    _check(k.mean_growth > 0 and k.cov_target >= 0 and k.cov_horizon > 0, "market GBM targets out of range")
    _check(k.r > -1 and k.i_gar > -1 and k.u0 > 0, "market rates must be > -1 and u0 > 0")
    _check(k.equity_at_t in ("central", "u0"), "market.equity_at_t must be central|u0")
    _check(len(s.t) > 0 and all(_is_int(t) and 0 <= t < c.term for t in s.t),
           f"simulation.t values must be integers in 0..{c.term - 1}")
    _check(_is_int(s.n_scenarios) and s.n_scenarios >= 1, "simulation.n_scenarios must be >= 1")
    _check(_is_int(s.seed) and 0 <= s.seed < 2 ** 64, "simulation.seed must be a 64-bit unsigned integer")
    _check(_is_int(s.workers) and s.workers >= 1, "simulation.workers must be >= 1")
    _check(s.eta_mode in ETA_MODES, f"simulation.eta_mode must be one of {ETA_MODES}")
    _check(o.samples in SAMPLE_FORMATS, f"output.samples must be one of {SAMPLE_FORMATS}")
    _check(_is_int(o.histogram_bins) and o.histogram_bins >= 0, "output.histogram_bins must be >= 0")
    for label, path in (("mortality.data_path", m.data_path), ("cohort.sums_file", c.sums_file)):
        if path is not None:
            _check(Path(path).is_file(), f"{label} not found: {path}")


def _resolve(path: str | None, base_dir: Path) -> str | None:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (base_dir / p))


def config_from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    raw = dict(raw)
    version = raw.pop("schema_version", SCHEMA_VERSION)
    extra = set(raw) - set(_SECTIONS)
    if extra:
        raise InputError(f"unknown config sections: {', '.join(sorted(extra))}")
    try:
        parts = {name: _section(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()}
    except TypeError as exc:
        raise InputError(f"bad config value: {exc}") from None
    cfg = RunConfig(**parts, schema_version=version)
    if base_dir is not None:
        cfg = replace(cfg,
                      mortality=replace(cfg.mortality, data_path=_resolve(cfg.mortality.data_path, base_dir)),
                      cohort=replace(cfg.cohort, sums_file=_resolve(cfg.cohort.sums_file, base_dir)))
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    """Read and validate a config file; ``None`` gives the defaults."""
    if path is None:
        cfg = RunConfig()
        validate(cfg)
        return cfg
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    return config_from_dict(raw, path.parent)
